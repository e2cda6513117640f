"""Round-robin schedule over (region, language, source, stage) mining tuples."""
from dataclasses import dataclass
from itertools import count
from pathlib import Path

from django.conf import settings

from scout.models import StageClass
from utils.jsonl import read_json


@dataclass(frozen=True)
class Source:
    name: str
    language: str


@dataclass(frozen=True)
class Region:
    region: str  # 'cn', 'cis' ...
    label: str
    sources: tuple  # (Source, ...)

    def __post_init__(self):
        if not self.sources:
            raise ValueError(f'region {self.region} has no curated sources')

    @property
    def languages(self):
        return tuple(dict.fromkeys(source.language for source in self.sources))


@dataclass(frozen=True)
class MiningTuple:
    region: str
    language: str
    source: str
    stage: str

    def __post_init__(self):
        if self.stage not in StageClass.values:
            raise ValueError(f'stage must be one of {StageClass.values}, got {self.stage!r}')

    def __str__(self):
        return f'<{self.region}, {self.language}, {self.source}, {self.stage}>'


def load_regions(path=None):
    path = Path(path or Path(settings.BENCHGEN['FIXTURE_DIR']) / 'regions.json')
    return [
        Region(
            region=item['region'],
            label=item.get('label', item['region']),
            sources=tuple(Source(source['name'], source['language']) for source in item['sources']),
        )
        for item in read_json(path)
    ]


def region_tuples(region):
    return [
        MiningTuple(region.region, source.language, source.name, stage)
        for source in region.sources
        for stage in StageClass.values
    ]


def cycle_length(regions):
    return sum(len(region_tuples(region)) for region in regions)


def one_cycle(regions):
    """지역을 돌아가며 하나씩: 1번 지역의 첫 조합, 2번 지역의 첫 조합, ... 다음 라운드"""
    queues = [region_tuples(region) for region in regions]
    for depth in count():
        emitted = False
        for queue in queues:
            if depth < len(queue):
                emitted = True
                yield queue[depth]
        if not emitted:
            return


def schedule_tuples(regions, cycles=None):
    """결정적인 순환 iterator. cycles=None 이면 끝없이 반복"""
    regions = list(regions)
    if not regions:
        raise ValueError('the region fixture is empty')
    rounds = count() if cycles is None else range(cycles)
    for _ in rounds:
        yield from one_cycle(regions)


def is_curated(regions, mining_tuple):
    for region in regions:
        if region.region == mining_tuple.region:
            return Source(mining_tuple.source, mining_tuple.language) in region.sources
    return False
