"""mine -> enrich -> filter -> profile -> generate -> validate/revise."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from agents.exceptions import BackendError
from benchgen.discoverability import filter_under_radar, profile_discoverability
from benchgen.exceptions import LeakageDetected, Unresolvable
from benchgen.querygen import generate_query
from benchgen.revise import validate_and_revise
from benchgen.schedule import schedule_tuples
from scout.exceptions import InvariantViolation
from scout.stores import GlobalAssetStore
from utils.jsonl import write_json, write_lines
from utils.text import normalize_name

logger = logging.getLogger(__name__)


def enrichment_filter(records):
    """(kept, [(record, reason), ...]) 가짜 자산, 비활성/승인된 프로그램, 이미 널리 알려진 프로그램을 뺌"""
    kept, dropped = [], []
    for record in records:
        if not record.is_valid_drug:
            dropped.append((record, 'not a drug asset'))
        elif not record.is_active:
            dropped.append((record, 'inactive'))
        elif record.approved_geographies:
            dropped.append((record, 'approved'))
        elif record.amplification_flags:
            dropped.append((record, f'globally amplified ({", ".join(sorted(map(str, record.amplification_flags)))})'))
        else:
            kept.append(record)
    return kept, dropped


@dataclass
class BenchmarkBuild:
    entries: list = field(default_factory=list)
    rejected: list = field(default_factory=list)  # {'asset_name', 'stage', 'reason'}
    stats: dict = field(default_factory=dict)


class BenchmarkPipeline:

    def __init__(self, regions, groups, miner, enricher, serp, generator, validator,
                 cycles=1, fraction=None, searches=None, max_rounds=None, retries=None, seed=0, max_workers=None):
        self.regions = list(regions)
        self.groups = list(groups)
        self.miner = miner
        self.enricher = enricher
        self.serp = serp
        self.generator = generator
        self.validator = validator
        self.cycles = cycles
        self.fraction = fraction
        self.searches = searches
        self.max_rounds = max_rounds
        self.retries = retries
        self.seed = seed
        self.max_workers = max_workers or settings.SCOUT['MAX_WORKERS']

    def run(self):
        build = BenchmarkBuild()
        mentions = self.mine()
        records, mined_from = self.enrich(mentions, build)
        kept, dropped = enrichment_filter(records)
        build.rejected += [self.rejection(record, 'enrichment', reason) for record, reason in dropped]

        profiles = {record.canonical_name: profile_discoverability(record, self.serp, self.searches) for record in kept}
        kept, visible = filter_under_radar(kept, profiles, self.fraction, self.seed)
        build.rejected += [self.rejection(record, 'discoverability', 'discoverable in English') for record in visible]

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            outcomes = list(executor.map(self.query_for, kept))

        for record, outcome in zip(kept, outcomes):
            if isinstance(outcome, str):
                build.rejected.append(self.rejection(record, 'query', outcome))
                continue
            query_id = f'b{len(build.entries) + 1:04d}'
            build.entries.append(self.entry(query_id, outcome, profiles[record.canonical_name], mined_from))

        build.stats = {
            'tuples': len(self.tuples()),
            'mentions': len(mentions),
            'enriched': len(records),
            'under_radar': len(kept),
            'benchmark': len(build.entries),
            'rejected': len(build.rejected),
        }
        logger.info('benchgen: %s', ', '.join(f'{key}={value}' for key, value in build.stats.items()))
        return build

    def tuples(self):
        return list(schedule_tuples(self.regions, self.cycles))

    def mine(self):
        """튜플별로 병렬 실행, 결과는 스케줄 순서로 합치고 이름 기준으로 중복 제거"""
        tuples = self.tuples()
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            batches = list(executor.map(self._mine_one, tuples))
        mentions = {}
        for batch in batches:
            for mention in batch:
                mentions.setdefault(normalize_name(mention.name), mention)
        return list(mentions.values())

    def _mine_one(self, mining_tuple):
        try:
            return self.miner.mine(mining_tuple)
        except BackendError as e:
            logger.warning('mining %s failed: %s', mining_tuple, e)
            return []

    def enrich(self, mentions, build):
        store = GlobalAssetStore()
        mined_from = {}
        for mention in mentions:
            try:
                record = self.enricher.enrich(mention)
            except BackendError as e:
                logger.warning('enriching %s failed: %s', mention.name, e)
                continue
            if record is None:
                build.rejected.append({'asset_name': mention.name, 'stage': 'enrichment', 'reason': 'not found'})
                continue
            try:
                registration = store.register_asset(record)
            except InvariantViolation as e:
                logger.warning('%s: %s', mention.name, e)
                continue
            mined_from.setdefault(registration.canonical_name, mention)
        return store.records(), mined_from

    def query_for(self, record):
        """확정된 Confirmed 또는 실패 이유 문자열"""
        try:
            generated = generate_query(record, self.groups, self.generator, self.seed, self.retries)
            return validate_and_revise(generated, record, self.validator, self.generator, self.max_rounds)
        except (LeakageDetected, Unresolvable, BackendError, ValueError) as e:
            logger.info('%s dropped: %s', record.canonical_name, e)
            return str(e)

    @staticmethod
    def rejection(record, stage, reason):
        return {'asset_name': record.canonical_name, 'stage': stage, 'reason': reason}

    @staticmethod
    def entry(query_id, confirmed, profile, mined_from):
        record = confirmed.record
        mention = mined_from.get(record.canonical_name)
        entry = {
            'example_id': f'{query_id}-1',
            'query_id': query_id,
            'query': confirmed.generated.text,
            'asset_name': record.canonical_name,
            'aliases': sorted(record.aliases),
            'origin_language': record.origin_language,
            'rounds': confirmed.rounds,
            'discoverability': profile.to_record(),
            'mined_from': str(mention.mined_by) if mention else '',
            'announcement_url': mention.url if mention else '',
            'provenance': [
                {'claim': item.claim, 'source_url': item.source_url, 'quote': item.quote}
                for item in record.provenance
            ],
        }
        entry.update(confirmed.generated.to_record())
        return entry


def write_benchmark(directory, build):
    directory = Path(directory)
    write_lines(directory / 'benchmark.jsonl', 'example', build.entries)
    write_lines(directory / 'rejected.jsonl', 'rejected', build.rejected)
    write_json(directory / 'stats.json', build.stats)
    return directory
