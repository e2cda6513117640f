"""Seeded synthetic universe of drug assets and lookalike entities.

Every entity carries directive-addressable attributes and a per-language
discoverability weight. The universe is immutable once generated and is a
pure function of its ``UniverseSpec``.
"""
import random
from dataclasses import dataclass, field
from pathlib import Path

from django.conf import settings

from scout.models import Amplification, AssetRecord, Provenance, StageClass
from simworld.query import SimQuery
from utils.jsonl import dumps_record, read_json, read_lines
from utils.text import normalize_name

MODALITIES = ('small-molecule', 'antibody', 'bispecific', 'adc', 'sirna', 'cell-therapy')
MODALITY_WEIGHTS = (30, 25, 15, 12, 10, 8)
TARGETS = ('pd-1', 'her2', 'egfr', 'kras', 'cldn18', 'tshr', 'lat1', 'il-17')
INDICATIONS = ('nsclc', 'gastric-cancer', 'breast-cancer', 'hepatitis-b', 'psoriasis', 'dmd')
STAGES = (StageClass.PRECLINICAL.value, StageClass.CLINICAL.value)

LANGUAGE_REGIONS = {
    'en': 'us', 'zh': 'cn', 'ja': 'jp', 'ko': 'kr', 'pt': 'br',
    'de': 'de', 'fr': 'fr', 'es': 'es', 'ru': 'cis', 'uk': 'cis',
}
LOCAL_SUFFIX = {
    'zh': '注射液', 'ja': '製剤', 'ko': '주사', 'pt': ' injetável',
    'de': ' Injektion', 'fr': ' injectable', 'es': ' inyectable', 'ru': ' инъекция', 'uk': ' ін\'єкція',
}
MODALITY_STEM = {
    'small-molecule': 'tinib', 'antibody': 'mab', 'bispecific': 'tamab',
    'adc': 'tecan', 'sirna': 'siran', 'cell-therapy': 'leucel',
}
SYLLABLES = ('zo', 'ra', 'li', 've', 'ta', 'ni', 'mo', 'ku', 'se', 'do', 'fa', 'gi', 'pe', 'xu')
LOOKALIKE_KINDS = ('Platform', 'Initiative', 'Technology')
DEVELOPERS = ('Hengrui', 'Akeso', 'Daiichi', 'Hanmi', 'Innovent', 'Zai Lab', 'Celltrion', 'Ono', 'Eurofarma')


@dataclass(frozen=True)
class UniverseSpec:
    seed: int = 7
    asset_count: int = 200
    languages: tuple = ('en', 'zh', 'ja', 'ko')
    distractor_count: int = 40
    alias_collision_rate: float = 0.0

    def __post_init__(self):
        if self.asset_count < 0 or self.distractor_count < 0:
            raise ValueError('asset_count and distractor_count must be >= 0')
        if not self.languages:
            raise ValueError('a universe needs at least one language')
        unknown = [lang for lang in self.languages if lang not in LANGUAGE_REGIONS]
        if unknown:
            raise ValueError(f'unsupported languages: {", ".join(unknown)}')
        if not 0.0 <= self.alias_collision_rate <= 1.0:
            raise ValueError('alias_collision_rate must be within [0, 1]')

    def to_record(self):
        return {
            'seed': self.seed,
            'asset_count': self.asset_count,
            'languages': list(self.languages),
            'distractor_count': self.distractor_count,
            'alias_collision_rate': self.alias_collision_rate,
        }


@dataclass(frozen=True)
class SimEntity:
    id: int
    canonical_name: str
    aliases: tuple
    is_valid_drug: bool
    modality: str
    target: str
    indication: str
    stage: str
    region: str
    origin_language: str
    developer: str
    amplified: bool
    visibility: tuple = field(default=())  # ((language, weight), ...)

    def attribute(self, name):
        if name == 'origin':
            return self.origin_language
        return getattr(self, name)

    def weight(self, language):
        return dict(self.visibility).get(language, 0.0)

    def visible_in(self, language, threshold):
        return self.weight(language) >= threshold

    def name_in(self, language):
        """해당 언어 뉴스에서 쓰일 이름 (현지 이름이 있으면 현지 이름)"""
        if language == self.origin_language and language in LOCAL_SUFFIX:
            for alias in self.aliases:
                if alias.endswith(LOCAL_SUFFIX[language]):
                    return alias
        return self.canonical_name

    def source_url(self, language):
        return f'https://{self.region}.news-{language}.sim/{self.id}'

    @property
    def stage_detail(self):
        return f'Phase {1 + self.id % 3}' if self.stage == StageClass.CLINICAL else 'IND-enabling'

    def attributes(self):
        """검증 에이전트가 정규화해서 돌려주는 속성들"""
        attributes = {
            'origin_language': self.origin_language,
            'is_valid_drug': self.is_valid_drug,
            'stage_class': self.stage,
            'stage_detail': self.stage_detail,
            'modality': self.modality,
            'targets': [self.target],
            'indications': [self.indication],
            'developers': [self.developer],
        }
        if self.stage == StageClass.CLINICAL:
            attributes['trials'] = [
                {'indication': self.indication, 'phase': self.stage_detail, 'site_countries': [self.region]},
            ]
        if self.amplified and self.origin_language != 'en':
            attributes['amplification_flags'] = {Amplification.MAJOR_US_TRADE_PRESS.value}
        return attributes

    def citations(self):
        url = self.source_url(self.origin_language)
        claims = ('stage_detail', 'modality', 'targets', 'indications', 'developers')
        citations = [Provenance(claim, url, f'{self.canonical_name} {claim}: {self.describe(claim)}') for claim in claims]
        if self.stage == StageClass.CLINICAL:
            citations.append(Provenance('trials', url, f'{self.canonical_name} {self.stage_detail} in {self.indication}'))
        return citations

    def describe(self, claim):
        return {
            'stage_detail': self.stage_detail,
            'modality': self.modality,
            'targets': self.target,
            'indications': self.indication,
            'developers': self.developer,
        }[claim]

    def to_asset_record(self):
        return AssetRecord.from_attributes(
            self.canonical_name, self.aliases, self.attributes(), self.citations(),
            origin_language=self.origin_language,
        )

    def to_record(self):
        return {
            'id': self.id,
            'canonical_name': self.canonical_name,
            'aliases': list(self.aliases),
            'is_valid_drug': self.is_valid_drug,
            'modality': self.modality,
            'target': self.target,
            'indication': self.indication,
            'stage': self.stage,
            'region': self.region,
            'origin_language': self.origin_language,
            'developer': self.developer,
            'amplified': self.amplified,
            'visibility': {lang: round(weight, 6) for lang, weight in self.visibility},
        }


class Universe:

    def __init__(self, spec, entities):
        self.spec = spec
        self.entities = tuple(entities)
        self.assets = tuple(e for e in self.entities if e.is_valid_drug)
        self.lookalikes = tuple(e for e in self.entities if not e.is_valid_drug)
        self._by_id = {e.id: e for e in self.entities}
        self.alias_index = {}
        for entity in self.entities:
            for alias in entity.aliases:
                self.alias_index.setdefault(normalize_name(alias), []).append(entity.id)

    def __len__(self):
        return len(self.entities)

    def get(self, entity_id):
        return self._by_id[entity_id]

    def lookup(self, name):
        """이름(alias 포함)으로 entity 를 찾음. 겹치면 id 가 작은 쪽"""
        ids = self.alias_index.get(normalize_name(name))
        return self._by_id[min(ids)] if ids else None

    def resolve_ids(self, names):
        ids = set()
        for name in names:
            entity = self.lookup(name)
            if entity is not None:
                ids.add(entity.id)
        return ids

    def slice(self, query):
        return [e for e in self.assets if query.matches(e)]

    def to_lines(self):
        lines = [dumps_record('universe', self.spec.to_record())]
        lines += [dumps_record('entity', e.to_record()) for e in self.entities]
        return '\n'.join(lines) + '\n'

    def write(self, path):
        Path(path).write_text(self.to_lines(), encoding='utf-8')


def _visibility(rng, languages, origin, amplified):
    weights = []
    for language in languages:
        if language == origin:
            weight = rng.uniform(0.6, 1.0)
        elif language == 'en':
            weight = rng.uniform(0.5, 1.0) if amplified else rng.uniform(0.0, 0.45)
        else:
            weight = rng.uniform(0.5, 0.9) if rng.random() < 0.1 else rng.uniform(0.0, 0.45)
        weights.append((language, weight))
    return tuple(weights)


def _generic_name(rng, modality, used):
    while True:
        name = rng.choice(SYLLABLES) + rng.choice(SYLLABLES) + rng.choice(SYLLABLES) + MODALITY_STEM[modality]
        if name not in used:
            return name


def generate_universe(spec):
    rng = random.Random(spec.seed)
    languages = tuple(spec.languages)
    used = set()
    borrowable = []
    entities = []

    for i in range(spec.asset_count):
        number = 1000 + i
        prefix = ''.join(rng.choice('ABCDEFGHJKLMNPRSTUVWXYZ') for _ in range(2))
        origin = rng.choice(languages)
        modality = rng.choices(MODALITIES, weights=MODALITY_WEIGHTS)[0]
        amplified = origin == 'en' or rng.random() < 0.3

        canonical = f'{prefix}-{number}'
        aliases = [canonical, f'{prefix.lower()}{number}']
        if origin in LOCAL_SUFFIX:
            aliases.append(f'{prefix}{number}{LOCAL_SUFFIX[origin]}')
        if rng.random() < 0.5:
            aliases.append(_generic_name(rng, modality, used))
        if borrowable and rng.random() < spec.alias_collision_rate:
            aliases.append(rng.choice(borrowable))  # 다른 자산의 alias 를 공유
        used.update(aliases)
        borrowable.extend(aliases[1:])

        entities.append(SimEntity(
            id=i,
            canonical_name=canonical,
            aliases=tuple(dict.fromkeys(aliases)),
            is_valid_drug=True,
            modality=modality,
            target=rng.choice(TARGETS),
            indication=rng.choice(INDICATIONS),
            stage=rng.choice(STAGES),
            region=LANGUAGE_REGIONS[origin],
            origin_language=origin,
            developer=rng.choice(DEVELOPERS),
            amplified=amplified,
            visibility=_visibility(rng, languages, origin, amplified),
        ))

    for j in range(spec.distractor_count):
        entity_id = spec.asset_count + j
        prefix = ''.join(rng.choice('ABCDEFGHJKLMNPRSTUVWXYZ') for _ in range(2))
        origin = rng.choice(languages)
        name = f'{prefix}{entity_id} {rng.choice(LOOKALIKE_KINDS)}'
        entities.append(SimEntity(
            id=entity_id,
            canonical_name=name,
            aliases=(name,),
            is_valid_drug=False,
            modality=rng.choices(MODALITIES, weights=MODALITY_WEIGHTS)[0],
            target=rng.choice(TARGETS),
            indication=rng.choice(INDICATIONS),
            stage=rng.choice(STAGES),
            region=LANGUAGE_REGIONS[origin],
            origin_language=origin,
            developer=rng.choice(DEVELOPERS),
            amplified=False,
            visibility=_visibility(rng, languages, origin, False),
        ))

    return Universe(spec, entities)


def oracle_answer(universe, query):
    """전수 조사로 정답 집합(canonical name)을 구함"""
    if isinstance(query, str):
        query = SimQuery.parse(query)
    return frozenset(e.canonical_name for e in universe.assets if query.matches(e))


def read_universe(path):
    """``Universe.write`` 로 저장한 snapshot 을 다시 읽음"""
    specs = read_lines(path, 'universe')
    if len(specs) != 1:
        raise ValueError(f'{path}: expected one universe line, found {len(specs)}')
    spec = specs[0]
    spec = UniverseSpec(
        seed=spec['seed'],
        asset_count=spec['asset_count'],
        languages=tuple(spec['languages']),
        distractor_count=spec['distractor_count'],
        alias_collision_rate=spec['alias_collision_rate'],
    )
    entities = []
    for record in read_lines(path, 'entity'):
        record['aliases'] = tuple(record['aliases'])
        record['visibility'] = tuple(record['visibility'].items())
        entities.append(SimEntity(**record))
    if len(entities) != spec.asset_count + spec.distractor_count:
        raise ValueError(f'{path}: {len(entities)} entities, spec says {spec.asset_count + spec.distractor_count}')
    return Universe(spec, entities)


@dataclass(frozen=True)
class Fixture:
    name: str
    spec: UniverseSpec
    query: str
    budget: int
    distractor_rate: float
    snapshot: Path | None = None  # 저장된 universe (있으면 이걸 씀)

    def universe(self):
        if self.snapshot is None or not self.snapshot.exists():
            return self.generate()
        universe = read_universe(self.snapshot)
        if universe.spec != self.spec:
            raise ValueError(f'{self.snapshot} was written for {universe.spec}, fixture {self.name} says {self.spec}')
        return universe

    def generate(self):
        return generate_universe(self.spec)


def snapshot_path(path):
    path = Path(path)
    return path.with_name(f'{path.stem}.universe.jsonl')


def load_fixture(name):
    path = Path(name)
    if not path.suffix:
        path = Path(settings.SIMWORLD['FIXTURE_DIR']) / f'{name}.json'
    data = read_json(path)
    spec = UniverseSpec(
        seed=data['seed'],
        asset_count=data['asset_count'],
        languages=tuple(data['languages']),
        distractor_count=data.get('distractor_count', 0),
        alias_collision_rate=data.get('alias_collision_rate', 0.0),
    )
    return Fixture(
        name=path.stem,
        spec=spec,
        query=data.get('query', ''),
        budget=data.get('budget', settings.SIMWORLD['BUDGET']),
        distractor_rate=data.get('distractor_rate', settings.SIMWORLD['DISTRACTOR_RATE']),
        snapshot=snapshot_path(path),
    )
