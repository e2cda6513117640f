import re
from dataclasses import dataclass, field, fields, replace

from django.db import models

from scout.exceptions import InvariantViolation
from utils.text import normalize_name

# 'Phase 1', 'phase II', 'Phase 1/2' 처럼 임상 단계를 나타내는 표현
CLINICAL_PHASE = re.compile(r'phase\s*(?:[1-4]|i{1,3}|iv)\b', re.IGNORECASE)


class StageClass(models.TextChoices):
    PRECLINICAL = 'preclinical', 'Preclinical'
    CLINICAL = 'clinical', 'Clinical'


class Amplification(models.TextChoices):
    MAJOR_US_TRADE_PRESS = 'major_us_trade_press', 'Major US trade press'
    LARGE_PHARMA_DEAL = 'large_pharma_deal', 'Large pharma deal'


@dataclass(frozen=True)
class Provenance:
    claim: str  # 근거가 붙는 속성 이름 (modality, targets ...)
    source_url: str
    quote: str


@dataclass
class TrialRecord:
    indication: str
    phase: str
    regimen: str = ''
    efficacy_data: str = ''
    safety_data: str = ''
    line_of_therapy: str = ''
    biomarkers: list = field(default_factory=list)
    site_countries: list = field(default_factory=list)
    endpoints: list = field(default_factory=list)

    def validate(self):
        if not str(self.indication).strip() or not str(self.phase).strip():
            raise InvariantViolation('trial needs an indication and a phase')


# provenance 가 있어야 하는 속성들
ATTRIBUTE_FIELDS = (
    'stage_detail', 'developers', 'modality', 'targets', 'moa_short', 'moa_detailed',
    'indications', 'patents', 'trials', 'approved_geographies', 'regulatory_labels',
)


@dataclass
class AssetRecord:
    canonical_name: str
    aliases: set
    origin_language: str = 'en'
    is_valid_drug: bool = True
    is_active: bool = True
    stage_class: str = StageClass.PRECLINICAL
    stage_detail: str = ''
    developers: list = field(default_factory=list)
    modality: str = ''
    targets: list = field(default_factory=list)
    moa_short: str = ''
    moa_detailed: str = ''
    indications: list = field(default_factory=list)
    patents: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    approved_geographies: list = field(default_factory=list)
    regulatory_labels: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    amplification_flags: set = field(default_factory=set)

    def __str__(self):
        return self.canonical_name

    @classmethod
    def from_attributes(cls, canonical_name, aliases, attributes, provenance, origin_language='en'):
        """근거(provenance)가 있는 속성만 골라서 레코드를 만듦"""
        cited = {item.claim for item in provenance}
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for name, value in (attributes or {}).items():
            if name not in known or name in ('canonical_name', 'aliases', 'provenance'):
                continue
            if name in ATTRIBUTE_FIELDS and name not in cited:
                continue
            if name == 'trials':
                value = [item if isinstance(item, TrialRecord) else TrialRecord(**item) for item in value]
            kwargs[name] = value
        kwargs.setdefault('origin_language', origin_language)
        return cls(
            canonical_name=canonical_name,
            aliases=set(aliases) | {canonical_name},
            provenance=list(provenance),
            **kwargs,
        )

    def populated_attributes(self):
        return [name for name in ATTRIBUTE_FIELDS if getattr(self, name)]

    def validate(self):
        if not self.canonical_name or not self.canonical_name.strip():
            raise InvariantViolation('canonical_name is empty')
        if self.canonical_name not in self.aliases:
            raise InvariantViolation(f'{self.canonical_name}: canonical_name missing from aliases')
        cited = {item.claim for item in self.provenance}
        missing = [name for name in self.populated_attributes() if name not in cited]
        if missing:
            raise InvariantViolation(f'{self.canonical_name}: no provenance for {", ".join(missing)}')
        if self.stage_class == StageClass.CLINICAL:
            if not self.trials and not CLINICAL_PHASE.search(self.stage_detail):
                raise InvariantViolation(f'{self.canonical_name}: clinical stage without a trial or phase')
        for trial in self.trials:
            trial.validate()
        return self

    def merged_with(self, other):
        """alias 와 provenance 만 합친 새 레코드 (나머지 속성은 먼저 등록된 쪽 유지)"""
        provenance = list(self.provenance)
        provenance.extend(item for item in other.provenance if item not in self.provenance)
        return replace(self, aliases=self.aliases | other.aliases, provenance=provenance)

    def to_record(self):
        return {
            'canonical_name': self.canonical_name,
            'aliases': sorted(self.aliases),
            'origin_language': self.origin_language,
            'is_valid_drug': self.is_valid_drug,
            'is_active': self.is_active,
            'stage_class': str(self.stage_class),
            'stage_detail': self.stage_detail,
            'developers': list(self.developers),
            'modality': self.modality,
            'targets': list(self.targets),
            'moa_short': self.moa_short,
            'moa_detailed': self.moa_detailed,
            'indications': list(self.indications),
            'patents': list(self.patents),
            'trials': [vars(trial).copy() for trial in self.trials],
            'approved_geographies': list(self.approved_geographies),
            'regulatory_labels': list(self.regulatory_labels),
            'provenance': [
                {'claim': item.claim, 'source_url': item.source_url, 'quote': item.quote}
                for item in self.provenance
            ],
            'amplification_flags': sorted(str(flag) for flag in self.amplification_flags),
        }

    @classmethod
    def from_record(cls, record):
        data = dict(record)
        data['aliases'] = set(data.get('aliases', []))
        data['amplification_flags'] = set(data.get('amplification_flags', []))
        data['trials'] = [TrialRecord(**trial) for trial in data.get('trials', [])]
        data['provenance'] = [Provenance(**item) for item in data.get('provenance', [])]
        return cls(**data)


@dataclass(frozen=True)
class Candidate:
    raw_name: str
    source_url: str = ''
    discovered_by_node: int = 0
    discovered_language: str = 'en'
    epoch: int = 1

    def __post_init__(self):
        if not self.raw_name or not self.raw_name.strip():
            raise InvariantViolation('candidate raw_name is empty')
        if self.epoch < 1:
            raise InvariantViolation(f'candidate epoch must be >= 1, got {self.epoch}')

    @property
    def key(self):
        return normalize_name(self.raw_name)

    def to_record(self):
        return {
            'raw_name': self.raw_name,
            'source_url': self.source_url,
            'node': self.discovered_by_node,
            'language': self.discovered_language,
            'epoch': self.epoch,
        }


@dataclass(frozen=True)
class QueryEvidence:
    query_text: str
    language: str
    node: int
    epoch: int
    seq: int = 0


@dataclass(frozen=True)
class DomainEvidence:
    domain: str
    language: str
    node: int
    epoch: int
    seq: int = 0


class DedupMode(models.TextChoices):
    LIGHT = 'light', 'Light (batched)'
    HEAVY = 'heavy', 'Heavy (per item)'


class Ablation(models.TextChoices):
    NONE = 'none', 'Tree agent'
    FLAT = 'flat', 'No tree, single language'
    LANG_FREE = 'lang-free', 'Tree agent, single language'
    SEQUENTIAL = 'sequential', 'Repeat the raw query'


def asset_from_verdict(candidate, verdict):
    """검증 결과의 정규화 속성으로 AssetRecord 를 만듦 (근거 없는 속성은 버림)"""
    canonical = verdict.canonical_name or candidate.raw_name.strip()
    aliases = {candidate.raw_name.strip(), canonical, *verdict.aliases}
    return AssetRecord.from_attributes(
        canonical,
        aliases,
        verdict.normalized_attributes,
        verdict.citations,
        origin_language=candidate.discovered_language,
    )
