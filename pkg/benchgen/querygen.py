"""Asset -> query generation.

A query group fixes an intent, a difficulty tier and a template with
bracketed slots. Slots are filled from the asset's enriched attributes at
class level ("antibody-based", "immune checkpoint") and each filled slot
records the constraint it places on an answer, so a scripted validator can
check the pair without reading prose.
"""
import logging
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path

from django.conf import settings
from django.db import models

from benchgen.exceptions import LeakageDetected
from scout.models import StageClass
from utils.jsonl import read_json
from utils.text import normalize_name, squash

logger = logging.getLogger(__name__)

SLOT = re.compile(r'\[([^\]]+)\]')
URL = re.compile(r'https?://\S+')
MIN_SQUASHED_ALIAS = 4


class Intent(models.TextChoices):
    ATTRITION = 'attrition', 'Program attrition and suspended or terminated programs'
    BD_SCREENING = 'bd-screening', 'Business development screening for in-licensing or acquisition'
    INDICATION_LANDSCAPE = 'indication-landscape', 'Indication landscape mapping'
    TARGET_FIRST = 'target-first', 'Target-first landscape mapping'
    PRECISION_ONCOLOGY = 'precision-oncology', 'Precision oncology sub-landscapes'
    WHITE_SPACE = 'white-space', 'White-space and low-competition target hunting'
    GEOGRAPHY = 'geography', 'Geography and origin constraints'
    PLATFORM_MODALITY = 'platform-modality', 'Platform and modality scouting'
    CATALYSTS = 'catalysts', 'Catalysts and upcoming readouts'
    COMBINATION = 'combination', 'Combination regimen opportunity discovery'


class QueryTier(models.TextChoices):
    BROAD = 'broad', 'Broad'
    TIGHT = 'tight', 'Tight'
    COMPLEX = 'complex', 'Complex / multi-hop'


MODALITY_LABELS = {
    'small-molecule': 'small-molecule',
    'antibody': 'monoclonal antibody',
    'bispecific': 'bispecific antibody',
    'adc': 'antibody-drug conjugate',
    'sirna': 'siRNA',
    'cell-therapy': 'cell therapy',
}
MODALITY_FAMILIES = {
    'antibody-based': ('antibody', 'bispecific', 'adc'),
    'small-molecule': ('small-molecule',),
    'genetic or cell-based': ('sirna', 'cell-therapy'),
}
TARGET_LABELS = {
    'pd-1': 'PD-1', 'her2': 'HER2', 'egfr': 'EGFR', 'kras': 'KRAS',
    'cldn18': 'Claudin 18.2', 'tshr': 'TSHR', 'lat1': 'LAT1', 'il-17': 'IL-17',
}
TARGET_CLASSES = {
    'immune checkpoints': ('pd-1',),
    'receptor tyrosine kinases': ('her2', 'egfr'),
    'RAS pathway proteins': ('kras',),
    'tight-junction proteins': ('cldn18',),
    'G protein-coupled receptors': ('tshr',),
    'amino acid transporters': ('lat1',),
    'inflammatory cytokines': ('il-17',),
}
TARGET_AXES = {
    'pd-1': 'PD-1/PD-L1 axis', 'her2': 'HER2 signaling pathway', 'egfr': 'EGFR signaling pathway',
    'kras': 'RAS-MAPK pathway', 'cldn18': 'Claudin 18.2 axis', 'tshr': 'TSH receptor axis',
    'lat1': 'LAT1 amino acid transport axis', 'il-17': 'IL-17/IL-23 axis',
}
INDICATION_LABELS = {
    'nsclc': 'NSCLC', 'gastric-cancer': 'gastric cancer', 'breast-cancer': 'breast cancer',
    'hepatitis-b': 'hepatitis B', 'psoriasis': 'psoriasis', 'dmd': 'DMD',
}
THERAPY_AREAS = {
    'oncology': ('nsclc', 'gastric-cancer', 'breast-cancer'),
    'infectious disease': ('hepatitis-b',),
    'immunology': ('psoriasis',),
    'neuromuscular disease': ('dmd',),
}
ORIGIN_LABELS = {
    'en': 'US-originated', 'zh': 'China-originated', 'ja': 'Japan-originated', 'ko': 'Korea-originated',
    'pt': 'Brazil-originated', 'de': 'Germany-originated', 'fr': 'France-originated', 'es': 'Spain-originated',
    'ru': 'CIS-originated', 'uk': 'CIS-originated',
}
ORIGIN_GROUPS = {'ru': ('ru', 'uk'), 'uk': ('ru', 'uk')}
STAGE_PHRASES = {
    StageClass.PRECLINICAL.value: ('in preclinical development', 'preclinical-stage'),
    StageClass.CLINICAL.value: ('in clinical development', 'clinical-stage'),
}
ANY_STAGE = ('in preclinical or clinical development', 'preclinical- or clinical-stage')


@dataclass(frozen=True)
class SlotValue:
    slot: str
    text: str
    field: str = ''  # 제약이 걸리는 AssetRecord 속성, '' 이면 제약 없음
    values: tuple | None = None  # None: 값이 비어있지만 않으면 통과

    @property
    def constrains(self):
        return bool(self.field)


def _class_of(value, classes):
    for label, members in classes.items():
        if value in members:
            return label, members
    return None, ()


def _first(values):
    return values[0] if values else None


def fill_stage(record, loose, adjective=False):
    stage = str(record.stage_class)
    if loose or stage not in STAGE_PHRASES:
        return ANY_STAGE[adjective], 'stage_class', tuple(StageClass.values)
    return STAGE_PHRASES[stage][adjective], 'stage_class', (stage,)


def fill_modality(record, loose):
    if not record.modality:
        return None
    if loose:
        family, members = _class_of(record.modality, MODALITY_FAMILIES)
        if family:
            return family, 'modality', members
    return MODALITY_LABELS.get(record.modality, record.modality), 'modality', (record.modality,)


def fill_target(record, loose):
    target = _first(record.targets)
    if target is None:
        return None
    if loose:
        return fill_target_class(record, loose)
    return TARGET_LABELS.get(target, target.upper()), 'targets', (target,)


def fill_target_class(record, loose):
    label, members = _class_of(_first(record.targets), TARGET_CLASSES)
    return (label, 'targets', members) if label else None


def fill_axis(record, loose):
    target = _first(record.targets)
    if target not in TARGET_AXES:
        return None
    if loose:
        return fill_target_class(record, loose)
    return TARGET_AXES[target], 'targets', (target,)


def fill_indication(record, loose):
    indication = _first(record.indications)
    if indication is None:
        return None
    if loose:
        return fill_therapy_area(record, loose)
    return INDICATION_LABELS.get(indication, indication), 'indications', (indication,)


def fill_therapy_area(record, loose):
    label, members = _class_of(_first(record.indications), THERAPY_AREAS)
    return (label, 'indications', members) if label else None


def fill_oncology_indication(record, loose):
    indication = _first(record.indications)
    if indication not in THERAPY_AREAS['oncology']:
        return None
    return fill_indication(record, loose)


def fill_origin(record, loose):
    origin = record.origin_language
    if origin not in ORIGIN_LABELS:
        return None
    if loose and origin != 'en':
        return 'non-US-originated', 'origin_language', tuple(lang for lang in ORIGIN_LABELS if lang != 'en')
    return ORIGIN_LABELS[origin], 'origin_language', ORIGIN_GROUPS.get(origin, (origin,))


def fill_trial_evidence(record, loose):
    if not record.trials:
        return None
    return 'early efficacy or safety data', 'trials', None


def fill_attrition(record, loose):
    if record.is_active:
        return None
    return 'suspended or terminated', 'is_active', (False,)


def fill_combination(record, loose):
    if not any(trial.regimen for trial in record.trials):
        return None
    return 'combination regimens', 'trials', None


def fill_competitor_ceiling(record, loose):
    return '3', '', None


# slot 이름 -> (record, loose) -> (text, field, values) 또는 None (채울 수 없음)
SLOT_FILLERS = {
    'stage': lambda record, loose: fill_stage(record, loose),
    'stage(s)': lambda record, loose: fill_stage(record, loose, adjective=True),
    'modality': fill_modality,
    'target': fill_target,
    'target a': fill_target,
    'target class': fill_target_class,
    'pathway/axis': fill_axis,
    'indication': fill_indication,
    'disease': fill_indication,
    'therapy area/indication': fill_indication,
    'therapy area': fill_therapy_area,
    'oncology indication': fill_oncology_indication,
    'region activity': fill_origin,
    'biomarkers/endpoints/early efficacy/safety': fill_trial_evidence,
    'attrition status': fill_attrition,
    'combination regimen': fill_combination,
    'n': fill_competitor_ceiling,
}
# 수정할 때 느슨하게 바꿀 수 있는 속성
LOOSENABLE = ('stage_class', 'modality', 'targets', 'indications', 'origin_language')


@dataclass(frozen=True)
class QueryGroup:
    key: str
    intent: str
    tier: str
    template: str
    weight: int = 1

    def __post_init__(self):
        if self.intent not in Intent.values:
            raise ValueError(f'{self.key}: unknown intent {self.intent!r}')
        if self.tier not in QueryTier.values:
            raise ValueError(f'{self.key}: unknown tier {self.tier!r}')
        if not self.slots:
            raise ValueError(f'{self.key}: template has no [slot]')
        unknown = [slot for slot in self.slots if slot not in SLOT_FILLERS]
        if unknown:
            raise ValueError(f'{self.key}: no filler for slot(s) {", ".join(unknown)}')
        if self.weight < 1:
            raise ValueError(f'{self.key}: weight must be >= 1')

    @property
    def intent_label(self):
        return Intent(self.intent).label

    @property
    def slots(self):
        return tuple(dict.fromkeys(slot.strip().lower() for slot in SLOT.findall(self.template)))

    def render(self, values):
        """values: {slot: text}"""
        return SLOT.sub(lambda match: values[match.group(1).strip().lower()], self.template)

    def to_record(self):
        return {'key': self.key, 'intent': self.intent, 'tier': self.tier, 'template': self.template}


def load_query_groups(path=None):
    path = Path(path or Path(settings.BENCHGEN['FIXTURE_DIR']) / 'query_groups.json')
    return [QueryGroup(**item) for item in read_json(path)]


def fill_slots(record, group, loosen=()):
    """모든 slot 을 채울 수 있으면 (SlotValue, ...) 아니면 None

    broad 티어는 처음부터 stage 를 느슨하게 씀. loosen 에 든 속성도 느슨하게.
    """
    loosen = set(loosen)
    if group.tier == QueryTier.BROAD:
        loosen.add('stage_class')
    filled = []
    for slot in group.slots:
        strict = SLOT_FILLERS[slot](record, False)
        if strict is None:
            return None
        loose = SLOT_FILLERS[slot](record, True) if strict[1] in loosen else None
        text, field, values = loose or strict
        filled.append(SlotValue(slot, text, field, values))
    return tuple(filled)


@dataclass(frozen=True)
class GeneratedQuery:
    text: str
    group: QueryGroup
    slots: tuple = ()  # (SlotValue, ...)
    attempts: int = 1

    @property
    def constraints(self):
        return tuple((slot.field, slot.values) for slot in self.slots if slot.constrains)

    @property
    def loosened(self):
        return frozenset(slot.field for slot in self.slots if slot.constrains)

    def to_record(self):
        return {
            'query': self.text,
            'group': self.group.key,
            'intent': self.group.intent,
            'tier': self.group.tier,
            'constraints': [
                {'field': field, 'values': None if values is None else list(values)}
                for field, values in self.constraints
            ],
        }


def forbidden_tokens(record):
    """쿼리에 나오면 안 되는 문자열들: alias (정규화, 영숫자만) + 근거 URL"""
    tokens = set()
    for alias in record.aliases:
        tokens.add(('alias', normalize_name(alias)))
        if len(squash(alias)) >= MIN_SQUASHED_ALIAS:
            tokens.add(('squashed', squash(alias)))
    for item in record.provenance:
        if item.source_url:
            tokens.add(('url', item.source_url.casefold()))
    return tokens


def find_leak(text, record):
    """쿼리에서 처음 발견된 식별자, 없으면 None"""
    normalized = normalize_name(text)
    squashed = squash(text)
    urls = {url.casefold().rstrip('.,;)') for url in URL.findall(text)}
    for kind, token in sorted(forbidden_tokens(record)):
        if not token:
            continue
        if kind == 'alias' and token in normalized:
            return token
        if kind == 'squashed' and token in squashed:
            return token
        if kind == 'url' and (token in urls or token in text.casefold()):
            return token
    return None


def satisfiable_groups(record, groups):
    return [group for group in groups if fill_slots(record, group) is not None]


def choose_group(record, groups, seed=0):
    """채울 수 있는 그룹 중에서 weight 비율로 고름. 자산마다 결정적"""
    candidates = satisfiable_groups(record, groups)
    if not candidates:
        return None
    rng = random.Random(f'{seed}:{record.canonical_name}')
    return rng.choices(candidates, weights=[group.weight for group in candidates])[0]


def generate_query(record, groups, backend, seed=0, retries=None):
    """(GeneratedQuery) 식별자가 새면 retries 번까지 다시 생성, 그래도 새면 LeakageDetected"""
    groups = list(groups)
    if not groups:
        raise ValueError('no query groups to choose from')
    if retries is None:
        retries = settings.SCOUT['LEAKAGE_RETRIES']
    group = choose_group(record, groups, seed)
    if group is None:
        raise ValueError(f'{record.canonical_name}: no query group can be filled from its attributes')

    leak = None
    for attempt in range(1, retries + 2):
        generated = backend.generate(record, group, attempt)
        leak = find_leak(generated.text, record)
        if leak is None:
            return replace(generated, attempts=attempt)
        logger.info('%s: query leaks %r on attempt %d, regenerating', record.canonical_name, leak, attempt)
    raise LeakageDetected(f'{record.canonical_name}: query still leaks {leak!r} after {retries + 1} attempts', leak)
