"""Benchmark pipeline roles: regional miner, attribute enricher, SERP page counter,
query generator and query validator.

The scripted implementations read a simulated universe; the chat ones reuse
the agents chat client for the two language steps (generation, validation).
"""
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass

from django.template.loader import render_to_string

from agents.chat import ChatClient, ChatValidator, system_prompt
from agents.exceptions import MalformedOutput
from agents.schemas import MatchVerdict
from benchgen.querygen import GeneratedQuery, LOOSENABLE, fill_slots, forbidden_tokens
from scout.models import Candidate
from utils.text import digest, normalize_name

PAGES_PER_WEIGHT = 20
SOURCE_COVERAGE = 60  # 한 매체가 지역 자산 중 다루는 비율(%)
WRONG_FIELD = re.compile(r'wrong (\w+):')


@dataclass(frozen=True)
class Mention:
    name: str
    url: str
    mined_by: object  # MiningTuple


class RegionalMiner(ABC):

    @abstractmethod
    def mine(self, mining_tuple):
        """-> [Mention, ...]"""


class Enricher(ABC):

    @abstractmethod
    def enrich(self, mention):
        """-> AssetRecord, 실존하지 않는 이름이면 None"""


class Serp(ABC):

    @abstractmethod
    def pages(self, query, language):
        """검색 결과 페이지 수"""


class QueryGenerator(ABC):

    @abstractmethod
    def generate(self, record, group, attempt=1):
        """-> GeneratedQuery"""

    @abstractmethod
    def revise(self, generated, record, rationale):
        """검증 실패 이유를 받아 고친 GeneratedQuery"""


class QueryValidator(ABC):

    @abstractmethod
    def validate_query(self, generated, record):
        """-> MatchVerdict"""


class ScriptedMiner(RegionalMiner):
    """지역/단계가 맞고 해당 언어로 보이는 엔티티를 현지 이름으로 돌려줌 (lookalike 포함)"""

    def __init__(self, universe, threshold=0.5):
        self.universe = universe
        self.threshold = threshold

    def covers(self, source, entity):
        return int(digest(f'{source}:{entity.id}', 4), 16) % 100 < SOURCE_COVERAGE

    def mine(self, mining_tuple):
        return [
            Mention(entity.name_in(mining_tuple.language), entity.source_url(mining_tuple.language), mining_tuple)
            for entity in self.universe.entities
            if entity.region == mining_tuple.region
            and entity.stage == mining_tuple.stage
            and entity.visible_in(mining_tuple.language, self.threshold)
            and self.covers(mining_tuple.source, entity)
        ]


class ScriptedEnricher(Enricher):

    def __init__(self, universe):
        self.universe = universe

    def enrich(self, mention):
        entity = self.universe.lookup(mention.name)
        return entity.to_asset_record() if entity is not None else None


class ScriptedSerp(Serp):
    """쿼리에 든 alias 로 엔티티를 찾고 언어별 노출도 x 20 페이지"""

    def __init__(self, universe):
        self.universe = universe

    def pages(self, query, language):
        text = normalize_name(query)
        hits = [
            entity for entity in self.universe.entities
            if any(normalize_name(alias) in text for alias in entity.aliases)
        ]
        if not hits:
            return 0
        entity = min(hits, key=lambda e: e.id)
        return math.floor(entity.weight(language) * PAGES_PER_WEIGHT)


class ScriptedQueryGenerator(QueryGenerator):
    """템플릿에 slot 값을 그대로 넣음. 수정할 때는 실패한 속성을 한 단계 느슨하게"""

    def generate(self, record, group, attempt=1):
        return self.render(record, group)

    def render(self, record, group, loosen=()):
        slots = fill_slots(record, group, loosen)
        if slots is None:
            raise ValueError(f'{group.key} cannot be filled for {record.canonical_name}')
        return GeneratedQuery(group.render({slot.slot: slot.text for slot in slots}), group, slots)

    def revise(self, generated, record, rationale):
        failed = {field for field in WRONG_FIELD.findall(rationale or '') if field in LOOSENABLE}
        already = {slot.field for slot in generated.slots if slot.constrains and slot.values and len(slot.values) > 1}
        return self.render(record, generated.group, failed | already)


class ScriptedQueryValidator(QueryValidator):
    """constraint 들을 레코드 속성과 비교. view 로 특정 자산의 속성을 다르게 볼 수 있음

    view: {canonical_name: {field: value}} (검증 에이전트가 찾은 근거가 다른 경우)
    """

    def __init__(self, view=None):
        self.view = view or {}

    def attribute(self, record, field):
        overrides = self.view.get(record.canonical_name, {})
        return overrides[field] if field in overrides else getattr(record, field)

    def validate_query(self, generated, record):
        failures = []
        for field, values in generated.constraints:
            actual = self.attribute(record, field)
            if values is None:
                ok = bool(actual)
            elif isinstance(actual, (list, tuple, set, frozenset)):
                ok = any(str(item) in values for item in actual)
            else:
                ok = actual in values or str(actual) in values
            if not ok:
                needs = 'any value' if values is None else ' or '.join(str(v) for v in values)
                failures.append(f'wrong {field}: {record.canonical_name} has {actual}, query needs {needs}')
        if failures:
            return MatchVerdict.non_match('; '.join(failures))
        return MatchVerdict(is_match=True, canonical_name=record.canonical_name, aliases=tuple(sorted(record.aliases)))


class ChatQueryGenerator(QueryGenerator):

    def __init__(self, client, template='benchgen/generate.txt', revise_template='benchgen/revise.txt'):
        self.client = client
        self.template = template
        self.revise_template = revise_template

    def context(self, record, group):
        slots = fill_slots(record, group) or ()
        return {
            'group': group,
            'slots': slots,
            'record': record,
            'forbidden': sorted(token for _, token in forbidden_tokens(record)),
        }

    def ask(self, template, context, group, slots):
        data = self.client.complete_json('query-generator', system_prompt('query-generator'),
                                         render_to_string(template, context))
        text = str(data.get('query') or '').strip()
        if not text:
            raise MalformedOutput('query generator returned no query', role='query-generator')
        return GeneratedQuery(text, group, slots)

    def generate(self, record, group, attempt=1):
        context = self.context(record, group)
        context['attempt'] = attempt
        return self.ask(self.template, context, group, context['slots'])

    def revise(self, generated, record, rationale):
        context = self.context(record, generated.group)
        context.update({'query': generated.text, 'rationale': rationale})
        return self.ask(self.revise_template, context, generated.group, generated.slots)


class ChatQueryValidator(QueryValidator):
    """자산 검색에 쓰는 criteria match validator 를 그대로 씀"""

    def __init__(self, validator):
        self.validator = validator

    def validate_query(self, generated, record):
        url = record.provenance[0].source_url if record.provenance else ''
        return self.validator.validate(generated.text, Candidate(record.canonical_name, url, 0, record.origin_language))


def build_chat_query_backends(transcript_dir=None, seed=None):
    """(generator, validator). 키가 없으면 ImproperlyConfigured"""
    client = ChatClient.from_settings(transcript_dir=transcript_dir, seed=seed)
    return ChatQueryGenerator(client), ChatQueryValidator(ChatValidator(client))

