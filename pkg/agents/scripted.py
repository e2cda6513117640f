"""Deterministic backends driven by a simulated universe.

Every answer is a pure function of the request, the universe and the seed,
so scripted runs replay byte-for-byte.
"""
from collections import Counter

from agents.base import Backends, Coach, Deduplicator, Investigator, Validator
from agents.schemas import CoachOutput, CriterionCheck, CriterionVerdict, InvestigatorResult, MatchVerdict
from agents.summary import frequency_summary
from scout.models import Candidate
from simworld.investigate import sim_investigate
from simworld.query import Criterion, SimQuery
from utils.text import normalize_name

# coach 가 slice 를 나누는 축 (앞에서부터 시도)
AXES = ('modality', 'region', 'target', 'indication', 'stage')


class ScriptedInvestigator(Investigator):
    """sim_investigate 결과를 후보로 바꿔줌. budget 개보다 많이는 못 찾음"""

    def __init__(self, universe, budget=5, distractor_rate=0.0, threshold=0.5, seed=0):
        self.universe = universe
        self.budget = budget
        self.distractor_rate = distractor_rate
        self.threshold = threshold
        self.seed = seed

    def investigate(self, request):
        search = sim_investigate(
            self.universe, request, self.budget,
            distractor_rate=self.distractor_rate, threshold=self.threshold, seed=self.seed,
        )
        candidates = [
            Candidate(
                raw_name=hit.name,
                source_url=hit.source_url,
                discovered_by_node=request.node,
                discovered_language=request.language,
                epoch=request.epoch,
            )
            for hit in search.hits
        ]
        return InvestigatorResult(candidates, search.executed_queries, search.visited_domains)


class ScriptedValidator(Validator):

    def __init__(self, universe):
        self.universe = universe

    def validate(self, query, candidate):
        """universe 의 정답으로 판정. 약이 아닌 이름, 모르는 이름은 non-match"""
        entity = self.universe.lookup(candidate.raw_name)
        if entity is None:
            return MatchVerdict.non_match(f'unknown entity: no source describes {candidate.raw_name}')
        if not entity.is_valid_drug:
            return MatchVerdict.non_match(f'not a valid drug asset: {entity.canonical_name} is not a drug program')

        url = entity.source_url(entity.origin_language)
        checks = []
        failed = []
        for criterion, ok in SimQuery.parse(query).checks(entity):
            value = entity.attribute(criterion.field)
            quote = f'{entity.canonical_name} {criterion.field}: {value}'
            checks.append(CriterionCheck(
                criterion=criterion.describe(),
                verdict=CriterionVerdict.PASS if ok else CriterionVerdict.FAIL,
                evidence=((url, quote),),
            ))
            if not ok:
                failed.append(f'wrong {criterion.field}: {entity.canonical_name} is {value}, needs {criterion.describe()}')

        if failed:
            return MatchVerdict.non_match('; '.join(failed), per_criterion=checks)
        return MatchVerdict(
            is_match=True,
            per_criterion=tuple(checks),
            canonical_name=entity.canonical_name,
            aliases=(candidate.raw_name, entity.canonical_name),
            normalized_attributes=entity.attributes(),
            citations=tuple(entity.citations()),
        )


class ScriptedDeduplicator(Deduplicator):
    """alias 표로 같은 자산을 알아봄. 표에 없는 이름은 정규화한 canonical_name 으로 구분"""

    def __init__(self, resolve):
        self.resolve = resolve

    @classmethod
    def from_universe(cls, universe):
        def resolve(name):
            entity = universe.lookup(name)
            return entity.id if entity is not None else None
        return cls(resolve)

    @classmethod
    def from_aliases(cls, groups):
        table = {}
        for key, names in enumerate(groups):
            for name in names:
                table[normalize_name(name)] = key
        return cls(lambda name: table.get(normalize_name(name)))

    def key_of(self, record):
        for alias in [record.canonical_name, *sorted(record.aliases)]:
            key = self.resolve(alias)
            if key is not None:
                return key
        return normalize_name(record.canonical_name)

    def merge_pass(self, items, existing):
        existing_keys = {self.key_of(record) for record in existing}
        merged = {}
        for item in items:
            key = self.key_of(item)
            if key in existing_keys:
                continue
            merged[key] = merged[key].merged_with(item) if key in merged else item
        return list(merged.values())


class ScriptedCoach(Coach):

    def __init__(self, universe):
        self.universe = universe

    def expand(self, context):
        directive = SimQuery.parse(context.directive)
        scope = SimQuery.parse(context.query).conjoin(directive)
        members = [e for e in self.universe.assets if scope.matches(e)]
        constrained = scope.constrained_fields()

        for axis in AXES:
            if axis in constrained:
                continue
            counts = Counter(e.attribute(axis) for e in members)
            if len(counts) < 2:
                continue
            values = sorted(counts, key=lambda v: (-counts[v], v))
            if context.k == 1:
                groups = [values[:1]]
            elif len(values) <= context.k:
                groups = [[v] for v in values]
            else:
                groups = [[v] for v in values[:context.k - 1]] + [values[context.k - 1:]]

            pairs = []
            for group in groups:
                criterion = Criterion(axis, frozenset(group))
                pairs.append((
                    str(directive.narrowed(criterion)),
                    f'Prioritise sources that cover programs where {criterion.describe()}.',
                ))
            return CoachOutput.build(pairs, rationale=f'partition {len(members)} programs by {axis}')

        return CoachOutput.build([], rationale='slice cannot be narrowed further')

    def summarize(self, rationales, cap):
        return frequency_summary(rationales, cap)


def build_scripted_backends(universe, budget=5, distractor_rate=0.0, threshold=0.5, seed=0):
    return Backends(
        investigator=ScriptedInvestigator(universe, budget, distractor_rate, threshold, seed),
        validator=ScriptedValidator(universe),
        deduplicator=ScriptedDeduplicator.from_universe(universe),
        coach=ScriptedCoach(universe),
        name='scripted',
    )
