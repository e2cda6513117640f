"""Epoch loop of the directive tree search.

Each epoch selects leaves by UCB, rolls out one investigator per language
on every selected leaf, validates and deduplicates what they found,
backpropagates the precision-gated novelty reward, registers the new assets
and, unless it is the last epoch, asks the coach to expand the leaves.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from agents.base import CallMeter
from agents.dedup import deduplicate
from agents.exceptions import BackendError
from agents.schemas import CoachContext, InvestigatorRequest, MatchVerdict, Role
from agents.summary import summarize_failures
from scout.exceptions import BackendFailure, InvariantViolation
from scout.models import Ablation, DedupMode
from scout.stores import CandidateStore, EvidenceLog, GlobalAssetStore, Outcome
from scout.tree import DEFAULT_C, ROOT_ID, DirectiveTree, SelectionBudget, node_reward, precision_of

logger = logging.getLogger(__name__)

SINGLE_LANGUAGE = ('en',)  # flat, lang-free ablation


@dataclass(frozen=True)
class RunConfig:
    """탐색 한 번의 설정. run 디렉토리에 config.json 으로 남고 --replay 때 그대로 다시 읽음"""

    query: str
    epochs: int = 10
    m: int = 1
    k: int = 3
    languages: tuple = ('en', 'zh')
    dedup_mode: str = DedupMode.LIGHT
    c: float = DEFAULT_C
    seed: int = 0
    backend: str = 'scripted'
    roles: tuple = ()  # ((role, backend), ...) 역할별로 backend 를 바꿀 때
    share_candidates: bool = True
    call_ceiling: int | None = None
    dedup_batch_size: int = 50
    summary_cap: int = 2000
    max_workers: int = 8
    ablation: str = Ablation.NONE
    flat_k: int = 5
    fixture: str = ''

    def __post_init__(self):
        for name in ('epochs', 'm', 'k', 'flat_k', 'dedup_batch_size', 'summary_cap', 'max_workers'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} must be >= 1, got {getattr(self, name)}')
        if not self.languages:
            raise ValueError('languages must not be empty')
        if len(set(self.languages)) != len(self.languages):
            raise ValueError(f'languages contain duplicates: {list(self.languages)}')
        if self.dedup_mode not in DedupMode.values:
            raise ValueError(f'dedup_mode must be one of {DedupMode.values}')
        if self.ablation not in Ablation.values:
            raise ValueError(f'ablation must be one of {Ablation.values}')
        if self.call_ceiling is not None and self.call_ceiling < 1:
            raise ValueError('call_ceiling must be >= 1 when set')
        SelectionBudget(self.m, self.c)

    @property
    def budget(self):
        return SelectionBudget(self.m, self.c)

    @property
    def search_languages(self):
        if self.ablation in (Ablation.FLAT, Ablation.LANG_FREE):
            return SINGLE_LANGUAGE
        return tuple(self.languages)

    def to_record(self):
        return {
            'query': self.query,
            'epochs': self.epochs,
            'm': self.m,
            'k': self.k,
            'languages': list(self.languages),
            'dedup_mode': str(self.dedup_mode),
            'c': self.c,
            'seed': self.seed,
            'backend': self.backend,
            'roles': dict(self.roles),
            'share_candidates': self.share_candidates,
            'call_ceiling': self.call_ceiling,
            'dedup_batch_size': self.dedup_batch_size,
            'summary_cap': self.summary_cap,
            'max_workers': self.max_workers,
            'ablation': str(self.ablation),
            'flat_k': self.flat_k,
            'fixture': self.fixture,
        }

    @classmethod
    def from_record(cls, record):
        data = dict(record)
        data['languages'] = tuple(data.get('languages', cls.languages))
        data['roles'] = tuple(sorted((data.get('roles') or {}).items()))
        return cls(**data)


@dataclass
class Rollout:
    node: int
    candidates: list = field(default_factory=list)
    failed_languages: list = field(default_factory=list)


@dataclass
class NodeOutcome:
    node: int
    directive: str
    candidate_count: int = 0
    validated_count: int = 0
    precision: float = 0.0
    new_unique: list = field(default_factory=list)
    reward: float = 0.0  # precision * len(new_unique)
    rationales: list = field(default_factory=list)
    failed_languages: list = field(default_factory=list)

    @property
    def new_unique_count(self):
        return len(self.new_unique)

    def to_record(self):
        return {
            'node': self.node,
            'directive': self.directive,
            'candidate_count': self.candidate_count,
            'validated_count': self.validated_count,
            'precision': round(self.precision, 9),
            'new_unique_count': self.new_unique_count,
            'reward': round(self.reward, 9),
            'failed_languages': list(self.failed_languages),
        }


@dataclass
class EpochReport:
    """epochs.jsonl 한 줄"""

    epoch: int
    selected_nodes: list
    outcomes: list
    cumulative_asset_count: int
    wall_clock: float
    calls: dict = field(default_factory=dict)
    truncated: bool = False
    new_assets: list = field(default_factory=list)
    recall: float | None = None

    def to_record(self):
        return {
            'epoch': self.epoch,
            'selected_nodes': list(self.selected_nodes),
            'nodes': [outcome.to_record() for outcome in self.outcomes],
            'cumulative_asset_count': self.cumulative_asset_count,
            'wall_clock': round(self.wall_clock, 3),
            'calls': dict(self.calls),
            'truncated': self.truncated,
            'new_assets': list(self.new_assets),
            'recall': None if self.recall is None else round(self.recall, 9),
        }


@dataclass
class RunResult:
    config: RunConfig
    tree: DirectiveTree
    candidates: CandidateStore
    assets: GlobalAssetStore
    evidence: EvidenceLog
    reports: list

    @property
    def investigator_calls(self):
        return sum(report.calls.get(Role.INVESTIGATOR.value, 0) for report in self.reports)


class MonotonicClock:

    def __init__(self):
        self.started = time.monotonic()

    def elapsed(self):
        return time.monotonic() - self.started


class LogicalClock:
    """backend 호출 한 번을 1초로 침. 같은 시드면 시간 축도 똑같이 재현됨"""

    def __init__(self, meter):
        self.meter = meter

    def elapsed(self):
        return float(self.meter.total)


class Orchestrator:
    """기본 트리 탐색.

    ablation 은 하위 클래스가 select / backpropagate / expand_selected 를 바꿔서 만듦.
    store 들은 epoch 경계에서만 바뀌고, 한 epoch 안의 노드들은 모두 같은 스냅샷을 봄
    """

    def __init__(self, config, backends, meter=None, clock=None, ground_truth=None):
        self.config = config
        self.backends = backends
        self.meter = meter or CallMeter(config.call_ceiling)
        self.clock = clock or MonotonicClock()
        self.ground_truth = frozenset(ground_truth) if ground_truth is not None else None
        self.languages = config.search_languages
        self.tree = DirectiveTree()
        self.candidates = CandidateStore()
        self.assets = GlobalAssetStore()
        self.evidence = EvidenceLog()
        self.reports = []

    def run(self):
        """모든 epoch 실행. coach 실패로 멈추면 예외의 partial 에 그때까지의 결과를 붙여서 다시 던짐"""
        logger.info(
            'run %r: epochs=%s m=%s k=%s languages=%s dedup=%s ablation=%s backend=%s',
            self.config.query, self.config.epochs, self.config.m, self.config.k, ','.join(self.languages),
            self.config.dedup_mode, self.config.ablation, self.backends.name,
        )
        for epoch in range(1, self.config.epochs + 1):
            try:
                self.reports.append(self.run_epoch(epoch))
            except BackendFailure as e:
                e.partial = self.result()
                logger.error('run stopped: %s', e)
                raise
        return self.result()

    def result(self):
        return RunResult(self.config, self.tree, self.candidates, self.assets, self.evidence, list(self.reports))

    def run_epoch(self, epoch):
        """한 epoch: 선택, rollout, 평가, 역전파, 등록, 확장 순서"""
        self.meter.start_epoch(epoch)
        selected = self.select(epoch)
        rollouts = self.rollout_all(selected, epoch)
        # 모든 노드를 같은 Ã_global 기준으로 평가한 뒤에 등록
        outcomes = [self.evaluate(rollout, epoch) for rollout in rollouts]
        self.backpropagate(outcomes)
        new_assets = self.aggregate(outcomes)
        if epoch < self.config.epochs:
            try:
                self.expand_selected(outcomes, epoch)
            except BackendFailure:
                # 자산은 이미 등록됐으므로 이번 epoch 보고서도 남김
                self.reports.append(self.epoch_report(epoch, selected, outcomes, new_assets))
                raise

        report = self.epoch_report(epoch, selected, outcomes, new_assets)
        logger.info(
            'epoch %s/%s: nodes=%s candidates=%s validated=%s new=%s assets=%s calls=%s',
            epoch, self.config.epochs, selected,
            sum(o.candidate_count for o in outcomes), sum(o.validated_count for o in outcomes),
            len(new_assets), len(self.assets), sum(report.calls.values()),
        )
        return report

    def epoch_report(self, epoch, selected, outcomes, new_assets):
        return EpochReport(
            epoch=epoch,
            selected_nodes=list(selected),
            outcomes=outcomes,
            cumulative_asset_count=len(self.assets),
            wall_clock=self.clock.elapsed(),
            calls=self.meter.counts(),
            truncated=self.meter.truncated,
            new_assets=new_assets,
            recall=self.recall(),
        )

    def recall(self):
        if not self.ground_truth:
            return None
        found = sum(1 for name in self.ground_truth if self.assets.resolve(name) is not None)
        return found / len(self.ground_truth)

    # Select

    def select(self, epoch):
        return self.tree.select_leaves(self.config.budget)

    # Rollout

    def request_for(self, node_id, language, epoch, known_assets, known_candidates):
        node = self.tree[node_id]
        return InvestigatorRequest(
            query=self.config.query,
            directive=node.directive,
            instructions=node.instructions,
            language=language,
            known_assets=known_assets,
            known_candidates=known_candidates,
            node=node_id,
            epoch=epoch,
        ).check_language(self.languages)

    def rollout(self, node_id, epoch):
        return self.rollout_all([node_id], epoch)[0]

    def rollout_all(self, selected, epoch):
        known_assets = tuple(self.assets.canonical_names())
        known_candidates = tuple(self.candidates.names()) if self.config.share_candidates else ()

        # 호출 상한은 제출 전에 노드 순서, 언어 순서로 차감
        jobs = []
        for node_id in selected:
            for language in self.languages:
                request = self.request_for(node_id, language, epoch, known_assets, known_candidates)
                jobs.append((request, self.meter.charge(Role.INVESTIGATOR)))

        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            futures = [executor.submit(self._investigate, request) if allowed else None for request, allowed in jobs]
            results = [future.result() if future is not None else None for future in futures]

        # 결과는 선택 순서, 언어 순서대로 반영
        rollouts = {node_id: Rollout(node_id) for node_id in selected}
        seen = {node_id: set() for node_id in selected}
        for (request, _), result in zip(jobs, results):
            rollout = rollouts[request.node]
            if result is None:
                rollout.failed_languages.append(request.language)
                continue
            for query_text in result.executed_queries:
                self.evidence.append_query(query_text, request.language, request.node, epoch)
            for domain in result.visited_domains:
                self.evidence.append_domain(domain, request.language, request.node, epoch)
            for candidate in result.candidates:
                if candidate.key not in seen[request.node]:
                    seen[request.node].add(candidate.key)
                    rollout.candidates.append(candidate)

        for node_id in selected:
            rollout = rollouts[node_id]
            if rollout.failed_languages:
                logger.warning(
                    'epoch %s node %s: investigators failed for %s, continuing with the rest',
                    epoch, node_id, ','.join(rollout.failed_languages),
                )
            self.candidates.merge_candidates(rollout.candidates)
        return [rollouts[node_id] for node_id in selected]

    def _investigate(self, request):
        try:
            return self.backends.investigator.investigate(request)
        except BackendError as e:
            logger.warning('investigator %s for node %s failed: %s', request.language, request.node, e)
            return None

    # Evaluate

    def evaluate(self, rollout, epoch):
        """후보 검증, 레코드 검사, 중복 제거까지. 보상은 p * |새 자산|

        store 에는 아직 등록하지 않음 (aggregate 에서 한꺼번에)
        """
        candidates = rollout.candidates
        verdicts = self.validate_all(candidates)

        accepted = []
        rationales = []
        for candidate, verdict in zip(candidates, verdicts):
            if not verdict.is_match:
                rationales.append(verdict.failure_rationale)
                continue
            try:
                accepted.append(verdict.to_asset(candidate).validate())
            except (TypeError, ValueError) as e:
                # 모양이 틀린 속성 (알 수 없는 trial 필드 등) 도 여기서 기각
                logger.warning('epoch %s: dropping %s, %s', epoch, candidate.raw_name, e)
                rationales.append(f'invalid record: {e}')

        precision = precision_of(len(accepted), len(candidates))
        new_unique = deduplicate(
            self.config.dedup_mode, accepted, self.assets, self.backends.deduplicator,
            batch_size=self.config.dedup_batch_size, meter=self.meter,
        )
        return NodeOutcome(
            node=rollout.node,
            directive=self.tree[rollout.node].directive,
            candidate_count=len(candidates),
            validated_count=len(accepted),
            precision=precision,
            new_unique=new_unique,
            reward=node_reward(precision, new_unique),
            rationales=rationales,
            failed_languages=list(rollout.failed_languages),
        )

    def validate_all(self, candidates):
        # 상한에 걸린 후보는 호출 없이 non-match
        allowed = [self.meter.charge(Role.VALIDATOR) for _ in candidates]
        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            futures = [
                executor.submit(self._validate, candidate) if ok else None
                for candidate, ok in zip(candidates, allowed)
            ]
            return [
                future.result() if future is not None
                else MatchVerdict.non_match('call-ceiling: validation skipped')
                for future in futures
            ]

    def _validate(self, candidate):
        try:
            return self.backends.validator.validate(self.config.query, candidate)
        except BackendError as e:
            logger.warning('validator failed on %s, counting it as a non-match: %s', candidate.raw_name, e)
            return MatchVerdict.non_match(f'validator-error: {e}')

    # Backpropagate / aggregate

    def backpropagate(self, outcomes):
        for outcome in outcomes:
            self.tree.backpropagate(outcome.node, outcome.reward)

    def aggregate(self, outcomes):
        """새로 등록된 canonical name 목록을 돌려줌"""
        inserted = []
        for outcome in outcomes:
            for record in outcome.new_unique:
                try:
                    registration = self.assets.register_asset(record)
                except InvariantViolation as e:
                    logger.warning('not registering %s: %s', record.canonical_name, e)
                    continue
                if registration.outcome == Outcome.INSERTED:
                    inserted.append(registration.canonical_name)
        return inserted

    # Expand

    def expand_selected(self, outcomes, epoch):
        for outcome in outcomes:
            self.expand(outcome.node, outcome.rationales, epoch)

    def coach_context(self, node_id, failure_summary, k):
        node = self.tree[node_id]
        return CoachContext(
            query=self.config.query,
            node=node_id,
            directive=node.directive,
            instructions=node.instructions,
            lineage=tuple(self.tree.lineage(node_id)),
            known_assets=tuple(self.assets.canonical_names()),
            known_candidates=tuple(self.candidates.names()),
            executed_queries=tuple(self.evidence.query_texts()),
            visited_domains=tuple(self.evidence.domain_names()),
            failure_summary=failure_summary,
            base_prompt=self.backends.investigator.base_prompt(),
            existing_children=tuple(self.tree[child].directive for child in node.children),
            k=k,
        )

    def coach(self, node_id, rationales, k, epoch):
        # 요약 실패는 이어붙이기로 대신하지만 coach 실패는 run 을 멈춤
        summary = summarize_failures(rationales, self.backends.coach, self.config.summary_cap, meter=self.meter)
        if not self.meter.charge(Role.COACH):
            logger.warning('epoch %s: no call budget left to expand node %s', epoch, node_id)
            return None
        try:
            return self.backends.coach.expand(self.coach_context(node_id, summary, k))
        except BackendError as e:
            raise BackendFailure(f'coach failed: {e}', node=node_id, epoch=epoch) from e

    def expand(self, node_id, rationales, epoch):
        k = self.config.k
        output = self.coach(node_id, rationales, k, epoch)
        if output is None:
            return []
        # 이미 있는 자식과 같은 directive 는 빼고 최대 k 개
        children = [
            (directive, instructions) for directive, instructions in output.children
            if self.tree.find_child(node_id, directive) is None
        ][:k]
        if len(children) < k:
            logger.warning('coach produced %d of %d distinct child directives for node %s', len(children), k, node_id)
        if not children:
            return []
        return self.tree.attach_children(node_id, children, epoch=epoch)


class FlatOrchestrator(Orchestrator):
    """트리 없이 매 epoch root 문맥에서 flat_k 개 directive 를 받아 전부 실행. 역전파 없음"""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.failures = []

    def select(self, epoch):
        output = self.coach(ROOT_ID, self.failures, self.config.flat_k, epoch)
        selected = []
        for directive, instructions in (output.children if output else ())[:self.config.flat_k]:
            node_id = self.tree.find_child(ROOT_ID, directive)
            if node_id is None:
                node_id = self.tree.attach_children(ROOT_ID, [(directive, instructions)], epoch=epoch)[0]
            selected.append(node_id)
        return selected or [ROOT_ID]

    def backpropagate(self, outcomes):
        pass

    def expand_selected(self, outcomes, epoch):
        self.failures = [rationale for outcome in outcomes for rationale in outcome.rationales]


class SequentialOrchestrator(Orchestrator):
    """같은 질의를 매 epoch 다시 실행 ('더 찾아줘' 루프)"""

    def select(self, epoch):
        return [ROOT_ID]

    def expand_selected(self, outcomes, epoch):
        pass


ORCHESTRATORS = {
    Ablation.NONE: Orchestrator,
    Ablation.LANG_FREE: Orchestrator,
    Ablation.FLAT: FlatOrchestrator,
    Ablation.SEQUENTIAL: SequentialOrchestrator,
}


def build_orchestrator(config, backends, **kwargs):
    return ORCHESTRATORS[Ablation(config.ablation)](config, backends, **kwargs)


def run(config, backends, **kwargs):
    return build_orchestrator(config, backends, **kwargs).run()
