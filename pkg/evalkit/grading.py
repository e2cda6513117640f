"""Recall and precision graders and the run evaluation fold."""
import logging
from dataclasses import dataclass, field

from django.template.loader import render_to_string

from agents.chat import ChatClient, system_prompt
from agents.exceptions import BackendError, MalformedOutput
from evalkit.exceptions import EmptyBenchmark
from evalkit.metrics import f1, precision_score, recall_score
from scout.exceptions import InvariantViolation
from simworld.query import SimQuery
from simworld.universe import oracle_answer

logger = logging.getLogger(__name__)

GRADER_TEMPERATURE = 0.2
GRADER_SEED = 20240611


@dataclass(frozen=True)
class BenchmarkExample:
    example_id: str
    query_id: str
    query: str
    asset_name: str
    aliases: tuple = ()

    def to_record(self):
        return {
            'example_id': self.example_id,
            'query_id': self.query_id,
            'query': self.query,
            'asset_name': self.asset_name,
            'aliases': list(self.aliases),
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            example_id=str(record['example_id']),
            query_id=str(record['query_id']),
            query=record['query'],
            asset_name=record['asset_name'],
            aliases=tuple(record.get('aliases', ())),
        )


@dataclass(frozen=True)
class RecallVerdict:
    example_id: str
    verdict: int
    matched_predicted_name: str | None = None
    alias_evidence: tuple = ()  # ((url, quote), ...)

    def __post_init__(self):
        if self.verdict not in (0, 1):
            raise InvariantViolation(f'recall verdict must be 0 or 1, got {self.verdict}')
        if self.verdict == 1 and not self.matched_predicted_name:
            raise InvariantViolation(f'{self.example_id}: positive recall verdict without a matched prediction')


@dataclass(frozen=True)
class DimensionVerdict:
    dimension: str
    passed: bool


@dataclass(frozen=True)
class PrecisionVerdict:
    query_id: str
    predicted: str
    is_match: bool
    dimension_verdicts: tuple = ()  # OR of AND branches: ((DimensionVerdict, ...), ...)

    def __post_init__(self):
        if self.dimension_verdicts:
            expected = any(all(d.passed for d in branch) for branch in self.dimension_verdicts)
            if expected != self.is_match:
                raise InvariantViolation(f'{self.predicted}: is_match disagrees with the dimension verdicts')

    @property
    def failed_dimensions(self):
        if self.is_match or not self.dimension_verdicts:
            return []
        branch = min(self.dimension_verdicts, key=lambda b: sum(not d.passed for d in b))
        return [d.dimension for d in branch if not d.passed]


class OracleGrader:
    """시뮬레이션 전용. alias 로 universe 를 찾아서 정확히 채점"""

    def __init__(self, universe):
        self.universe = universe

    def recall_verdict(self, example, predictions):
        target = self.universe.lookup(example.asset_name)
        if target is not None:
            for name in predictions:
                entity = self.universe.lookup(name)
                if entity is not None and entity.id == target.id:
                    quote = f'{name} is also known as {target.canonical_name}'
                    return RecallVerdict(
                        example.example_id, 1, name, ((target.source_url(target.origin_language), quote),),
                    )
        return RecallVerdict(example.example_id, 0)

    def precision_verdict(self, query_id, query, predicted):
        entity = self.universe.lookup(predicted)
        if entity is None or not entity.is_valid_drug:
            return PrecisionVerdict(query_id, predicted, False, ((DimensionVerdict('is a valid drug asset', False),),))
        query = SimQuery.parse(query)
        branches = tuple(
            tuple(DimensionVerdict(criterion.describe(), criterion.holds(entity)) for criterion in branch)
            for branch in query.branches
        )
        return PrecisionVerdict(query_id, predicted, query.matches(entity), branches)


class ChatGrader:

    def __init__(self, client, recall_template='evalkit/recall_grader.txt',
                 precision_template='evalkit/precision_grader.txt'):
        self.client = client
        self.recall_template = recall_template
        self.precision_template = precision_template

    @classmethod
    def from_settings(cls, transcript_dir=None):
        return cls(ChatClient.from_settings(
            transcript_dir=transcript_dir, seed=GRADER_SEED, temperature=GRADER_TEMPERATURE,
        ))

    def recall_verdict(self, example, predictions):
        data = self.client.complete_json(
            'recall-grader',
            system_prompt('validator'),
            render_to_string(self.recall_template, {'example': example, 'predictions': predictions}),
        )
        try:
            evidence = tuple((str(e['url']), str(e['quote'])) for e in data.get('alias_evidence', []))
            return RecallVerdict(
                example.example_id, int(data.get('verdict', 0)), data.get('matched_predicted_name') or None, evidence,
            )
        except (KeyError, TypeError, ValueError, InvariantViolation) as e:
            raise MalformedOutput(f'recall grader: {e}', role='recall-grader') from e

    def precision_verdict(self, query_id, query, predicted):
        data = self.client.complete_json(
            'precision-grader',
            system_prompt('validator'),
            render_to_string(self.precision_template, {'query': query, 'predicted': predicted}),
        )
        try:
            dimensions = tuple(DimensionVerdict(str(d['dimension']), bool(d['passed'])) for d in data.get('dimensions', []))
            if str(data.get('operator', 'AND')).upper() == 'OR':
                branches = tuple((d,) for d in dimensions)
            else:
                branches = (dimensions,) if dimensions else ()
            return PrecisionVerdict(query_id, predicted, bool(data.get('is_match')), branches)
        except (KeyError, TypeError, InvariantViolation) as e:
            raise MalformedOutput(f'precision grader: {e}', role='precision-grader') from e


@dataclass
class QueryRow:
    query_id: str
    examples: int = 0
    recalled: int = 0
    predicted: int = 0
    correct: int = 0

    def to_record(self):
        return vars(self).copy()


@dataclass
class Evaluation:
    recall: float | None
    precision: float | None
    f1: float | None
    recall_verdicts: list = field(default_factory=list)
    precision_verdicts: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # [(kind, id, reason), ...]
    rows: list = field(default_factory=list)

    def to_record(self):
        def rounded(value):
            return None if value is None else round(value, 9)

        return {
            'recall': rounded(self.recall),
            'precision': rounded(self.precision),
            'f1': rounded(self.f1),
            'queries': [row.to_record() for row in self.rows],
            'recall_verdicts': [
                {'example_id': v.example_id, 'verdict': v.verdict, 'matched_predicted_name': v.matched_predicted_name}
                for v in self.recall_verdicts
            ],
            'precision_verdicts': [
                {'query_id': v.query_id, 'predicted': v.predicted, 'is_match': v.is_match,
                 'failed_dimensions': v.failed_dimensions}
                for v in self.precision_verdicts
            ],
            'excluded': [{'kind': kind, 'id': ident, 'reason': reason} for kind, ident, reason in self.excluded],
        }


def evaluate_run(predictions, examples, grader):
    """predictions: {query_id: [predicted name, ...]}, examples: [BenchmarkExample, ...]"""
    examples = list(examples)
    if not examples:
        raise EmptyBenchmark('no benchmark examples to evaluate against')
    queries = {example.query_id: example.query for example in examples}
    rows = {query_id: QueryRow(query_id) for query_id in sorted(set(queries) | set(predictions))}

    recall_verdicts = []
    excluded = []
    for example in examples:
        rows[example.query_id].examples += 1
        try:
            verdict = grader.recall_verdict(example, list(predictions.get(example.query_id, [])))
        except BackendError as e:
            logger.warning('recall grading failed for %s, excluding it: %s', example.example_id, e)
            excluded.append(('recall', example.example_id, str(e)))
            continue
        recall_verdicts.append(verdict)
        rows[example.query_id].recalled += verdict.verdict

    precision_verdicts = []
    for query_id in sorted(predictions):
        if query_id not in queries:
            excluded.append(('precision', query_id, 'query is not in the benchmark'))
            continue
        for name in dict.fromkeys(predictions[query_id]):
            try:
                verdict = grader.precision_verdict(query_id, queries[query_id], name)
            except BackendError as e:
                logger.warning('precision grading failed for %s / %s, excluding it: %s', query_id, name, e)
                excluded.append(('precision', f'{query_id}:{name}', str(e)))
                continue
            precision_verdicts.append(verdict)
            rows[query_id].predicted += 1
            rows[query_id].correct += int(verdict.is_match)

    recall = recall_score(recall_verdicts) if recall_verdicts else None
    precision = precision_score(
        {(v.query_id, v.predicted) for v in precision_verdicts},
        {(v.query_id, v.predicted) for v in precision_verdicts if v.is_match},
    )
    score = f1(precision, recall) if precision is not None and recall is not None else None
    return Evaluation(recall, precision, score, recall_verdicts, precision_verdicts, excluded, list(rows.values()))


def sim_examples(universe, query, query_id='q1'):
    """정답 자산 하나당 예제 하나"""
    answer = oracle_answer(universe, query)
    return [
        BenchmarkExample(
            example_id=f'{query_id}-{universe.lookup(name).id}',
            query_id=query_id,
            query=query,
            asset_name=name,
            aliases=tuple(universe.lookup(name).aliases),
        )
        for name in sorted(answer, key=lambda name: universe.lookup(name).id)
    ]
