import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from agents.exceptions import BackendError
from evalkit.exceptions import EmptyBenchmark, SubsetViolation
from evalkit.grading import (
    BenchmarkExample, DimensionVerdict, OracleGrader, PrecisionVerdict, RecallVerdict, evaluate_run, sim_examples,
)
from evalkit.metrics import f1, precision_score, recall_score
from evalkit.report import evaluate_sim_run, quality_series, render_quality
from scout.exceptions import InvariantViolation
from simworld.universe import load_fixture, oracle_answer
from utils.jsonl import write_lines


class TableGrader:
    """정답표로 채점. failing 에 있는 이름은 BackendError"""

    def __init__(self, truth, correct, failing=()):
        self.truth = truth  # example_id -> 예측으로 나오면 맞는 이름
        self.correct = correct  # 조건을 만족하는 이름
        self.failing = set(failing)

    def recall_verdict(self, example, predictions):
        if example.example_id in self.failing:
            raise BackendError('grader timed out')
        name = self.truth[example.example_id]
        return RecallVerdict(example.example_id, 1, name) if name in predictions else RecallVerdict(example.example_id, 0)

    def precision_verdict(self, query_id, query, predicted):
        if predicted in self.failing:
            raise BackendError('grader timed out')
        return PrecisionVerdict(query_id, predicted, predicted in self.correct)


class MetricsTest(SimpleTestCase):

    def test_recall(self):
        self.assertAlmostEqual(recall_score([1] * 16 + [0] * 6), 16 / 22)
        self.assertEqual(recall_score([RecallVerdict('e1', 1, 'AB-1'), RecallVerdict('e2', 0)]), 0.5)
        with self.assertRaises(EmptyBenchmark):
            recall_score([])
        with self.assertRaises(ValueError):
            recall_score([2])

    def test_precision(self):
        predicted = {('q1', f'A-{i}') for i in range(40)}
        correct = {('q1', f'A-{i}') for i in range(35)}
        self.assertEqual(precision_score(predicted, correct), 0.875)
        self.assertEqual(precision_score(predicted, predicted), 1.0)
        self.assertIsNone(precision_score(set(), set()))
        with self.assertRaises(SubsetViolation):
            precision_score({('q1', 'A')}, {('q1', 'B')})

    def test_f1(self):
        self.assertAlmostEqual(f1(0.877, 0.730), 0.797, delta=0.0005)
        self.assertAlmostEqual(f1(0.736, 0.454), 0.562, delta=0.0005)
        self.assertEqual(f1(0.0, 0.0), 0.0)
        self.assertEqual(f1(1.0, 1.0), 1.0)
        with self.assertRaises(ValueError):
            f1(1.2, 0.5)


class VerdictTest(SimpleTestCase):

    def test_positive_recall_needs_a_name(self):
        with self.assertRaises(InvariantViolation):
            RecallVerdict('e1', 1)
        with self.assertRaises(InvariantViolation):
            RecallVerdict('e1', 2, 'AB-1')

    def test_precision_verdict_follows_dimensions(self):
        branches = ((DimensionVerdict('stage is clinical', False), DimensionVerdict('modality is adc', True)),)
        with self.assertRaises(InvariantViolation):
            PrecisionVerdict('q1', 'AB-1', True, branches)
        self.assertEqual(PrecisionVerdict('q1', 'AB-1', False, branches).failed_dimensions, ['stage is clinical'])


class OracleGraderTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.universe = load_fixture('aliases').universe()
        cls.grader = OracleGrader(cls.universe)

    def test_alias_renamed_prediction_is_recalled(self):
        entity = self.universe.assets[0]
        example = BenchmarkExample('q1-0', 'q1', 'stage=clinical', entity.canonical_name)
        verdict = self.grader.recall_verdict(example, ['XX-1', entity.aliases[1]])
        self.assertEqual((verdict.verdict, verdict.matched_predicted_name), (1, entity.aliases[1]))
        self.assertEqual(self.grader.recall_verdict(example, ['XX-1']).verdict, 0)

    def test_missing_criterion_is_flagged(self):
        entity = next(e for e in self.universe.assets if e.stage == 'preclinical')
        verdict = self.grader.precision_verdict('q1', f'modality={entity.modality}; stage=clinical', entity.canonical_name)
        self.assertFalse(verdict.is_match)
        self.assertEqual(verdict.failed_dimensions, ['stage is clinical'])

        lookalike = self.universe.lookalikes[0]
        verdict = self.grader.precision_verdict('q1', '', lookalike.canonical_name)
        self.assertEqual(verdict.failed_dimensions, ['is a valid drug asset'])

    def test_sim_run_matches_oracle(self):
        query = load_fixture('aliases').query
        answer = sorted(oracle_answer(self.universe, query))
        examples = sim_examples(self.universe, query)
        self.assertEqual(sorted(e.asset_name for e in examples), answer)

        found = answer[:len(answer) // 2] + [self.universe.lookalikes[0].canonical_name]
        evaluation, _ = evaluate_sim_run(self.universe, query, found)
        self.assertEqual(evaluation.recall, (len(answer) // 2) / len(answer))
        self.assertEqual(evaluation.precision, (len(answer) // 2) / len(found))


class EvaluateRunTest(SimpleTestCase):

    def setUp(self):
        self.examples = [
            BenchmarkExample('q1-1', 'q1', 'first query', 'AB-1'),
            BenchmarkExample('q1-2', 'q1', 'first query', 'CD-2'),
            BenchmarkExample('q2-1', 'q2', 'second query', 'EF-3'),
        ]
        self.truth = {'q1-1': 'AB-1', 'q1-2': 'CD-2', 'q2-1': 'EF-3'}

    def test_micro_precision(self):
        grader = TableGrader(self.truth, {'AB-1', 'EF-3'})
        predictions = {'q1': ['AB-1', 'XX-9', 'YY-8', 'AB-1'], 'q2': ['EF-3']}
        evaluation = evaluate_run(predictions, self.examples, grader)
        self.assertEqual(evaluation.recall, 2 / 3)
        self.assertEqual(evaluation.precision, 0.5)  # 4개 중 2개, query 별 평균이 아님
        self.assertAlmostEqual(evaluation.f1, f1(0.5, 2 / 3))
        self.assertEqual([(r.query_id, r.predicted, r.correct) for r in evaluation.rows], [('q1', 3, 1), ('q2', 1, 1)])

    def test_grader_failures_are_excluded(self):
        grader = TableGrader(self.truth, {'AB-1'}, failing={'q1-2', 'XX-9'})
        predictions = {'q1': ['AB-1', 'XX-9'], 'q9': ['ZZ-1']}
        evaluation = evaluate_run(predictions, self.examples, grader)
        self.assertEqual(evaluation.recall, 0.5)
        self.assertEqual(evaluation.precision, 1.0)
        self.assertEqual(
            [(kind, ident) for kind, ident, _ in evaluation.excluded],
            [('recall', 'q1-2'), ('precision', 'q1:XX-9'), ('precision', 'q9')],
        )

    def test_no_predictions(self):
        evaluation = evaluate_run({}, self.examples, TableGrader(self.truth, set()))
        self.assertEqual(evaluation.recall, 0.0)
        self.assertIsNone(evaluation.precision)
        self.assertIsNone(evaluation.f1)
        self.assertIsNone(evaluation.to_record()['precision'])

    def test_empty_benchmark(self):
        with self.assertRaises(EmptyBenchmark):
            evaluate_run({'q1': ['AB-1']}, [], TableGrader({}, set()))

    def test_quality_series(self):
        grader = TableGrader(self.truth, {'AB-1', 'CD-2'})
        q1 = self.examples[:2]
        epochs = [
            {'epoch': 1, 'wall_clock': 4.0, 'new_assets': ['AB-1', 'XX-9']},
            {'epoch': 2, 'wall_clock': 9.0, 'new_assets': []},
            {'epoch': 3, 'wall_clock': 15.0, 'new_assets': ['CD-2']},
        ]
        points = quality_series(epochs, q1, grader)
        self.assertEqual([p.recall for p in points], [0.5, 0.5, 1.0])
        self.assertEqual([p.precision for p in points], [0.5, 0.5, 2 / 3])
        self.assertEqual(render_quality(points).splitlines()[1], '1\t4.000\t2\t0.500000\t0.500000\t0.500000')


class EvaluateCommandTest(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def benchmark_files(self, examples):
        universe = load_fixture('aliases').universe()
        names = [e.canonical_name for e in universe.assets[:2]]
        write_lines(self.root / 'benchmark.jsonl', 'example', examples)
        write_lines(self.root / 'predictions.jsonl', 'prediction', [
            {'query_id': 'b0001', 'predicted': names[0]},
            {'query_id': 'b0001', 'predicted': universe.lookalikes[0].canonical_name},
        ])
        return names

    def test_sim_mode_repeats_run_metrics(self):
        call_command('run', fixture='aliases', epochs=2, out=str(self.root / 'run'), stdout=StringIO())
        stdout = StringIO()
        call_command('evaluate', run=str(self.root / 'run'), out=str(self.root / 'eval'), stdout=stdout)
        self.assertEqual(
            (self.root / 'run' / 'metrics.json').read_bytes(), (self.root / 'eval' / 'metrics.json').read_bytes(),
        )
        self.assertTrue((self.root / 'eval' / 'COMPLETE').exists())
        self.assertIn('recall', stdout.getvalue())

    def test_benchmark_mode_with_oracle(self):
        universe = load_fixture('aliases').universe()
        entity = universe.assets[0]
        self.benchmark_files([{
            'example_id': 'b0001-1', 'query_id': 'b0001', 'query': f'modality={entity.modality}',
            'asset_name': entity.canonical_name, 'aliases': list(entity.aliases),
        }])
        call_command('evaluate', benchmark=str(self.root / 'benchmark.jsonl'),
                     predictions=str(self.root / 'predictions.jsonl'), fixture='aliases',
                     out=str(self.root / 'eval'), stdout=StringIO())
        metrics = json.loads((self.root / 'eval' / 'metrics.json').read_text(encoding='utf-8'))
        self.assertEqual((metrics['recall'], metrics['precision']), (1.0, 0.5))

    def test_usage_errors(self):
        attempts = [
            {},
            {'run': str(self.root / 'missing'), 'benchmark': str(self.root / 'b.jsonl')},
            {'benchmark': str(self.root / 'b.jsonl')},
            {'run': str(self.root / 'not-complete')},
        ]
        for i, options in enumerate(attempts):
            with self.assertRaises(CommandError, msg=options) as ctx:
                call_command('evaluate', out=str(self.root / f'eval{i}'), stdout=StringIO(), **options)
            self.assertEqual(ctx.exception.returncode, 2)

    def test_oracle_needs_fixture(self):
        self.benchmark_files([])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', benchmark=str(self.root / 'benchmark.jsonl'),
                         predictions=str(self.root / 'predictions.jsonl'), out=str(self.root / 'eval'),
                         stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_empty_benchmark_fails_the_run(self):
        self.benchmark_files([])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', benchmark=str(self.root / 'benchmark.jsonl'),
                         predictions=str(self.root / 'predictions.jsonl'), fixture='aliases',
                         out=str(self.root / 'eval'), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)

    @override_settings(CHAT={'PROVIDER': 'openai', 'BASE_URL': 'https://api.example.invalid/v1', 'MODEL': '',
                             'API_KEY': '', 'TIMEOUT': 5, 'RETRIES': 0, 'CONCURRENCY': 1, 'TEMPERATURE': 0.2})
    def test_chat_grader_without_credentials(self):
        self.benchmark_files([])
        with self.assertRaises(CommandError) as ctx:
            call_command('evaluate', benchmark=str(self.root / 'benchmark.jsonl'),
                         predictions=str(self.root / 'predictions.jsonl'), grader='chat',
                         out=str(self.root / 'eval'), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
