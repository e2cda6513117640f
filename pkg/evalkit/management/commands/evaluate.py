import json

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from evalkit.exceptions import EmptyBenchmark
from evalkit.grading import BenchmarkExample, ChatGrader, OracleGrader, evaluate_run
from evalkit.report import evaluate_sim_run, render_table, write_metrics
from scout.exceptions import RunDirectoryComplete
from scout.rundir import RunDirectory
from simworld.universe import load_fixture
from utils.jsonl import read_lines

GRADERS = ('oracle', 'chat')


def read_records(path, kind):
    try:
        return read_lines(path, kind)
    except (OSError, json.JSONDecodeError, ValueError) as e:
        raise CommandError(f'cannot read {path}: {e}', returncode=2)


def read_predictions(path):
    """prediction 줄: {"query_id": ..., "predicted": ...} -> {query_id: [name, ...]}"""
    predictions = {}
    for record in read_records(path, 'prediction'):
        try:
            predictions.setdefault(str(record['query_id']), []).append(record['predicted'])
        except KeyError as e:
            raise CommandError(f'{path}: prediction line without {e}', returncode=2)
    return predictions


def fixture_or_error(name):
    try:
        return load_fixture(name)
    except (OSError, KeyError, ValueError) as e:
        raise CommandError(f'cannot load fixture {name}: {e}', returncode=2)


class Command(BaseCommand):
    help = (
        'Grade a run. Sim mode: --run DIR grades a completed simulated run against its universe. '
        'Benchmark mode: --benchmark and --predictions grade predictions with the oracle or chat grader.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--run', help='completed run directory (sim mode)')
        parser.add_argument('--benchmark', help='benchmark.jsonl with "example" lines')
        parser.add_argument('--predictions', help='jsonl with "prediction" lines')
        parser.add_argument('--grader', choices=GRADERS, default='oracle')
        parser.add_argument('--fixture', help='simulated universe; defaults to the one recorded in the run')
        parser.add_argument('--out', required=True, help='directory for metrics.json, metrics.txt and quality.tsv')

    def handle(self, *args, **options):
        if bool(options['run']) == bool(options['benchmark'] or options['predictions']):
            raise CommandError('give either --run, or --benchmark with --predictions', returncode=2)

        out = RunDirectory(options['out'])
        try:
            out = RunDirectory.create(out.path)
        except RunDirectoryComplete as e:
            raise CommandError(str(e), returncode=2)

        try:
            if options['run']:
                evaluation, points = self.evaluate_sim(options)
            else:
                evaluation, points = self.evaluate_benchmark(options, out)
        except ImproperlyConfigured as e:
            raise CommandError(str(e), returncode=2)
        except EmptyBenchmark as e:
            raise CommandError(str(e), returncode=1)

        write_metrics(out.path, evaluation, points)
        out.mark_complete()
        self.stdout.write(render_table(evaluation))

    def evaluate_sim(self, options):
        source = RunDirectory(options['run'])
        if not source.is_complete:
            raise CommandError(f'{source} is not a completed run directory', returncode=2)
        config = source.read_config()
        name = options['fixture'] or config.fixture
        if not name:
            raise CommandError(f'{source} was not a simulated run; pass --fixture', returncode=2)
        universe = fixture_or_error(name).universe()
        names = [record['canonical_name'] for record in source.read_assets()]
        return evaluate_sim_run(universe, config.query, names, source.read_epochs())

    def evaluate_benchmark(self, options, out):
        if not (options['benchmark'] and options['predictions']):
            raise CommandError('benchmark mode needs both --benchmark and --predictions', returncode=2)
        try:
            examples = [BenchmarkExample.from_record(r) for r in read_records(options['benchmark'], 'example')]
        except KeyError as e:
            raise CommandError(f'{options["benchmark"]}: example line without {e}', returncode=2)
        predictions = read_predictions(options['predictions'])

        if options['grader'] == 'chat':
            grader = ChatGrader.from_settings(transcript_dir=out.transcripts)
        else:
            if not options['fixture']:
                raise CommandError('the oracle grader needs --fixture', returncode=2)
            grader = OracleGrader(fixture_or_error(options['fixture']).universe())
        return evaluate_run(predictions, examples, grader), []
