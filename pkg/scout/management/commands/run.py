from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from agents.registry import BACKEND_NAMES
from scout.exceptions import BackendFailure, RunDirectoryComplete
from scout.forms import RunConfigForm, load_config_file, run_config_form
from scout.models import Ablation, DedupMode
from scout.rundir import RunDirectory
from scout.runner import execute_run
from simworld.query import SimQuery
from simworld.universe import load_fixture


def add_run_arguments(parser):
    parser.add_argument('--query', help='screening query')
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--m', type=int, help='leaves explored in parallel per epoch')
    parser.add_argument('--k', type=int, help='child directives per expansion')
    parser.add_argument('--c', type=float, help='UCB exploration constant')
    parser.add_argument('--languages', help='comma separated, e.g. en,zh')
    parser.add_argument('--dedup', dest='dedup_mode', choices=DedupMode.values)
    parser.add_argument('--seed', type=int)
    parser.add_argument('--backend', choices=BACKEND_NAMES)
    parser.add_argument('--call-ceiling', dest='call_ceiling', type=int, help='backend calls allowed per epoch')
    parser.add_argument('--fixture', help='simulated universe fixture (name or path)')
    parser.add_argument('--config', help='JSON run config; flags override it')


def load_layers(options):
    if not options.get('config'):
        return []
    try:
        return [load_config_file(options['config'])]
    except ValueError as e:
        raise CommandError(str(e), returncode=2)


def resolve_config(form):
    """검증된 폼 -> (RunConfig, fixture)"""
    if not form.is_valid():
        raise CommandError(form.errors_as_text(), returncode=2)
    fixture = None
    if form.cleaned_data.get('fixture'):
        try:
            fixture = load_fixture(form.cleaned_data['fixture'])
        except (OSError, KeyError, ValueError) as e:
            raise CommandError(f'cannot load fixture {form.cleaned_data["fixture"]}: {e}', returncode=2)
    config = form.to_config(query=fixture.query if fixture else None)
    if not config.query:
        raise CommandError('query is required (the fixture does not define one)', returncode=2)
    if fixture is not None and config.backend == 'scripted':
        try:
            SimQuery.parse(config.query)
        except ValueError as e:
            raise CommandError(f'scripted backends read the query as field=value criteria: {e}', returncode=2)
    return config, fixture


def execute(config, out, fixture, stdout):
    try:
        result, evaluation = execute_run(config, out, fixture)
    except ImproperlyConfigured as e:
        raise CommandError(str(e), returncode=2)
    except RunDirectoryComplete as e:
        raise CommandError(str(e), returncode=2)
    except BackendFailure as e:
        raise CommandError(f'{e}; partial results written to {out}', returncode=1)
    summary = f'{len(result.assets)} assets after {len(result.reports)} epochs -> {out}'
    if evaluation is not None and evaluation.recall is not None:
        summary += f' (recall {evaluation.recall:.4f})'
    stdout.write(summary)
    return result, evaluation


class Command(BaseCommand):
    help = 'Run the directive tree search and write a run directory.'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--ablation', choices=Ablation.values)
        parser.add_argument('--replay', help='completed run directory to re-execute from its config snapshot')
        parser.add_argument('--out', required=True, help='run directory to create')

    def handle(self, *args, **options):
        layers = []
        if options.get('replay'):
            source = RunDirectory(options['replay'])
            if not source.is_complete:
                raise CommandError(f'{source} is not a completed run directory', returncode=2)
            try:
                snapshot = load_config_file(source / 'config.json')
            except ValueError as e:
                raise CommandError(str(e), returncode=2)
            layers.append({key: value for key, value in snapshot.items() if key in RunConfigForm.base_fields})
        layers += load_layers(options)

        config, fixture = resolve_config(run_config_form(options, *layers))
        execute(config, options['out'], fixture, self.stdout)
