from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from scout.forms import run_config_form
from scout.management.commands.run import execute, resolve_config
from scout.models import Ablation, DedupMode
from utils.forms import CommaListField

SUMMARY_COLUMNS = ('ablation', 'epochs', 'assets', 'investigator_calls', 'recall', 'precision', 'f1')


class Command(BaseCommand):
    help = 'Run ablations of the search against a seeded simulated universe and collect their quality series.'

    def add_arguments(self, parser):
        parser.add_argument('--fixture', required=True, help='fixture name under simworld/fixtures or a path')
        parser.add_argument('--ablation', default=Ablation.NONE.value,
                            help=f'comma separated subset of {",".join(Ablation.values)}')
        parser.add_argument('--epochs', type=int)
        parser.add_argument('--m', type=int)
        parser.add_argument('--k', type=int)
        parser.add_argument('--languages', help='comma separated, e.g. en,zh')
        parser.add_argument('--dedup', dest='dedup_mode', choices=DedupMode.values)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--query', help='overrides the fixture query')
        parser.add_argument('--dump-universe', action='store_true', help='also write universe.jsonl')
        parser.add_argument('--out', required=True)

    def handle(self, *args, **options):
        ablations = CommaListField().to_python(options['ablation'])
        unknown = [name for name in ablations if name not in Ablation.values]
        if not ablations or unknown:
            raise CommandError(
                f'unknown ablation: {", ".join(unknown) or "(none)"}; expected {",".join(Ablation.values)}',
                returncode=2,
            )

        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        fixture = None
        for ablation in dict.fromkeys(ablations):
            # 시뮬레이션은 항상 scripted backend
            flags = dict(options, ablation=ablation, backend='scripted')
            config, fixture = resolve_config(run_config_form(flags))
            run_dir = out / ablation
            result, evaluation = execute(config, run_dir, fixture, self.stdout)
            if evaluation is not None:
                (out / f'quality-{ablation}.tsv').write_text(
                    (run_dir / 'quality.tsv').read_text(encoding='utf-8'), encoding='utf-8',
                )
            rows.append((ablation, len(result.reports), len(result.assets), result.investigator_calls, evaluation))

        if options['dump_universe']:
            fixture.universe().write(out / 'universe.jsonl')
        (out / 'summary.tsv').write_text(render_summary(rows), encoding='utf-8')
        self.stdout.write(render_summary(rows))


def render_summary(rows):
    def cell(value):
        return '' if value is None else f'{value:.6f}'

    lines = ['\t'.join(SUMMARY_COLUMNS)]
    for ablation, epochs, assets, calls, evaluation in rows:
        scores = (None, None, None) if evaluation is None else (evaluation.recall, evaluation.precision, evaluation.f1)
        lines.append('\t'.join([ablation, str(epochs), str(assets), str(calls), *(cell(s) for s in scores)]))
    return '\n'.join(lines) + '\n'
