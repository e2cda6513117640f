from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from benchgen.backends import (
    ScriptedEnricher, ScriptedMiner, ScriptedQueryGenerator, ScriptedQueryValidator, ScriptedSerp,
    build_chat_query_backends,
)
from benchgen.pipeline import BenchmarkPipeline, write_benchmark
from benchgen.querygen import load_query_groups
from benchgen.schedule import load_regions
from scout.exceptions import RunDirectoryComplete
from scout.rundir import RunDirectory
from simworld.universe import load_fixture
from utils.jsonl import write_json

QUERY_BACKENDS = ('scripted', 'chat')


class Command(BaseCommand):
    help = (
        'Build a completeness benchmark: mine regional sources, enrich, keep under-the-radar assets, '
        'generate leak-free queries and confirm them with the validator. Mining, enrichment and '
        'search-page counts read a simulated universe.'
    )

    def add_arguments(self, parser):
        parser.add_argument('--fixture', required=True, help='simulated universe the miner reads')
        parser.add_argument('--regions', help='region/source fixture (default benchgen/fixtures/regions.json)')
        parser.add_argument('--groups', help='query group fixture (default benchgen/fixtures/query_groups.json)')
        parser.add_argument('--cycles', type=int, default=1, help='schedule cycles to mine')
        parser.add_argument('--fraction', type=float, help='share of assets subject to the discoverability filter')
        parser.add_argument('--searches', type=int, help='search queries per language for the discoverability profile')
        parser.add_argument('--max-rounds', dest='max_rounds', type=int, help='validator/revision rounds')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--backend', choices=QUERY_BACKENDS, default='scripted',
                            help='query generator and validator backend')
        parser.add_argument('--out', required=True)

    def handle(self, *args, **options):
        for name in ('cycles', 'searches', 'max_rounds'):
            if options[name] is not None and options[name] < 1:
                raise CommandError(f'--{name.replace("_", "-")} must be >= 1', returncode=2)
        if options['fraction'] is not None and not 0.0 <= options['fraction'] <= 1.0:
            raise CommandError('--fraction must be within [0, 1]', returncode=2)

        try:
            universe = load_fixture(options['fixture']).universe()
            regions = load_regions(options['regions'])
            groups = load_query_groups(options['groups'])
        except (OSError, KeyError, TypeError, ValueError) as e:
            raise CommandError(f'cannot load fixtures: {e}', returncode=2)

        out = RunDirectory(options['out'])
        try:
            out.ensure_writable()
            if options['backend'] == 'chat':
                generator, validator = build_chat_query_backends(out.transcripts, options['seed'])
            else:
                generator, validator = ScriptedQueryGenerator(), ScriptedQueryValidator()
            out = RunDirectory.create(out.path)
        except (ImproperlyConfigured, RunDirectoryComplete) as e:
            raise CommandError(str(e), returncode=2)

        pipeline = BenchmarkPipeline(
            regions, groups,
            miner=ScriptedMiner(universe, settings.SIMWORLD['VISIBILITY_THRESHOLD']),
            enricher=ScriptedEnricher(universe),
            serp=ScriptedSerp(universe),
            generator=generator,
            validator=validator,
            cycles=options['cycles'],
            fraction=options['fraction'],
            searches=options['searches'],
            max_rounds=options['max_rounds'],
            seed=options['seed'],
        )
        build = pipeline.run()
        write_json(out / 'config.json', {
            key: options[key]
            for key in ('fixture', 'regions', 'groups', 'cycles', 'fraction', 'searches', 'max_rounds', 'seed', 'backend')
        })
        write_benchmark(out.path, build)
        out.mark_complete()
        self.stdout.write(f'{len(build.entries)} benchmark queries, {len(build.rejected)} rejected -> {out}')
