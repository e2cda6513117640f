import json
import tempfile
from collections import Counter
from io import StringIO
from itertools import islice
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from agents.chat import ChatClient
from agents.exceptions import MalformedOutput, TransportError
from agents.schemas import MatchVerdict
from benchgen.backends import (
    ChatQueryGenerator, ChatQueryValidator, ScriptedEnricher, ScriptedMiner, ScriptedQueryGenerator,
    ScriptedQueryValidator, ScriptedSerp,
)
from benchgen.discoverability import (
    DiscoverabilityProfile, filter_under_radar, search_terms, profile_discoverability, under_radar_filter,
)
from benchgen.exceptions import LeakageDetected, Unresolvable
from benchgen.pipeline import BenchmarkPipeline, enrichment_filter
from benchgen.querygen import (
    GeneratedQuery, Intent, QueryGroup, fill_slots, find_leak, generate_query, load_query_groups, satisfiable_groups,
)
from benchgen.revise import validate_and_revise
from benchgen.schedule import MiningTuple, Region, Source, cycle_length, is_curated, load_regions, region_tuples, schedule_tuples
from scout.models import Amplification, AssetRecord, Provenance, TrialRecord
from simworld.universe import UniverseSpec, generate_universe
from utils.jsonl import read_lines
from utils.text import normalize_name


def asset_record(name='AB-1001', *aliases, stage='clinical', modality='antibody', target='pd-1',
                 indication='nsclc', origin='zh', trials=True):
    return AssetRecord(
        canonical_name=name,
        aliases={name, *aliases},
        origin_language=origin,
        stage_class=stage,
        modality=modality,
        targets=[target],
        indications=[indication],
        trials=[TrialRecord(indication, 'Phase 1')] if trials else [],
        provenance=[Provenance('modality', f'https://cn.news-zh.sim/{name}', f'{name} is an antibody')],
    )


class FixedSerp:

    def __init__(self, pages):
        self.pages_by_language = pages
        self.calls = []

    def pages(self, query, language):
        self.calls.append((query, language))
        return self.pages_by_language.get(language, 0)


class ScheduleTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.regions = load_regions()

    def test_cycle_is_a_permutation(self):
        every = [t for region in self.regions for t in region_tuples(region)]
        self.assertEqual(cycle_length(self.regions), 62)
        self.assertEqual(len(set(every)), 62)
        stream = list(islice(schedule_tuples(self.regions), 62 * 3))
        for i in range(3):
            cycle = stream[62 * i:62 * (i + 1)]
            self.assertEqual(Counter(cycle), Counter(every))
            self.assertEqual(cycle, stream[:62])

    def test_round_robin_over_regions(self):
        first = list(islice(schedule_tuples(self.regions), len(self.regions)))
        self.assertEqual([t.region for t in first], [r.region for r in self.regions])
        self.assertTrue(all(is_curated(self.regions, t) for t in first))

    def test_deterministic(self):
        self.assertEqual(list(schedule_tuples(self.regions, 2)), list(schedule_tuples(load_regions(), 2)))

    def test_single_source(self):
        region = Region('au', 'Australia', (Source('PharmaDispatch', 'en'),))
        self.assertEqual(
            [str(t) for t in schedule_tuples([region], 1)],
            ['<au, en, PharmaDispatch, preclinical>', '<au, en, PharmaDispatch, clinical>'],
        )

    def test_invalid(self):
        with self.assertRaises(ValueError):
            list(schedule_tuples([], 1))
        with self.assertRaises(ValueError):
            Region('xx', 'Nowhere', ())
        with self.assertRaises(ValueError):
            MiningTuple('cn', 'zh', 'Yaozhi', 'approved')
        self.assertFalse(is_curated(self.regions, MiningTuple('cn', 'zh', 'Weibo', 'clinical')))

    def test_cis_sources_keep_their_languages(self):
        cis = next(r for r in self.regions if r.region == 'cis')
        self.assertEqual(cis.languages, ('ru', 'uk'))


class DiscoverabilityTest(SimpleTestCase):

    def test_truth_table(self):
        table = {(9, 1): True, (10, 1): False, (3, 0): False, (0, 5): True, (9, 0): False, (0, 0): False}
        for (english, local), expected in table.items():
            self.assertIs(under_radar_filter(DiscoverabilityProfile(english, local)), expected, (english, local))

    def test_monotone(self):
        for english in range(0, 15):
            for local in range(0, 4):
                if under_radar_filter(DiscoverabilityProfile(english, local)):
                    self.assertTrue(under_radar_filter(DiscoverabilityProfile(english, local + 1)))
                    if english:
                        self.assertTrue(under_radar_filter(DiscoverabilityProfile(english - 1, local)))

    def test_profile_validation(self):
        with self.assertRaises(ValueError):
            DiscoverabilityProfile(-1, 0)
        with self.assertRaises(ValueError):
            DiscoverabilityProfile(1.5, 0)

    def test_search_terms_cycle_aliases(self):
        record = asset_record('AB-1001', 'ab1001')
        self.assertEqual(
            search_terms(record, 4), ['"AB-1001"', '"ab1001" clinical trial', '"AB-1001" drug', '"ab1001"'],
        )

    def test_profile_uses_origin_language(self):
        serp = FixedSerp({'en': 4, 'zh': 30})
        self.assertEqual(profile_discoverability(asset_record(), serp, 3), DiscoverabilityProfile(4, 30))
        self.assertEqual({language for _, language in serp.calls}, {'en', 'zh'})

        serp = FixedSerp({'en': 12})
        self.assertEqual(profile_discoverability(asset_record(origin='en'), serp, 3), DiscoverabilityProfile(12, 12))
        self.assertEqual({language for _, language in serp.calls}, {'en'})

    def test_filter_fraction(self):
        records = [asset_record(f'AB-{1000 + i}') for i in range(4)]
        profiles = {r.canonical_name: DiscoverabilityProfile(20, 5) for r in records}
        kept, dropped = filter_under_radar(records, profiles, fraction=1.0)
        self.assertEqual((kept, len(dropped)), ([], 4))
        kept, dropped = filter_under_radar(records, profiles, fraction=0.0)
        self.assertEqual((kept, dropped), (records, []))
        kept, dropped = filter_under_radar(records, profiles, fraction=0.5, seed=3)
        self.assertEqual((len(kept), len(dropped)), (2, 2))
        self.assertEqual(kept, [r for r in records if r in kept])
        with self.assertRaises(ValueError):
            filter_under_radar(records, profiles, fraction=1.5)


class QueryGenerationTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.groups = load_query_groups()
        cls.by_key = {group.key: group for group in cls.groups}

    def test_fixture_covers_every_intent(self):
        self.assertEqual({group.intent for group in self.groups}, set(Intent.values))

    def test_indication_landscape_example(self):
        record = asset_record(stage='preclinical', indication='dmd', trials=False)
        generated = ScriptedQueryGenerator().generate(record, self.by_key['G4'])
        self.assertEqual(
            generated.text, 'Find all drug assets currently in preclinical or clinical development for treatment of DMD.',
        )
        self.assertEqual(dict(generated.constraints)['indications'], ('dmd',))

    def test_unsatisfiable_groups_are_skipped(self):
        record = asset_record(trials=False)
        self.assertIsNone(fill_slots(record, self.by_key['G5']))  # 활성 자산
        self.assertIsNone(fill_slots(record, self.by_key['G10']))
        self.assertIsNone(fill_slots(record, self.by_key['G1']))
        groups = [self.by_key['G5'], self.by_key['G4']]
        self.assertEqual(satisfiable_groups(record, groups), [self.by_key['G4']])
        for seed in range(10):
            self.assertEqual(generate_query(record, groups, ScriptedQueryGenerator(), seed=seed).group.key, 'G4')
        with self.assertRaises(ValueError):
            generate_query(record, [self.by_key['G5']], ScriptedQueryGenerator())

    def test_group_validation(self):
        for kwargs in (
            {'intent': 'pricing', 'tier': 'tight', 'template': 'Find [modality] assets.'},
            {'intent': 'geography', 'tier': 'easy', 'template': 'Find [modality] assets.'},
            {'intent': 'geography', 'tier': 'tight', 'template': 'Find assets.'},
            {'intent': 'geography', 'tier': 'tight', 'template': 'Find [sponsor] assets.'},
        ):
            with self.assertRaises(ValueError, msg=kwargs):
                QueryGroup(key='G0', **kwargs)

    def test_five_hundred_queries_do_not_leak(self):
        universe = generate_universe(UniverseSpec(seed=21, asset_count=500, languages=('en', 'zh', 'ja', 'ko'),
                                                  distractor_count=0))
        generator = ScriptedQueryGenerator()
        validator = ScriptedQueryValidator()
        for entity in universe.assets:
            record = entity.to_asset_record()
            generated = generate_query(record, self.groups, generator)
            text = normalize_name(generated.text)
            self.assertIsNone(find_leak(generated.text, record))
            self.assertFalse([alias for alias in record.aliases if normalize_name(alias) in text], generated.text)
            self.assertEqual(generated.attempts, 1)
            self.assertTrue(validator.validate_query(generated, record).is_match, generated.text)

    def test_leak_is_regenerated_then_rejected(self):
        record = asset_record('AB-1001', 'zoravetamab')
        group = self.by_key['G4']
        leaky = GeneratedQuery('Find programs like zoravetamab in NSCLC.', group)
        clean = GeneratedQuery('Find all drug assets in NSCLC.', group)

        backend = mock.Mock()
        backend.generate.side_effect = [leaky, clean]
        self.assertEqual(generate_query(record, [group], backend).attempts, 2)

        backend = mock.Mock()
        backend.generate.return_value = GeneratedQuery('Is AB 1001 still active?', group)
        with self.assertRaises(LeakageDetected) as ctx:
            generate_query(record, [group], backend, retries=2)
        self.assertEqual(backend.generate.call_count, 3)
        self.assertEqual(ctx.exception.token, 'ab1001')

    def test_provenance_url_leaks(self):
        record = asset_record('AB-1001')
        self.assertEqual(
            find_leak('See https://cn.news-zh.sim/AB-1001 for details', record), 'ab-1001',
        )
        record = AssetRecord('XY-9', {'XY-9'}, provenance=[Provenance('modality', 'https://a.sim/p/77', 'q')])
        self.assertEqual(find_leak('as reported at https://a.sim/p/77.', record), 'https://a.sim/p/77')


class ValidateAndReviseTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.by_key = {group.key: group for group in load_query_groups()}

    def test_first_round_pass(self):
        record = asset_record()
        generated = ScriptedQueryGenerator().generate(record, self.by_key['G12'])
        confirmed = validate_and_revise(generated, record, ScriptedQueryValidator(), ScriptedQueryGenerator())
        self.assertEqual((confirmed.rounds, confirmed.history), (1, ()))

    def test_stage_is_loosened_in_round_two(self):
        record = asset_record(stage='clinical')
        generated = ScriptedQueryGenerator().generate(record, self.by_key['G12'])
        self.assertIn('in clinical development', generated.text)
        validator = ScriptedQueryValidator(view={record.canonical_name: {'stage_class': 'preclinical'}})
        confirmed = validate_and_revise(generated, record, validator, ScriptedQueryGenerator(), max_rounds=5)
        self.assertEqual(confirmed.rounds, 2)
        self.assertIn('in preclinical or clinical development', confirmed.generated.text)
        self.assertTrue(confirmed.history[0][1].startswith('wrong stage_class:'))

    def test_always_rejecting_validator_terminates(self):
        record = asset_record()
        generated = ScriptedQueryGenerator().generate(record, self.by_key['G12'])
        validator = mock.Mock()
        validator.validate_query.return_value = MatchVerdict.non_match('wrong modality: never satisfied')
        generator = mock.Mock(wraps=ScriptedQueryGenerator())
        with self.assertRaises(Unresolvable) as ctx:
            validate_and_revise(generated, record, validator, generator, max_rounds=3)
        self.assertEqual(validator.validate_query.call_count, 3)
        self.assertEqual(generator.revise.call_count, 2)
        self.assertEqual(ctx.exception.rounds, 3)

    def test_leaky_or_failed_revision_keeps_the_previous_query(self):
        record = asset_record('AB-1001')
        generated = ScriptedQueryGenerator().generate(record, self.by_key['G12'])
        validator = mock.Mock()
        validator.validate_query.return_value = MatchVerdict.non_match('wrong targets: no')
        generator = mock.Mock()
        generator.revise.side_effect = [GeneratedQuery('Find AB-1001 lookalikes.', generated.group), TransportError('503')]
        with self.assertRaises(Unresolvable) as ctx:
            validate_and_revise(generated, record, validator, generator, max_rounds=3)
        self.assertEqual(ctx.exception.query, generated.text)
        with self.assertRaises(ValueError):
            validate_and_revise(generated, record, validator, generator, max_rounds=0)


class ChatQueryBackendTest(SimpleTestCase):

    def test_generator(self):
        client = mock.Mock(spec=ChatClient)
        client.complete_json.return_value = {'query': ' Find China-originated antibodies for NSCLC. '}
        group = load_query_groups()[2]
        generated = ChatQueryGenerator(client).generate(asset_record(), group, attempt=2)
        self.assertEqual(generated.text, 'Find China-originated antibodies for NSCLC.')
        self.assertEqual(generated.group, group)
        self.assertEqual(client.complete_json.call_args.args[0], 'query-generator')

        client.complete_json.return_value = {'query': ''}
        with self.assertRaises(MalformedOutput):
            ChatQueryGenerator(client).generate(asset_record(), group)

    def test_validator_uses_first_citation(self):
        validator = mock.Mock()
        validator.validate.return_value = MatchVerdict.non_match('wrong stage: AB-1001 is clinical')
        record = asset_record()
        generated = GeneratedQuery('Find preclinical antibodies.', load_query_groups()[0])
        verdict = ChatQueryValidator(validator).validate_query(generated, record)
        self.assertFalse(verdict.is_match)
        query, candidate = validator.validate.call_args.args
        self.assertEqual(query, 'Find preclinical antibodies.')
        self.assertEqual((candidate.raw_name, candidate.discovered_language), ('AB-1001', 'zh'))
        self.assertEqual(candidate.source_url, record.provenance[0].source_url)


class PipelineTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.universe = generate_universe(UniverseSpec(seed=4, asset_count=120, languages=('en', 'zh', 'ja', 'ko'),
                                                      distractor_count=10))

    def pipeline(self, **kwargs):
        return BenchmarkPipeline(
            load_regions(), load_query_groups(),
            miner=ScriptedMiner(self.universe), enricher=ScriptedEnricher(self.universe),
            serp=ScriptedSerp(self.universe), generator=ScriptedQueryGenerator(),
            validator=ScriptedQueryValidator(), max_workers=4, **kwargs,
        )

    def test_enrichment_filter(self):
        fake = asset_record('Nova Platform')
        fake.is_valid_drug = False
        inactive = asset_record('AB-2')
        inactive.is_active = False
        approved = asset_record('AB-3')
        approved.approved_geographies = ['cn']
        loud = asset_record('AB-4')
        loud.amplification_flags = {Amplification.LARGE_PHARMA_DEAL}
        quiet = asset_record('AB-5')
        kept, dropped = enrichment_filter([fake, inactive, approved, loud, quiet])
        self.assertEqual(kept, [quiet])
        self.assertEqual(
            [reason for _, reason in dropped],
            ['not a drug asset', 'inactive', 'approved', 'globally amplified (large_pharma_deal)'],
        )

    def test_benchmark_entries(self):
        build = self.pipeline().run()
        self.assertTrue(build.entries)
        self.assertEqual(build.stats['tuples'], 62)
        self.assertEqual(build.stats['benchmark'], len(build.entries))
        self.assertEqual([e['query_id'] for e in build.entries], [f'b{i:04d}' for i in range(1, len(build.entries) + 1)])
        self.assertEqual(len({e['asset_name'] for e in build.entries}), len(build.entries))

        for entry in build.entries:
            entity = self.universe.lookup(entry['asset_name'])
            self.assertTrue(entity.is_valid_drug)
            self.assertFalse(entity.amplified and entity.origin_language != 'en')
            profile = DiscoverabilityProfile(**entry['discoverability'])
            self.assertTrue(under_radar_filter(profile))
            query = normalize_name(entry['query'])
            self.assertFalse([a for a in entry['aliases'] if normalize_name(a) in query], entry['query'])
            self.assertEqual(entry['rounds'], 1)
            self.assertTrue(entry['mined_from'].startswith(f'<{entity.region}, '))

        reasons = {r['reason'] for r in build.rejected}
        self.assertIn('not a drug asset', reasons)
        self.assertIn('globally amplified (major_us_trade_press)', reasons)

    def test_deterministic(self):
        self.assertEqual(self.pipeline(seed=2).run().entries, self.pipeline(seed=2).run().entries)


class BenchgenCommandTest(SimpleTestCase):

    def test_writes_benchmark_directory(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / 'bench'
            call_command('benchgen', fixture='aliases', max_rounds=2, out=str(out), stdout=StringIO())
            for name in ('benchmark.jsonl', 'rejected.jsonl', 'stats.json', 'config.json', 'COMPLETE'):
                self.assertTrue((out / name).exists(), name)
            examples = read_lines(out / 'benchmark.jsonl', 'example')
            stats = json.loads((out / 'stats.json').read_text(encoding='utf-8'))
            self.assertEqual(stats['benchmark'], len(examples))
            for example in examples:
                self.assertEqual(example['example_id'], f'{example["query_id"]}-1')

            with self.assertRaises(CommandError) as ctx:
                call_command('benchgen', fixture='aliases', out=str(out), stdout=StringIO())
            self.assertEqual(ctx.exception.returncode, 2)

    def test_bad_arguments(self):
        with tempfile.TemporaryDirectory() as tmp:
            for options in ({'fraction': 1.5}, {'max_rounds': 0}, {'fixture': 'no-such-fixture'}):
                options = dict({'fixture': 'aliases', 'out': str(Path(tmp) / 'bench')}, **options)
                with self.assertRaises(CommandError, msg=options) as ctx:
                    call_command('benchgen', stdout=StringIO(), **options)
                self.assertEqual(ctx.exception.returncode, 2)
