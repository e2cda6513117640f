import shutil
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from agents.base import CallMeter
from agents.schemas import InvestigatorRequest
from agents.scripted import build_scripted_backends
from scout.orchestrator import LogicalClock, RunConfig, build_orchestrator
from simworld.investigate import discoverable_only_in, sim_investigate
from simworld.query import Criterion, SimQuery
from simworld.universe import (
    LANGUAGE_REGIONS, UniverseSpec, generate_universe, load_fixture, oracle_answer, read_universe,
)
from utils.jsonl import read_json, read_lines, write_json


def run_search(fixture, universe, **kwargs):
    config = RunConfig(query=fixture.query, **kwargs)
    meter = CallMeter()
    backends = build_scripted_backends(universe, budget=fixture.budget, distractor_rate=fixture.distractor_rate)
    orchestrator = build_orchestrator(
        config, backends, meter=meter, clock=LogicalClock(meter),
        ground_truth=oracle_answer(universe, fixture.query),
    )
    return orchestrator.run()


class UniverseTest(SimpleTestCase):

    def test_same_spec_same_universe(self):
        spec = UniverseSpec(seed=5, asset_count=30, languages=('en', 'ko'), distractor_count=6)
        self.assertEqual(generate_universe(spec).to_lines(), generate_universe(spec).to_lines())
        other = UniverseSpec(seed=6, asset_count=30, languages=('en', 'ko'), distractor_count=6)
        self.assertNotEqual(generate_universe(spec).to_lines(), generate_universe(other).to_lines())

    def test_entity_invariants(self):
        universe = load_fixture('u200').universe()
        self.assertEqual((len(universe.assets), len(universe.lookalikes)), (200, 40))
        for entity in universe.entities:
            self.assertIn(entity.canonical_name, entity.aliases)
            self.assertEqual(entity.region, LANGUAGE_REGIONS[entity.origin_language])
            self.assertGreaterEqual(entity.weight(entity.origin_language), 0.6)
            self.assertIs(universe.lookup(entity.canonical_name), entity)
        for entity in universe.assets:
            entity.to_asset_record().validate()

    def test_spec_validation(self):
        for kwargs in ({'asset_count': -1}, {'languages': ()}, {'languages': ('en', 'xx')},
                       {'alias_collision_rate': 2.0}):
            with self.assertRaises(ValueError, msg=kwargs):
                UniverseSpec(**kwargs)

    def test_write_universe(self):
        universe = generate_universe(UniverseSpec(seed=1, asset_count=4, languages=('en',), distractor_count=1))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'universe.jsonl'
            universe.write(path)
            self.assertEqual(len(read_lines(path, 'entity')), 5)
            self.assertEqual(read_lines(path, 'universe')[0]['seed'], 1)


class SnapshotTest(SimpleTestCase):

    def test_checked_in_snapshots_match_the_generator(self):
        for name in ('u200', 'aliases'):
            with self.subTest(fixture=name):
                fixture = load_fixture(name)
                self.assertTrue(fixture.snapshot.exists())
                self.assertEqual(fixture.generate().to_lines(), fixture.snapshot.read_text(encoding='utf-8'))

    def test_fixture_loads_its_snapshot(self):
        fixture = load_fixture('u200')
        universe = fixture.universe()
        self.assertEqual(universe.spec, fixture.spec)
        self.assertEqual((len(universe.assets), len(universe.lookalikes)), (200, 40))
        # 다시 쓰면 같은 바이트
        self.assertEqual(universe.to_lines(), fixture.snapshot.read_text(encoding='utf-8'))
        self.assertEqual(read_universe(fixture.snapshot).to_lines(), universe.to_lines())

    def test_snapshot_for_another_spec(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'aliases.json'
            data = read_json(load_fixture('aliases').snapshot.with_name('aliases.json'))
            write_json(path, dict(data, seed=data['seed'] + 1))
            shutil.copy(load_fixture('aliases').snapshot, Path(tmp) / 'aliases.universe.jsonl')
            with self.assertRaises(ValueError):
                load_fixture(str(path)).universe()

    def test_snapshot_command(self):
        out = StringIO()
        call_command('snapshot', 'aliases', check=True, stdout=out)
        self.assertIn('matches the generator', out.getvalue())

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'aliases.json'
            shutil.copy(load_fixture('aliases').snapshot.with_name('aliases.json'), path)
            call_command('snapshot', str(path), stdout=StringIO())
            snapshot = Path(tmp) / 'aliases.universe.jsonl'
            self.assertEqual(
                snapshot.read_text(encoding='utf-8'),
                load_fixture('aliases').snapshot.read_text(encoding='utf-8'),
            )

            lines = snapshot.read_text(encoding='utf-8').splitlines(keepends=True)
            snapshot.write_text(''.join(lines[:3] + [lines[3].replace('"amplified": ', '"amplified":  ')] + lines[4:]),
                                encoding='utf-8')
            with self.assertRaises(CommandError) as ctx:
                call_command('snapshot', str(path), check=True, stdout=StringIO())
            self.assertEqual(ctx.exception.returncode, 1)
            self.assertIn('line 4', str(ctx.exception))

            snapshot.unlink()
            with self.assertRaises(CommandError) as ctx:
                call_command('snapshot', str(path), check=True, stdout=StringIO())
            self.assertEqual(ctx.exception.returncode, 1)

        with self.assertRaises(CommandError) as ctx:
            call_command('snapshot', 'no-such-fixture', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)


class SimQueryTest(SimpleTestCase):
    text = 'modality=antibody|bispecific; stage=clinical || target=lat1'

    def test_round_trip(self):
        self.assertEqual(str(SimQuery.parse(self.text)), self.text)
        self.assertEqual(SimQuery.parse(self.text).constrained_fields(), {'modality', 'stage', 'target'})

    def test_bad_criteria(self):
        for text in ('color=red', 'modality', 'modality= '):
            with self.assertRaises(ValueError, msg=text):
                SimQuery.parse(text)

    def test_oracle_answer(self):
        universe = load_fixture('aliases').universe()
        everything = {e.canonical_name for e in universe.assets}
        self.assertEqual(oracle_answer(universe, ''), everything)
        self.assertEqual(oracle_answer(universe, SimQuery.false()), frozenset())
        expected = {
            e.canonical_name for e in universe.assets
            if (e.modality in ('antibody', 'bispecific') and e.stage == 'clinical') or e.target == 'lat1'
        }
        self.assertEqual(oracle_answer(universe, self.text), expected)

    def test_narrowed_is_a_subset(self):
        universe = load_fixture('u200').universe()
        parent = SimQuery.parse('stage=clinical')
        child = parent.narrowed(Criterion('modality', frozenset({'antibody'})))
        self.assertTrue(oracle_answer(universe, child) <= oracle_answer(universe, parent))


class SimInvestigateTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.universe = load_fixture('u200').universe()

    def test_window_is_exhausted_by_known_names(self):
        request = InvestigatorRequest(query='stage=clinical', language='en')
        first = sim_investigate(self.universe, request, budget=5)
        self.assertEqual(len(first.hits), 5)
        for hit in first.hits:
            entity = self.universe.get(hit.entity_id)
            self.assertEqual(entity.stage, 'clinical')
            self.assertTrue(entity.visible_in('en', 0.5))
        self.assertEqual(first.executed_queries, ['[en] stage=clinical'])

        known = InvestigatorRequest(query='stage=clinical', language='en', known_assets=tuple(h.name for h in first.hits))
        self.assertEqual(sim_investigate(self.universe, known, budget=5).hits, [])

    def test_distractors_fail_the_query(self):
        request = InvestigatorRequest(query='stage=clinical', language='zh')
        search = sim_investigate(self.universe, request, budget=5, distractor_rate=1.0, seed=3)
        distractors = [hit for hit in search.hits if hit.distractor]
        self.assertTrue(distractors)
        query = SimQuery.parse('stage=clinical')
        for hit in distractors:
            entity = self.universe.get(hit.entity_id)
            self.assertTrue(not entity.is_valid_drug or not query.matches(entity))
        again = sim_investigate(self.universe, request, budget=5, distractor_rate=1.0, seed=3)
        self.assertEqual(search, again)

    def test_local_names(self):
        request = InvestigatorRequest(query='origin=zh', language='zh')
        for hit in sim_investigate(self.universe, request, budget=5).hits:
            self.assertTrue(hit.name.endswith('注射液'))
            self.assertEqual(self.universe.lookup(hit.name).id, hit.entity_id)

    def test_budget(self):
        with self.assertRaises(ValueError):
            sim_investigate(self.universe, InvestigatorRequest(query=''), budget=0)


class AblationTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.fixture = load_fixture('u200')
        cls.universe = cls.fixture.universe()

    def test_tree_keeps_finding_after_flat_plateaus(self):
        languages = self.fixture.spec.languages
        tree = run_search(self.fixture, self.universe, epochs=10, m=1, k=3, languages=languages)
        flat = run_search(self.fixture, self.universe, epochs=10, m=1, k=3, languages=languages, ablation='flat')

        tree_recall = [report.recall for report in tree.reports]
        flat_recall = [report.recall for report in flat.reports]
        self.assertGreaterEqual(flat.investigator_calls, tree.investigator_calls)
        self.assertGreaterEqual(tree_recall[-1], flat_recall[-1])
        self.assertEqual(tree_recall, sorted(tree_recall))
        self.assertEqual(len(set(flat_recall[-4:])), 1)
        self.assertTrue(any(b > a for a, b in zip(tree_recall[-4:], tree_recall[-3:])))

    def test_second_language_finds_more(self):
        zh_only = discoverable_only_in(self.universe, self.fixture.query, 'zh', among=('en', 'zh'))
        self.assertTrue(zh_only)
        english = run_search(self.fixture, self.universe, epochs=6, languages=('en',))
        both = run_search(self.fixture, self.universe, epochs=6, languages=('en', 'zh'))
        self.assertGreater(both.reports[-1].recall, english.reports[-1].recall)


class SimulateCommandTest(SimpleTestCase):

    def test_writes_ablation_runs_and_summary(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp)
            call_command('simulate', fixture='aliases', ablation='none,flat,none', epochs=2,
                         dump_universe=True, out=str(out), stdout=StringIO())
            for name in ('none/COMPLETE', 'flat/COMPLETE', 'quality-none.tsv', 'quality-flat.tsv', 'universe.jsonl'):
                self.assertTrue((out / name).exists(), name)
            rows = (out / 'summary.tsv').read_text(encoding='utf-8').splitlines()
            quality = (out / 'quality-none.tsv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(rows[0].split('\t'), ['ablation', 'epochs', 'assets', 'investigator_calls', 'recall', 'precision', 'f1'])
        self.assertEqual([row.split('\t')[0] for row in rows[1:]], ['none', 'flat'])
        self.assertEqual(len(quality), 3)

    def test_unknown_ablation(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError) as ctx:
                call_command('simulate', fixture='aliases', ablation='none,deep', out=tmp, stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
