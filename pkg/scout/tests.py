import json
import math
import random
import tempfile
from decimal import Decimal, localcontext
from io import StringIO
from itertools import product
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from agents.base import CallMeter, Coach, Validator
from agents.exceptions import TransportError
from agents.schemas import MatchVerdict
from agents.scripted import build_scripted_backends
from scout.exceptions import BackendFailure, DuplicateDirective, InvariantViolation
from scout.forms import RunConfigForm, settings_defaults
from scout.models import AssetRecord, Candidate, Provenance, StageClass, TrialRecord
from scout.orchestrator import LogicalClock, RunConfig, build_orchestrator
from scout.stores import CandidateStore, EvidenceLog, GlobalAssetStore, Outcome
from scout.tree import ROOT_ID, DirectiveTree, SelectionBudget, node_reward, precision_of, ucb_score, ucb_value
from simworld.universe import UniverseSpec, generate_universe, oracle_answer
from utils.jsonl import read_lines

RUN_FILES = (
    'config.json', 'candidates.jsonl', 'assets.jsonl', 'evidence.jsonl', 'tree.jsonl', 'tree.txt',
    'epochs.jsonl', 'metrics.json', 'metrics.txt', 'quality.tsv',
)


def record(name, *aliases, **attributes):
    return AssetRecord(canonical_name=name, aliases={name, *aliases}, **attributes)


class AssetRecordTest(SimpleTestCase):

    def test_canonical_name_must_be_an_alias(self):
        with self.assertRaises(InvariantViolation):
            AssetRecord(canonical_name='AB-1', aliases={'ab1'}).validate()

    def test_populated_attribute_needs_provenance(self):
        bare = record('AB-1', modality='antibody')
        with self.assertRaises(InvariantViolation):
            bare.validate()
        cited = record('AB-1', modality='antibody', provenance=[Provenance('modality', 'https://a.sim/1', 'AB-1 is an antibody')])
        self.assertIs(cited.validate(), cited)

    def test_clinical_stage_needs_trial_or_phase(self):
        with self.assertRaises(InvariantViolation):
            record('AB-1', stage_class=StageClass.CLINICAL).validate()
        phase = [Provenance('stage_detail', 'https://a.sim/1', 'Phase 2')]
        record('AB-1', stage_class=StageClass.CLINICAL, stage_detail='Phase 2', provenance=phase).validate()
        trial = [Provenance('trials', 'https://a.sim/1', 'trial')]
        record('AB-1', stage_class=StageClass.CLINICAL, trials=[TrialRecord('nsclc', 'Phase 1')], provenance=trial).validate()

    def test_from_attributes_keeps_only_cited_attributes(self):
        built = AssetRecord.from_attributes(
            'AB-1', {'ab1'}, {'modality': 'antibody', 'targets': ['her2']},
            [Provenance('modality', 'https://a.sim/1', 'antibody')],
        )
        self.assertEqual(built.modality, 'antibody')
        self.assertEqual(built.targets, [])
        self.assertEqual(built.aliases, {'AB-1', 'ab1'})

    def test_candidate_invariants(self):
        with self.assertRaises(InvariantViolation):
            Candidate(' ')
        with self.assertRaises(InvariantViolation):
            Candidate('AB-1', epoch=0)


class CandidateStoreTest(SimpleTestCase):

    def test_empty_store_appends_distinct_candidates(self):
        store = CandidateStore()
        self.assertEqual(store.merge_candidates([Candidate('A'), Candidate('B'), Candidate('C')]), 3)

    def test_normalized_duplicate_is_not_appended(self):
        store = CandidateStore()
        store.merge_candidates([Candidate('BGB-X1')])
        self.assertEqual(store.merge_candidates([Candidate('bgb-x1')]), 0)

    def test_duplicate_inside_new_batch(self):
        store = CandidateStore()
        self.assertEqual(store.merge_candidates([Candidate('AB-1'), Candidate('CD-2'), Candidate(' ab-1 ')]), 2)
        self.assertEqual(store.names(), ['AB-1', 'CD-2'])

    def test_order_is_epoch_then_node(self):
        store = CandidateStore()
        store.merge_candidates([Candidate('late', discovered_by_node=1, epoch=2)])
        store.merge_candidates([Candidate('early', discovered_by_node=3, epoch=1)])
        self.assertEqual([c.raw_name for c in store.ordered()], ['early', 'late'])


class GlobalAssetStoreTest(SimpleTestCase):

    def test_fresh_record_is_inserted(self):
        store = GlobalAssetStore()
        self.assertEqual(store.register_asset(record('AB-1', 'ab1')).outcome, Outcome.INSERTED)
        self.assertEqual(store.resolve('AB1'), 'AB-1')

    def test_alias_equal_to_canonical_merges(self):
        store = GlobalAssetStore()
        store.register_asset(record('AB-1'))
        registration = store.register_asset(record('zoratinib', 'AB-1'))
        self.assertEqual(registration, (Outcome.MERGED, 'AB-1'))
        self.assertEqual(store.resolve('zoratinib'), 'AB-1')
        store.check_invariants()

    def test_bridging_two_assets_is_an_error(self):
        store = GlobalAssetStore()
        store.register_asset(record('AB-1'))
        store.register_asset(record('CD-2'))
        with self.assertRaises(InvariantViolation):
            store.register_asset(record('EF-3', 'AB-1', 'CD-2'))

    def test_register_is_idempotent(self):
        store = GlobalAssetStore()
        asset = record('AB-1', 'ab1')
        store.register_asset(asset)
        before = [r.to_record() for r in store.records()]
        self.assertEqual(store.register_asset(asset).outcome, Outcome.MERGED)
        self.assertEqual([r.to_record() for r in store.records()], before)

    def test_snapshot_round_trip(self):
        store = GlobalAssetStore()
        store.register_asset(record('AB-1', 'ab1'))
        with tempfile.TemporaryDirectory() as tmp:
            path = store.snapshot(Path(tmp) / 'assets.jsonl')
            line = json.loads(path.read_text(encoding='utf-8').splitlines()[0])
            records = read_lines(path, 'asset')
        self.assertEqual((line['schema'], line['kind']), (1, 'asset'))
        self.assertEqual(GlobalAssetStore.from_records(records).canonical_names(), ['AB-1'])


class EvidenceLogTest(SimpleTestCase):

    def test_append_only_and_sorted(self):
        log = EvidenceLog()
        log.append_query('second', 'en', node=2, epoch=1)
        log.append_query('first', 'zh', node=1, epoch=1)
        log.append_domain('b.sim', 'en', node=1, epoch=2)
        log.append_domain('a.sim', 'en', node=1, epoch=1)
        log.append_domain('b.sim', 'zh', node=3, epoch=2)
        self.assertEqual(log.query_texts(), ['first', 'second'])
        self.assertEqual(log.domain_names(), ['a.sim', 'b.sim'])
        self.assertEqual(len(log), 5)


class UcbTest(SimpleTestCase):

    def test_unvisited_is_infinite(self):
        self.assertEqual(ucb_value(0.0, 0, 10), math.inf)

    def test_parent_visit_one_has_no_exploration(self):
        self.assertEqual(ucb_value(3.0, 2, 1), 1.5)

    def test_matches_high_precision_recomputation(self):
        for reward, visits, parent_visits in ((3, 2, 4), (3, 2, 1), (7, 5, 40), (0, 3, 9)):
            with localcontext() as ctx:
                ctx.prec = 50
                exact = Decimal(reward) / Decimal(visits) + Decimal('1.2') * (
                    Decimal(max(1, parent_visits)).ln() / Decimal(visits)
                ).sqrt()
            self.assertAlmostEqual(ucb_value(reward, visits, parent_visits, 1.2), float(exact), delta=1e-9)

    def test_ucb_score_reads_node(self):
        tree = DirectiveTree()
        child = tree.attach_children(ROOT_ID, [('a', '')])[0]
        tree[child].visits, tree[child].cumulative_reward = 2, 3.0
        self.assertAlmostEqual(ucb_score(tree[child], 4), 1.5 + 1.2 * math.sqrt(math.log(4) / 2), places=12)

    def test_budget_validation(self):
        with self.assertRaises(ValueError):
            SelectionBudget(m=0)
        with self.assertRaises(ValueError):
            SelectionBudget(c=0)


class SelectLeavesTest(SimpleTestCase):

    def tree_with(self, stats, parent_visits):
        tree = DirectiveTree()
        ids = tree.attach_children(ROOT_ID, [(f'd{i}', '') for i in range(len(stats))])
        for node_id, (reward, visits) in zip(ids, stats):
            tree[node_id].cumulative_reward = reward
            tree[node_id].visits = visits
        tree.root.visits = parent_visits
        return tree, ids

    def test_root_only(self):
        self.assertEqual(DirectiveTree().select_leaves(SelectionBudget(1)), [ROOT_ID])

    def test_unvisited_first(self):
        tree, ids = self.tree_with([(10.0, 1), (0.0, 0)], 1)
        self.assertEqual(tree.select_leaves(SelectionBudget(1)), [ids[1]])

    def test_higher_mean_wins_at_equal_visits(self):
        tree, ids = self.tree_with([(4.0, 2), (2.0, 2)], 4)
        self.assertEqual(tree.select_leaves(SelectionBudget(1)), [ids[0]])

    def test_tie_break_exhaustive(self):
        for rewards in product((0.0, 1.0, 2.0), repeat=3):
            tree, ids = self.tree_with([(w, 2) for w in rewards], 6)
            best = max(rewards)
            expected = ids[rewards.index(best)]
            self.assertEqual(tree.select_leaves(SelectionBudget(1)), [expected], rewards)

    def test_multiple_leaves_are_distinct(self):
        tree, ids = self.tree_with([(1.0, 1), (1.0, 1), (1.0, 1)], 3)
        chosen = tree.select_leaves(SelectionBudget(m=3))
        self.assertEqual(sorted(chosen), ids)
        self.assertEqual(tree.root.visits, 3)  # 가상 방문은 남지 않음

    def test_m_larger_than_leaf_count(self):
        tree, ids = self.tree_with([(0.0, 0), (0.0, 0)], 0)
        self.assertEqual(tree.select_leaves(SelectionBudget(m=5)), ids)

    def test_descends_to_grandchildren(self):
        tree, ids = self.tree_with([(5.0, 1), (0.0, 1)], 2)
        grandchildren = tree.attach_children(ids[0], [('d0/a', ''), ('d0/b', '')])
        self.assertEqual(tree.select_leaves(SelectionBudget(1)), [grandchildren[0]])


class RewardTest(SimpleTestCase):

    def test_reward_law(self):
        rng = random.Random(5)
        for _ in range(500):
            p = rng.random()
            new = [object() for _ in range(rng.randrange(0, 8))]
            self.assertEqual(node_reward(p, new), p * len(new))
        self.assertEqual(node_reward(0.5, [1, 2, 3, 4]), 2.0)
        self.assertEqual(node_reward(1.0, list(range(7))), 7.0)
        self.assertEqual(node_reward(0.9, []), 0.0)

    def test_zero_candidates_means_zero_precision(self):
        self.assertEqual(precision_of(0, 0), 0.0)
        self.assertEqual(node_reward(precision_of(0, 0), set()), 0.0)

    def test_precision_out_of_range(self):
        with self.assertRaises(ValueError):
            node_reward(1.5, [1])


class BackpropagateTest(SimpleTestCase):

    def test_path_only(self):
        tree = DirectiveTree()
        a, b = tree.attach_children(ROOT_ID, [('a', ''), ('b', '')])
        leaf = tree.attach_children(a, [('a1', '')])[0]
        tree.backpropagate(leaf, 2.0)
        self.assertEqual([tree[k].visits for k in (ROOT_ID, a, b, leaf)], [1, 1, 0, 1])
        tree.backpropagate(leaf, 1.0)
        tree.backpropagate(leaf, 3.0)
        self.assertEqual(tree.root.cumulative_reward, 6.0)
        self.assertEqual(tree.root.visits, 3)

    def test_siblings(self):
        tree = DirectiveTree()
        a, b = tree.attach_children(ROOT_ID, [('a', ''), ('b', '')])
        tree.backpropagate(a, 1.0)
        tree.backpropagate(b, 1.0)
        self.assertEqual((tree.root.visits, tree[a].visits, tree[b].visits), (2, 1, 1))

    def test_conservation_over_random_rollouts(self):
        rng = random.Random(2024)
        tree = DirectiveTree()
        rollouts = {ROOT_ID: []}
        total = 0.0
        for i in range(1000):
            leaves = tree.leaves()
            if rng.random() < 0.2:
                parent = rng.choice(leaves)
                for child in tree.attach_children(parent, [(f'n{i}-{j}', '') for j in range(rng.randint(1, 3))]):
                    rollouts[child] = []
                leaves = tree.leaves()
            leaf = rng.choice(leaves)
            reward = rng.randrange(0, 8) / 2
            tree.backpropagate(leaf, reward)
            rollouts[leaf].append(reward)
            total += reward

        self.assertEqual(tree.root.visits, 1000)
        self.assertEqual(tree.root.cumulative_reward, total)
        for node in tree.walk():
            subtree = [r for n in tree.walk(node.id) for r in rollouts[n.id]]
            self.assertEqual(node.visits, len(subtree))
            self.assertEqual(node.cumulative_reward, sum(subtree))
            for child in node.children:
                self.assertGreaterEqual(node.visits, tree[child].visits)
                self.assertGreaterEqual(node.cumulative_reward, tree[child].cumulative_reward)

    def test_negative_reward(self):
        with self.assertRaises(ValueError):
            DirectiveTree().backpropagate(ROOT_ID, -1.0)


class AttachChildrenTest(SimpleTestCase):

    def test_attach_three(self):
        tree = DirectiveTree()
        ids = tree.attach_children(ROOT_ID, [('a', 'x'), ('b', 'y'), ('c', 'z')], epoch=1)
        self.assertEqual(tree.root.children, ids)
        self.assertTrue(all(tree[k].visits == 0 and tree[k].is_leaf for k in ids))
        self.assertEqual(tree.leaves(), ids)
        self.assertEqual(tree.lineage(ids[1]), ['b'])

    def test_duplicate_sibling(self):
        tree = DirectiveTree()
        tree.attach_children(ROOT_ID, [('a', '')])
        with self.assertRaises(DuplicateDirective):
            tree.attach_children(ROOT_ID, [('b', ''), ('a', '')])
        self.assertEqual(len(tree), 2)
        with self.assertRaises(ValueError):
            tree.attach_children(ROOT_ID, [])

    def test_snapshot_and_render(self):
        tree = DirectiveTree()
        a = tree.attach_children(ROOT_ID, [('modality=adc', '')])[0]
        tree.backpropagate(a, 1.5)
        self.assertEqual(tree.render().splitlines()[1], '  - modality=adc  [N=1 W=1.5000]')
        self.assertEqual([r['parent'] for r in tree.snapshot_records()], [None, ROOT_ID])


class OrchestratorTest(SimpleTestCase):
    query = 'stage=clinical'

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.universe = generate_universe(UniverseSpec(seed=3, asset_count=40, languages=('en', 'zh'), distractor_count=5))

    def config(self, **kwargs):
        kwargs.setdefault('epochs', 3)
        kwargs.setdefault('languages', ('en', 'zh'))
        return RunConfig(query=self.query, **kwargs)

    def backends(self, **overrides):
        backends = build_scripted_backends(self.universe, budget=3, distractor_rate=0.5)
        for role, backend in overrides.items():
            setattr(backends, role, backend)
        return backends

    def run_orchestrator(self, config, backends=None):
        meter = CallMeter(config.call_ceiling)
        orchestrator = build_orchestrator(
            config, backends or self.backends(), meter=meter, clock=LogicalClock(meter),
            ground_truth=oracle_answer(self.universe, self.query),
        )
        return orchestrator.run()

    def test_reward_conservation_and_reports(self):
        result = self.run_orchestrator(self.config())
        rewards = [o.reward for report in result.reports for o in report.outcomes]
        self.assertEqual(result.tree.root.visits, len(rewards))
        self.assertAlmostEqual(result.tree.root.cumulative_reward, sum(rewards), places=9)
        self.assertEqual([r.epoch for r in result.reports], [1, 2, 3])
        self.assertEqual(result.reports[-1].cumulative_asset_count, len(result.assets))
        recalls = [r.recall for r in result.reports]
        self.assertEqual(recalls, sorted(recalls))
        result.assets.check_invariants()

    def test_every_asset_matches_the_query(self):
        result = self.run_orchestrator(self.config())
        answer = oracle_answer(self.universe, self.query)
        self.assertTrue(set(result.assets.canonical_names()) <= answer)

    def test_last_epoch_does_not_expand(self):
        result = self.run_orchestrator(self.config(epochs=1))
        self.assertEqual(len(result.tree), 1)

    def test_investigators_per_language(self):
        result = self.run_orchestrator(self.config(epochs=2, m=2))
        self.assertEqual(result.reports[0].calls['investigator'], 2)  # root 한 개 x 2개 언어
        self.assertEqual(result.reports[1].calls['investigator'], 4)
        self.assertEqual(result.investigator_calls, 6)

    def test_validator_error_counts_as_non_match(self):
        validator = mock.Mock(spec=Validator)
        validator.validate.side_effect = TransportError('connection reset')
        result = self.run_orchestrator(self.config(epochs=1), self.backends(validator=validator))
        outcome = result.reports[0].outcomes[0]
        self.assertGreater(outcome.candidate_count, 0)
        self.assertEqual((outcome.validated_count, outcome.reward), (0, 0.0))
        self.assertTrue(all(r.startswith('validator-error') for r in outcome.rationales))

    def test_coach_failure_carries_partial_result(self):
        coach = mock.Mock(spec=Coach)
        coach.summarize.return_value = ''
        coach.expand.side_effect = TransportError('503')
        with self.assertRaises(BackendFailure) as ctx:
            self.run_orchestrator(self.config(epochs=2), self.backends(coach=coach))
        self.assertEqual((ctx.exception.epoch, ctx.exception.node), (1, ROOT_ID))
        partial = ctx.exception.partial
        self.assertEqual([r.epoch for r in partial.reports], [1])
        # 이미 등록된 자산과 보고서가 맞아야 함
        self.assertEqual(partial.reports[0].cumulative_asset_count, len(partial.assets))
        self.assertGreater(len(partial.assets), 0)
        self.assertEqual(sorted(partial.reports[0].new_assets), sorted(partial.assets.canonical_names()))
        self.assertEqual(partial.reports[0].calls['coach'], 1)

    def test_bad_record_shape_is_a_rejection(self):
        def validate(query, candidate):
            return MatchVerdict(
                is_match=True,
                canonical_name=candidate.raw_name,
                normalized_attributes={'trials': [{'name': 'NCT1', 'indication': 'NSCLC', 'phase': 'Phase 1'}]},
                citations=(Provenance('trials', 'https://a.sim/1', 'NCT1'),),
            )

        validator = mock.Mock(spec=Validator)
        validator.validate.side_effect = validate
        result = self.run_orchestrator(self.config(epochs=1), self.backends(validator=validator))
        outcome = result.reports[0].outcomes[0]
        self.assertGreater(outcome.candidate_count, 0)
        self.assertEqual((outcome.validated_count, len(result.assets)), (0, 0))
        self.assertTrue(all(r.startswith('invalid record') for r in outcome.rationales))

    def test_call_ceiling_truncates(self):
        result = self.run_orchestrator(self.config(epochs=1, call_ceiling=1))
        report = result.reports[0]
        self.assertTrue(report.truncated)
        self.assertEqual(report.calls, {'investigator': 1})
        self.assertEqual(report.outcomes[0].failed_languages, ['zh'])

    def test_sequential_always_reruns_root(self):
        result = self.run_orchestrator(self.config(ablation='sequential'))
        self.assertEqual([r.selected_nodes for r in result.reports], [[ROOT_ID]] * 3)
        self.assertEqual(len(result.tree), 1)

    def test_flat_keeps_tree_depth_one(self):
        result = self.run_orchestrator(self.config(ablation='flat', flat_k=3))
        self.assertTrue(all(result.tree[k].parent in (None, ROOT_ID) for k in result.tree.nodes))
        self.assertEqual(result.tree.root.visits, 0)

    def test_config_validation(self):
        for kwargs in ({'epochs': 0}, {'languages': ()}, {'languages': ('en', 'en')}, {'dedup_mode': 'x'},
                       {'c': 0}, {'ablation': 'x'}, {'call_ceiling': 0}):
            with self.assertRaises(ValueError, msg=kwargs):
                self.config(**kwargs)

    def test_config_record_round_trip(self):
        config = self.config(roles=(('validator', 'chat'),))
        self.assertEqual(RunConfig.from_record(config.to_record()), config)


class RunConfigFormTest(SimpleTestCase):

    def test_precedence(self):
        defaults = settings_defaults()
        form = RunConfigForm(defaults, {'epochs': 4, 'k': 2, 'query': 'stage=clinical'}, {'epochs': 1, 'k': None})
        self.assertTrue(form.is_valid(), form.errors)
        config = form.to_config()
        self.assertEqual((config.epochs, config.k, config.m), (1, 2, defaults['m']))

    def test_unknown_key(self):
        form = RunConfigForm(settings_defaults(), {'query': 'q', 'epoch': 3})
        self.assertFalse(form.is_valid())
        self.assertIn('unknown keys: epoch', form.errors_as_text())

    def test_bad_values(self):
        form = RunConfigForm(settings_defaults(), {'query': 'q', 'languages': 'en,english', 'c': -1, 'roles': {'judge': 'chat'}})
        self.assertFalse(form.is_valid())
        self.assertEqual(set(form.errors), {'languages', 'c', 'roles'})

    def test_query_or_fixture_required(self):
        self.assertFalse(RunConfigForm(settings_defaults()).is_valid())
        self.assertTrue(RunConfigForm(settings_defaults(), {'fixture': 'u200'}).is_valid())


class RunCommandTest(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def run_command(self, *args, **options):
        call_command('run', *args, stdout=StringIO(), **options)

    def test_writes_run_directory(self):
        self.run_command(fixture='aliases', epochs=2, out=str(self.root / 'r1'))
        for name in RUN_FILES + ('COMPLETE',):
            self.assertTrue((self.root / 'r1' / name).exists(), name)
        epochs = (self.root / 'r1' / 'epochs.jsonl').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(epochs), 2)

    def test_scripted_runs_are_byte_identical(self):
        for name in ('a', 'b'):
            self.run_command(fixture='u200', epochs=3, seed=5, out=str(self.root / name))
        for name in RUN_FILES:
            self.assertEqual(
                (self.root / 'a' / name).read_bytes(), (self.root / 'b' / name).read_bytes(), name,
            )

    def test_replay_reproduces_metrics(self):
        self.run_command(fixture='aliases', epochs=3, k=2, out=str(self.root / 'first'))
        self.run_command(replay=str(self.root / 'first'), out=str(self.root / 'again'))
        for name in ('metrics.json', 'quality.tsv', 'assets.jsonl', 'config.json'):
            self.assertEqual(
                (self.root / 'first' / name).read_bytes(), (self.root / 'again' / name).read_bytes(), name,
            )

    def test_completed_directory_is_read_only(self):
        self.run_command(fixture='aliases', epochs=1, out=str(self.root / 'done'))
        with self.assertRaises(CommandError) as ctx:
            self.run_command(fixture='aliases', epochs=1, out=str(self.root / 'done'))
        self.assertEqual(ctx.exception.returncode, 2)

    @override_settings(CHAT={'PROVIDER': 'openai', 'BASE_URL': 'https://api.example.invalid/v1', 'MODEL': '',
                             'API_KEY': '', 'TIMEOUT': 5, 'RETRIES': 0, 'CONCURRENCY': 1, 'TEMPERATURE': 0.2})
    def test_chat_backend_without_credentials(self):
        out = self.root / 'chat'
        with self.assertRaises(CommandError) as ctx:
            self.run_command(query='bispecific antibodies in China', backend='chat', out=str(out))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('SCOUT_CHAT_API_KEY', str(ctx.exception))
        self.assertFalse(out.exists())

    def test_flags_override_config_file(self):
        path = self.root / 'run.json'
        path.write_text(json.dumps({'fixture': 'aliases', 'epochs': 2, 'k': 2, 'languages': ['en']}), encoding='utf-8')
        self.run_command(config=str(path), epochs=1, out=str(self.root / 'r'))
        snapshot = json.loads((self.root / 'r' / 'config.json').read_text(encoding='utf-8'))
        self.assertEqual((snapshot['epochs'], snapshot['k'], snapshot['languages']), (1, 2, ['en']))
        self.assertEqual(snapshot['m'], settings_defaults()['m'])

    def test_scripted_backend_needs_structured_query(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command(fixture='aliases', query='antibodies in China', out=str(self.root / 'r'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_invalid_flag_value(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command(fixture='aliases', epochs=0, out=str(self.root / 'r'))
        self.assertEqual(ctx.exception.returncode, 2)


class ConfigCommandTest(SimpleTestCase):

    def validate(self, data):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.json'
            path.write_text(data if isinstance(data, str) else json.dumps(data), encoding='utf-8')
            stdout = StringIO()
            call_command('config', 'validate', str(path), stdout=stdout)
            return stdout.getvalue()

    def test_valid(self):
        output = self.validate({'query': 'stage=clinical', 'epochs': 5, 'languages': 'en,zh,ja'})
        self.assertIn('epochs=5', output)
        self.assertIn('languages=en,zh,ja', output)

    def test_invalid(self):
        for data in ({'query': 'q', 'm': 0}, {'query': 'q', 'unknown': 1}, '{"query": ', '[1, 2]'):
            with self.assertRaises(CommandError, msg=data) as ctx:
                self.validate(data)
            self.assertEqual(ctx.exception.returncode, 2)
