import tempfile
from dataclasses import replace
from pathlib import Path
from unittest import mock

import requests
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase, override_settings

from agents.base import CallMeter, Coach
from agents.chat import (
    REPAIR_PROMPT, ChatClient, ChatCoach, ChatDeduplicator, ChatInvestigator, ChatValidator, parse_json_object,
)
from agents.dedup import deduplicate, deduplicate_heavy, deduplicate_light
from agents.exceptions import BackendError, BackendTimeout, MalformedOutput, TransportError
from agents.registry import build_backends, resolve_roles
from agents.schemas import (
    CoachContext, CoachOutput, CriterionCheck, CriterionVerdict, InvestigatorRequest, MatchVerdict, Role,
)
from agents.scripted import ScriptedCoach, ScriptedDeduplicator, ScriptedValidator
from agents.summary import frequency_summary, summarize_failures
from scout.exceptions import InvariantViolation
from scout.models import AssetRecord, Candidate, Provenance
from scout.stores import GlobalAssetStore
from simworld.query import SimQuery
from simworld.universe import MODALITIES, UniverseSpec, generate_universe
from utils.jsonl import read_json

CHAT_SETTINGS = {
    'PROVIDER': 'openai', 'BASE_URL': 'https://api.example.invalid/v1', 'MODEL': 'test-model',
    'API_KEY': 'sk-test', 'TIMEOUT': 5, 'RETRIES': 0, 'CONCURRENCY': 2, 'TEMPERATURE': 0.0,
}


def asset(name, *aliases):
    return AssetRecord(canonical_name=name, aliases={name, *aliases})


def openai_reply(content):
    response = mock.Mock()
    response.raise_for_status.return_value = None
    response.json.return_value = {'choices': [{'message': {'content': content}}]}
    return response


class DedupTest(SimpleTestCase):

    def setUp(self):
        self.backend = ScriptedDeduplicator.from_aliases([['AB-1', 'zoratinib'], ['CD-2', 'cd2']])
        self.store = GlobalAssetStore()
        self.store.register_asset(asset('EF-3'))
        self.items = [asset('AB-1'), asset('zoratinib'), asset('CD-2'), asset('EF-3')]

    def test_light_merges_inside_the_batch(self):
        fresh = deduplicate_light(self.items, self.store, self.backend)
        self.assertEqual([item.canonical_name for item in fresh], ['AB-1', 'CD-2'])
        self.assertEqual(fresh[0].aliases, {'AB-1', 'zoratinib'})

    def test_light_and_heavy_find_the_same_assets(self):
        light = deduplicate_light(self.items, self.store, self.backend, batch_size=2)
        heavy = deduplicate_heavy(self.items, self.store, self.backend)
        self.assertEqual(
            sorted(item.canonical_name for item in light), sorted(item.canonical_name for item in heavy),
        )

    def test_heavy_folds_aliases_and_provenance_like_light(self):
        items = [
            replace(asset('AB-1'), provenance=[Provenance('modality', 'https://a.example/1', 'AB-1 small molecule')]),
            replace(asset('zoratinib'), provenance=[Provenance('targets', 'https://b.example/2', 'zoratinib KRAS')]),
            asset('CD-2'),
            replace(asset('cd2'), provenance=[Provenance('modality', 'https://c.example/3', 'cd2 antibody')]),
        ]
        light = deduplicate_light(items, self.store, self.backend, batch_size=2)
        heavy = deduplicate_heavy(items, self.store, self.backend)
        self.assertEqual([item.to_record() for item in heavy], [item.to_record() for item in light])
        self.assertEqual(heavy[0].aliases, {'AB-1', 'zoratinib'})
        self.assertEqual(len(heavy[0].provenance), 2)
        self.assertEqual(heavy[1].aliases, {'CD-2', 'cd2'})

    def test_idempotent_once_registered(self):
        for item in deduplicate('light', self.items, self.store, self.backend):
            self.store.register_asset(item)
        self.assertEqual(deduplicate('light', self.items, self.store, self.backend), [])
        self.assertEqual(deduplicate('heavy', self.items, self.store, self.backend), [])

    def test_pass_counts(self):
        items = [asset(f'X-{i}') for i in range(120)]
        backend = mock.Mock(wraps=ScriptedDeduplicator.from_aliases([]))
        self.assertEqual(len(deduplicate_light(items, GlobalAssetStore(), backend, batch_size=50)), 120)
        self.assertEqual(backend.merge_pass.call_count, 4)  # batch 3번 + 전체 1번

        backend = mock.Mock(wraps=ScriptedDeduplicator.from_aliases([]))
        deduplicate_light(items[:50], GlobalAssetStore(), backend, batch_size=50)
        self.assertEqual(backend.merge_pass.call_count, 1)

        backend = mock.Mock(wraps=ScriptedDeduplicator.from_aliases([]))
        deduplicate_heavy(items, GlobalAssetStore(), backend)
        self.assertEqual(backend.merge_pass.call_count, 120)

    def test_failed_pass_keeps_items(self):
        backend = mock.Mock(wraps=self.backend)
        backend.merge_pass.side_effect = TransportError('503')
        fresh = deduplicate_light(self.items, self.store, backend)
        self.assertEqual([item.canonical_name for item in fresh], ['AB-1', 'zoratinib', 'CD-2'])

    def test_meter_is_charged(self):
        meter = CallMeter()
        meter.start_epoch(1)
        deduplicate_heavy(self.items, self.store, self.backend, meter=meter)
        self.assertEqual(meter.counts(), {'deduplicator': 4})

    def test_empty_input(self):
        backend = mock.Mock(wraps=self.backend)
        self.assertEqual(deduplicate_light([], self.store, backend), [])
        backend.merge_pass.assert_not_called()
        with self.assertRaises(ValueError):
            deduplicate_light(self.items, self.store, backend, batch_size=0)


class CallMeterTest(SimpleTestCase):

    def test_ceiling_per_epoch(self):
        meter = CallMeter(2)
        meter.start_epoch(1)
        self.assertEqual([meter.charge(Role.INVESTIGATOR) for _ in range(3)], [True, True, False])
        self.assertTrue(meter.truncated)
        meter.start_epoch(2)
        self.assertFalse(meter.truncated)
        self.assertTrue(meter.charge(Role.VALIDATOR))
        self.assertEqual(meter.counts(), {'validator': 1})
        self.assertEqual(meter.total, 3)

    def test_invalid_ceiling(self):
        with self.assertRaises(ValueError):
            CallMeter(0)


class SchemaTest(SimpleTestCase):

    def test_non_match_needs_rationale(self):
        with self.assertRaises(InvariantViolation):
            MatchVerdict.non_match('  ')

    def test_match_with_failed_hard_criterion(self):
        failed = CriterionCheck('stage is clinical', CriterionVerdict.FAIL)
        with self.assertRaises(InvariantViolation):
            MatchVerdict(is_match=True, per_criterion=(failed,))
        soft = CriterionCheck('has an english name', CriterionVerdict.UNKNOWN, hard=False)
        self.assertTrue(MatchVerdict(is_match=True, per_criterion=(soft,)).is_match)

    def test_coach_output_drops_duplicates(self):
        output = CoachOutput.build([('a', 'x'), ('a', 'y'), ('', 'z'), ('b', ' w ')])
        self.assertEqual(output.children, (('a', 'x'), ('b', 'w')))
        self.assertEqual(output.duplicates, 2)
        with self.assertRaises(InvariantViolation):
            CoachOutput(children=(('a', ''), ('a', '')))

    def test_request_language(self):
        request = InvestigatorRequest(query='q', language='ja', known_assets=('A',), known_candidates=('b',))
        self.assertEqual(request.excluded, ('A', 'b'))
        with self.assertRaises(InvariantViolation):
            request.check_language(('en', 'zh'))


class ScriptedBackendTest(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.universe = generate_universe(UniverseSpec(seed=3, asset_count=30, languages=('en', 'zh'), distractor_count=4))

    def test_validator_accepts_true_match(self):
        entity = self.universe.assets[0]
        candidate = Candidate(entity.canonical_name, entity.source_url('en'))
        verdict = ScriptedValidator(self.universe).validate(f'modality={entity.modality}', candidate)
        self.assertTrue(verdict.is_match)
        record = verdict.to_asset(candidate).validate()
        self.assertEqual(record.canonical_name, entity.canonical_name)
        self.assertEqual(record.modality, entity.modality)

    def test_validator_rejects(self):
        validator = ScriptedValidator(self.universe)
        entity = self.universe.assets[0]
        other = next(m for m in MODALITIES if m != entity.modality)
        verdict = validator.validate(f'modality={other}', Candidate(entity.canonical_name))
        self.assertFalse(verdict.is_match)
        self.assertTrue(verdict.failure_rationale.startswith('wrong modality:'))

        lookalike = self.universe.lookalikes[0]
        self.assertIn('not a valid drug asset', validator.validate('', Candidate(lookalike.canonical_name)).failure_rationale)
        self.assertIn('unknown entity', validator.validate('', Candidate('no such program')).failure_rationale)

    def test_coach_partitions_by_first_free_axis(self):
        coach = ScriptedCoach(self.universe)
        output = coach.expand(CoachContext(query='stage=clinical', node=0, k=3))
        modalities = {e.modality for e in self.universe.assets if e.stage == 'clinical'}
        self.assertEqual(len(output.children), min(3, len(modalities)))
        for directive, instructions in output.children:
            self.assertTrue(directive.startswith('modality='))
            self.assertEqual(SimQuery.parse(directive).constrained_fields(), {'modality'})
        single = coach.expand(CoachContext(query='stage=clinical', node=0, k=1))
        self.assertEqual(len(single.children), 1)

    def test_coach_cannot_narrow_a_full_slice(self):
        entity = self.universe.assets[0]
        query = (f'modality={entity.modality}; region={entity.region}; target={entity.target}; '
                 f'indication={entity.indication}; stage={entity.stage}')
        self.assertEqual(ScriptedCoach(self.universe).expand(CoachContext(query=query, node=0)).children, ())


class SummaryTest(SimpleTestCase):

    def test_frequency_summary(self):
        rationales = ['wrong modality: A is adc', 'wrong stage: B', 'wrong modality: C is sirna']
        self.assertEqual(frequency_summary(rationales, 2000), '- wrong modality (x2)\n- wrong stage (x1)')
        self.assertEqual(len(frequency_summary(rationales, 10)), 10)

    def test_fallback_to_concatenation(self):
        coach = mock.Mock(spec=Coach)
        coach.summarize.side_effect = BackendError('down')
        self.assertEqual(summarize_failures(['a', ' ', 'b'], coach, cap=100), 'a; b')
        self.assertEqual(summarize_failures([], coach), '')

    def test_ceiling_skips_the_summarizer(self):
        coach = mock.Mock(spec=Coach)
        meter = CallMeter(1)
        meter.charge(Role.COACH)
        self.assertEqual(summarize_failures(['a', 'b'], coach, meter=meter), 'a; b')
        coach.summarize.assert_not_called()


class ChatClientTest(SimpleTestCase):

    def make_client(self, provider='openai', transcript_dir=None):
        return ChatClient(provider, 'https://api.example.invalid/v1', 'test-model', 'sk-test', retries=0,
                          transcript_dir=transcript_dir)

    def test_parse_json_object(self):
        self.assertEqual(parse_json_object('```json\n{"a": 1}\n```'), {'a': 1})
        self.assertEqual(parse_json_object('sure: {"a": [1]} done'), {'a': [1]})
        with self.assertRaises(ValueError):
            parse_json_object('[1, 2]')

    @mock.patch('requests.Session.post')
    def test_complete_json_and_transcript(self, post):
        post.return_value = openai_reply('{"candidates": []}')
        with tempfile.TemporaryDirectory() as tmp:
            data = self.make_client(transcript_dir=Path(tmp)).complete_json('investigator', 'system', 'user')
            transcript = read_json(Path(tmp) / '00001-investigator.json')
        self.assertEqual(data, {'candidates': []})
        self.assertEqual(post.call_args.args[0], 'https://api.example.invalid/v1/chat/completions')
        self.assertEqual(post.call_args.kwargs['headers']['Authorization'], 'Bearer sk-test')
        self.assertEqual(transcript['request']['messages'][0], {'role': 'system', 'content': 'system'})
        self.assertNotIn('sk-test', str(transcript))

    @mock.patch('requests.Session.post')
    def test_one_repair_round(self, post):
        post.side_effect = [openai_reply('I could not find anything.'), openai_reply('{"candidates": []}')]
        self.assertEqual(self.make_client().complete_json('investigator', 'system', 'user'), {'candidates': []})
        self.assertEqual(post.call_count, 2)

        post.side_effect = [openai_reply('no'), openai_reply('still no')]
        with self.assertRaises(MalformedOutput):
            self.make_client().complete_json('investigator', 'system', 'user')

    @mock.patch('requests.Session.post')
    def test_wrong_shape_gets_the_repair_round(self, post):
        post.side_effect = [
            openai_reply('{"is_match": false, "criteria": ["stage is clinical"]}'),
            openai_reply('{"is_match": false, "failure_rationale": "preclinical only"}'),
        ]
        verdict = ChatValidator(self.make_client()).validate('q', Candidate('AB-1'))
        self.assertEqual(verdict.failure_rationale, 'preclinical only')
        self.assertEqual(post.call_count, 2)
        self.assertEqual(post.call_args.kwargs['json']['messages'][-1]['content'], REPAIR_PROMPT)

        post.side_effect = [openai_reply('{"groups": 3}'), openai_reply('{"groups": "3"}')]
        with self.assertRaises(MalformedOutput):
            ChatDeduplicator(self.make_client()).merge_pass([asset('AB-1')], [])

    @mock.patch('requests.Session.post')
    def test_transport_errors(self, post):
        post.side_effect = requests.ConnectionError('reset')
        with self.assertRaises(TransportError):
            self.make_client().complete('validator', 'system', [])
        post.side_effect = requests.Timeout('slow')
        with self.assertRaises(BackendTimeout):
            self.make_client().complete('validator', 'system', [])

    @mock.patch('requests.Session.post')
    def test_anthropic_adapter(self, post):
        response = mock.Mock()
        response.raise_for_status.return_value = None
        response.json.return_value = {'content': [{'type': 'text', 'text': '{"ok": '}, {'type': 'text', 'text': 'true}'}]}
        post.return_value = response
        self.assertEqual(self.make_client('anthropic').complete_json('coach', 'system', 'user'), {'ok': True})
        self.assertEqual(post.call_args.args[0], 'https://api.example.invalid/v1/v1/messages')
        self.assertEqual(post.call_args.kwargs['json']['system'], 'system')
        self.assertEqual(post.call_args.kwargs['headers']['x-api-key'], 'sk-test')

    def test_unknown_provider(self):
        with self.assertRaises(ImproperlyConfigured):
            self.make_client('gemini')

    @override_settings(CHAT=dict(CHAT_SETTINGS, API_KEY=''))
    def test_missing_key(self):
        with self.assertRaisesMessage(ImproperlyConfigured, 'SCOUT_CHAT_API_KEY'):
            ChatClient.from_settings()


class ChatRoleTest(SimpleTestCase):

    def setUp(self):
        self.chat = mock.Mock(spec=ChatClient)

    def reply(self, data):
        # complete_json 처럼 read 함수에 dict 를 넘김
        self.chat.complete_json.side_effect = lambda role, system, user, read=None: data if read is None else read(data)

    def test_investigator_skips_known_names(self):
        self.reply({
            'candidates': [{'name': 'AB-1', 'source_url': 'https://news.sim/1'}, 'known-1', {'name': ''}],
            'queries': ['ab-1 phase 1'],
        })
        request = InvestigatorRequest(query='q', known_assets=('KNOWN-1',), node=4, epoch=2)
        result = ChatInvestigator(self.chat).investigate(request)
        self.assertEqual([c.raw_name for c in result.candidates], ['AB-1'])
        self.assertEqual((result.candidates[0].discovered_by_node, result.candidates[0].epoch), (4, 2))
        self.assertEqual(result.visited_domains, ['news.sim'])
        self.assertEqual(result.executed_queries, ['ab-1 phase 1'])

    def test_investigator_rejects_odd_entries(self):
        self.reply({'candidates': ['AB-1', 42]})
        with self.assertRaises(MalformedOutput):
            ChatInvestigator(self.chat).investigate(InvestigatorRequest(query='q'))

    def test_validator_verdicts(self):
        self.reply({
            'is_match': True,
            'criteria': [{'criterion': 'stage is clinical', 'verdict': 'fail', 'evidence': []}],
        })
        verdict = ChatValidator(self.chat).validate('q', Candidate('AB-1'))
        self.assertEqual((verdict.is_match, verdict.failure_rationale), (False, 'criteria not met: stage is clinical'))

        self.reply({
            'is_match': True,
            'canonical_name': 'AB-1',
            'aliases': ['zoratinib'],
            'attributes': {'modality': 'antibody'},
            'citations': [{'claim': 'modality', 'source_url': 'https://a.sim/1', 'quote': 'AB-1, an antibody'}],
        })
        record = ChatValidator(self.chat).validate('q', Candidate('ab1')).to_asset(Candidate('ab1')).validate()
        self.assertEqual(record.aliases, {'AB-1', 'ab1', 'zoratinib'})
        self.assertEqual(record.modality, 'antibody')

    def test_validator_bad_citation(self):
        self.reply({'is_match': True, 'citations': [{'claim': 'modality'}]})
        with self.assertRaises(MalformedOutput):
            ChatValidator(self.chat).validate('q', Candidate('AB-1'))

    def test_validator_rejects_wrong_shapes(self):
        replies = [
            {'is_match': False, 'criteria': ['stage is clinical']},
            {'is_match': False, 'criteria': [{'criterion': 'x', 'verdict': 'fail', 'evidence': ['https://a.sim']}]},
            {'is_match': True, 'attributes': ['modality']},
            {
                'is_match': True,
                'attributes': {'trials': [{'name': 'NCT1', 'indication': 'NSCLC', 'phase': 'Phase 1'}]},
                'citations': [{'claim': 'trials', 'source_url': 'https://a.sim/1', 'quote': 'NCT1'}],
            },
            {'is_match': True, 'attributes': {'trials': 'NCT1'}},
        ]
        for data in replies:
            with self.subTest(data=data):
                self.reply(data)
                with self.assertRaises(MalformedOutput):
                    ChatValidator(self.chat).validate('q', Candidate('AB-1'))

    def test_deduplicator_groups(self):
        self.reply({'groups': [[0, 2], [1]], 'existing': [1]})
        items = [asset('AB-1'), asset('CD-2'), asset('zoratinib'), asset('GH-4')]
        merged = ChatDeduplicator(self.chat).merge_pass(items, [asset('CD-2')])
        self.assertEqual([item.canonical_name for item in merged], ['AB-1', 'GH-4'])
        self.assertEqual(merged[0].aliases, {'AB-1', 'zoratinib'})

    def test_deduplicator_rejects_wrong_shapes(self):
        for data in ({'groups': [0, 2]}, {'groups': 'all'}, {'groups': [], 'existing': 1}):
            with self.subTest(data=data):
                self.reply(data)
                with self.assertRaises(MalformedOutput):
                    ChatDeduplicator(self.chat).merge_pass([asset('AB-1')], [])

    def test_coach_without_children_list(self):
        context = CoachContext(query='q', node=0)
        self.chat.complete_json.side_effect = MalformedOutput('children must be a list')
        self.assertEqual(ChatCoach(self.chat).expand(context).children, ())
        with self.assertRaises(MalformedOutput):
            ChatCoach(self.chat).read_output({'children': 'none'})


class RegistryTest(SimpleTestCase):

    def test_resolve_roles(self):
        resolved = resolve_roles('scripted', {'validator': 'chat'})
        self.assertEqual(resolved['validator'], 'chat')
        self.assertEqual(resolved['coach'], 'scripted')
        with self.assertRaises(ImproperlyConfigured):
            resolve_roles('scripted', {'judge': 'chat'})
        with self.assertRaises(ImproperlyConfigured):
            resolve_roles('local')

    def test_scripted_needs_universe(self):
        with self.assertRaises(ImproperlyConfigured):
            build_backends('scripted')

    @override_settings(CHAT=CHAT_SETTINGS)
    def test_mixed_backends(self):
        universe = generate_universe(UniverseSpec(seed=1, asset_count=5, languages=('en',), distractor_count=0))
        backends = build_backends('scripted', roles={'validator': 'chat'}, universe=universe)
        self.assertIsInstance(backends.validator, ChatValidator)
        self.assertIsInstance(backends.coach, ScriptedCoach)
        self.assertEqual(
            backends.name, 'investigator=scripted+validator=chat+deduplicator=scripted+coach=scripted',
        )
