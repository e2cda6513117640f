"""Chat-model HTTP backend.

Each role renders a prompt template, sends it through ``ChatClient`` and
parses a JSON answer. Provider differences (endpoint, headers, payload and
response shape) live in the adapters; everything else is provider-agnostic.
"""
import itertools
import json
import logging
import re
import threading
import time
from dataclasses import fields

import requests
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from django.template.loader import render_to_string
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from agents.base import Backends, Coach, Deduplicator, Investigator, Validator
from agents.exceptions import BackendTimeout, MalformedOutput, TransportError
from agents.schemas import (
    CoachOutput, CriterionCheck, CriterionVerdict, InvestigatorResult, MatchVerdict, Role,
)
from scout.exceptions import InvariantViolation
from scout.models import Candidate, Provenance, TrialRecord
from utils.jsonl import write_json
from utils.text import domain_of, normalize_name

logger = logging.getLogger(__name__)

REPAIR_PROMPT = (
    'Your previous reply could not be read as the JSON object described above. '
    'Reply again with that JSON object only, using the field types asked for.'
)
_FENCE = re.compile(r'^```(?:json)?\s*|\s*```$', re.MULTILINE)


class OpenAIAdapter:
    """/chat/completions 형식 (OpenAI 호환 서버도 같음)"""

    name = 'openai'

    def endpoint(self, base_url):
        return f'{base_url.rstrip("/")}/chat/completions'

    def headers(self, api_key):
        return {'Content-Type': 'application/json', 'Authorization': f'Bearer {api_key}'}

    def payload(self, model, system, messages, temperature, seed, max_tokens):
        payload = {
            'model': model,
            'messages': [{'role': 'system', 'content': system}, *messages],
            'temperature': temperature,
            'max_tokens': max_tokens,
        }
        if seed is not None:
            payload['seed'] = seed
        return payload

    def text(self, data):
        return data['choices'][0]['message']['content'] or ''


class AnthropicAdapter:
    name = 'anthropic'
    version = '2023-06-01'

    def endpoint(self, base_url):
        return f'{base_url.rstrip("/")}/v1/messages'

    def headers(self, api_key):
        return {'Content-Type': 'application/json', 'x-api-key': api_key, 'anthropic-version': self.version}

    def payload(self, model, system, messages, temperature, seed, max_tokens):
        # seed 파라미터가 없음
        return {
            'model': model,
            'system': system,
            'messages': list(messages),
            'temperature': temperature,
            'max_tokens': max_tokens,
        }

    def text(self, data):
        return ''.join(block.get('text', '') for block in data['content'] if block.get('type') == 'text')


ADAPTERS = {adapter.name: adapter for adapter in (OpenAIAdapter(), AnthropicAdapter())}


def parse_json_object(text):
    # 코드 펜스나 앞뒤 설명이 붙어 있어도 첫 { 부터 마지막 } 까지
    text = _FENCE.sub('', (text or '').strip())
    start, end = text.find('{'), text.rfind('}')
    if start < 0 or end < start:
        raise ValueError('no JSON object in reply')
    data = json.loads(text[start:end + 1])
    if not isinstance(data, dict):
        raise ValueError('reply is not a JSON object')
    return data


class ChatClient:
    """채팅 모델 호출. 역할마다 같은 클라이언트를 나눠 씀

    HTTP 재시도는 urllib3 Retry 가 하고, 여기서는 예외를 BackendError 계열로 바꾸고
    transcript_dir 가 있으면 호출마다 요청/응답을 파일로 남김
    """

    def __init__(self, provider, base_url, model, api_key, timeout=300, retries=3, concurrency=4,
                 temperature=0.2, seed=None, max_tokens=4096, transcript_dir=None):
        if provider not in ADAPTERS:
            raise ImproperlyConfigured(f'unknown chat provider {provider!r}; expected one of {", ".join(ADAPTERS)}')
        self.adapter = ADAPTERS[provider]
        self.base_url = base_url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.temperature = temperature
        self.seed = seed
        self.max_tokens = max_tokens
        self.transcript_dir = transcript_dir
        # 동시 요청 수 제한. 넘치는 요청은 버리지 않고 기다림
        self._slots = threading.BoundedSemaphore(concurrency)
        self._local = threading.local()
        self._sequence = itertools.count(1)
        self._sequence_lock = threading.Lock()

    @classmethod
    def from_settings(cls, transcript_dir=None, seed=None, temperature=None):
        chat = settings.CHAT
        missing = [name for name, key in (('SCOUT_CHAT_API_KEY', 'API_KEY'), ('SCOUT_CHAT_MODEL', 'MODEL'))
                   if not chat.get(key)]
        if missing:
            raise ImproperlyConfigured(f'chat backend selected but {" and ".join(missing)} not set in the environment')
        return cls(
            provider=chat['PROVIDER'],
            base_url=chat['BASE_URL'],
            model=chat['MODEL'],
            api_key=chat['API_KEY'],
            timeout=chat['TIMEOUT'],
            retries=chat['RETRIES'],
            concurrency=chat['CONCURRENCY'],
            temperature=chat['TEMPERATURE'] if temperature is None else temperature,
            seed=seed,
            transcript_dir=transcript_dir,
        )

    @property
    def session(self):
        # 스레드마다 세션을 따로 씀
        session = getattr(self._local, 'session', None)
        if session is None:
            retry = Retry(
                total=self.retries,
                backoff_factor=2,
                status_forcelist=[408, 429, 500, 502, 503, 504],
                allowed_methods=['POST'],
            )
            adapter = HTTPAdapter(max_retries=retry)
            session = requests.Session()
            session.mount('http://', adapter)
            session.mount('https://', adapter)
            self._local.session = session
        return session

    def complete(self, role, system, messages):
        payload = self.adapter.payload(self.model, system, messages, self.temperature, self.seed, self.max_tokens)
        url = self.adapter.endpoint(self.base_url)
        started = time.monotonic()
        data = None
        error = None
        try:
            with self._slots:
                response = self.session.post(
                    url, headers=self.adapter.headers(self.api_key), json=payload, timeout=self.timeout,
                )
            response.raise_for_status()
            data = response.json()
            return self.adapter.text(data)
        except requests.Timeout as e:
            error = e
            raise BackendTimeout(f'{role} call timed out after {self.timeout}s', role=role) from e
        except requests.RequestException as e:
            error = e
            raise TransportError(f'{role} call failed: {e}', role=role) from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            error = e
            raise MalformedOutput(f'{role} response has an unexpected shape: {e}', role=role) from e
        finally:
            # 실패한 호출도 기록
            self._transcript(role, url, payload, data, error, time.monotonic() - started)

    def complete_json(self, role, system, user, read=None):
        """JSON 객체 답을 받음. 파싱이나 ``read`` 가 실패하면 한 번만 다시 물어봄

        ``read`` 는 dict 를 역할별 결과로 바꾸는 함수. 모양이 틀리면 ValueError 나
        MalformedOutput 을 던져야 함
        """
        messages = [{'role': 'user', 'content': user}]
        text = self.complete(role, system, messages)
        try:
            return self._read(text, read)
        except (ValueError, MalformedOutput) as first:
            logger.info('%s reply could not be read (%s), asking once more', role, first)
        messages += [{'role': 'assistant', 'content': text}, {'role': 'user', 'content': REPAIR_PROMPT}]
        text = self.complete(role, system, messages)
        try:
            return self._read(text, read)
        except MalformedOutput:
            raise
        except ValueError as e:
            raise MalformedOutput(f'{role} reply is not a usable JSON object after one repair: {e}', role=role) from e

    @staticmethod
    def _read(text, read):
        data = parse_json_object(text)
        return data if read is None else read(data)

    def _transcript(self, role, url, payload, data, error, elapsed):
        if self.transcript_dir is None:
            return
        with self._sequence_lock:
            number = next(self._sequence)
        # 인증 헤더는 남기지 않음
        write_json(self.transcript_dir / f'{number:05d}-{role}.json', {
            'role': str(role),
            'provider': self.adapter.name,
            'url': url,
            'request': payload,
            'response': data,
            'error': repr(error) if error is not None else None,
            'elapsed': round(elapsed, 3),
        })


def system_prompt(role):
    return render_to_string('agents/system.txt', {'role': str(role)})


def _strings(value):
    if isinstance(value, str):
        return [value]
    if not isinstance(value, list):
        return []
    return [str(item) for item in value if str(item).strip()]


def _objects(value, what, role):
    """JSON 배열 안의 객체들. 배열이 아니거나 객체가 아닌 원소가 있으면 MalformedOutput"""
    if value is None:
        return []
    if not isinstance(value, list) or not all(isinstance(item, dict) for item in value):
        raise MalformedOutput(f'{what} must be a list of objects, got {value!r}', role=role)
    return value


TRIAL_KEYS = frozenset(f.name for f in fields(TrialRecord))


def _check_attributes(attributes):
    if not isinstance(attributes, dict):
        raise MalformedOutput(f'attributes must be an object, got {attributes!r}', role=Role.VALIDATOR)
    for trial in _objects(attributes.get('trials'), 'attributes.trials', Role.VALIDATOR):
        unknown = sorted(set(trial) - TRIAL_KEYS)
        if unknown:
            raise MalformedOutput(f'trial has unknown fields {", ".join(unknown)}', role=Role.VALIDATOR)
    return attributes


class ChatInvestigator(Investigator):

    def __init__(self, client, template='agents/investigator.txt'):
        self.client = client
        self.template = template

    def base_prompt(self):
        return system_prompt(Role.INVESTIGATOR)

    def investigate(self, request):
        return self.client.complete_json(
            Role.INVESTIGATOR,
            system_prompt(Role.INVESTIGATOR),
            render_to_string(self.template, {'request': request}),
            read=lambda data: self.read_result(request, data),
        )

    def read_result(self, request, data):
        found = data.get('candidates', [])
        if not isinstance(found, list):
            raise MalformedOutput('candidates is not a list', role=Role.INVESTIGATOR)

        excluded = {normalize_name(name) for name in request.excluded}
        candidates = []
        for item in found:
            # 이름만 준 경우
            if isinstance(item, str):
                item = {'name': item}
            if not isinstance(item, dict):
                raise MalformedOutput(f'candidate {item!r} is neither a name nor an object', role=Role.INVESTIGATOR)
            name = str(item.get('name', '')).strip()
            if not name or normalize_name(name) in excluded:
                continue
            candidates.append(Candidate(
                raw_name=name,
                source_url=str(item.get('source_url', '')),
                discovered_by_node=request.node,
                discovered_language=request.language,
                epoch=request.epoch,
            ))

        domains = _strings(data.get('domains'))
        for candidate in candidates:
            domain = domain_of(candidate.source_url)
            if domain and domain not in domains:
                domains.append(domain)
        return InvestigatorResult(candidates, _strings(data.get('queries')), domains)


class ChatValidator(Validator):

    def __init__(self, client, template='agents/validator.txt'):
        self.client = client
        self.template = template

    def validate(self, query, candidate):
        return self.client.complete_json(
            Role.VALIDATOR,
            system_prompt(Role.VALIDATOR),
            render_to_string(self.template, {'query': query, 'candidate': candidate}),
            read=lambda data: self.read_verdict(candidate, data),
        )

    def read_verdict(self, candidate, data):
        """답을 MatchVerdict 로. 매치면 레코드까지 만들어 봐서 모양을 확인함"""
        checks = []
        for item in _objects(data.get('criteria'), 'criteria', Role.VALIDATOR):
            verdict = str(item.get('verdict', 'unknown')).lower()
            if verdict not in CriterionVerdict.values:
                verdict = CriterionVerdict.UNKNOWN
            evidence = tuple(
                (str(e.get('url', '')), str(e.get('quote', '')))
                for e in _objects(item.get('evidence'), 'criteria.evidence', Role.VALIDATOR)
            )
            checks.append(CriterionCheck(str(item.get('criterion', '')), verdict, evidence, bool(item.get('hard', True))))

        rationale = str(data.get('failure_rationale') or '').strip()
        failed = [c.criterion for c in checks if c.hard and not c.passed]
        if not data.get('is_match') or failed:
            if not rationale:
                rationale = f'criteria not met: {"; ".join(failed)}' if failed else 'validator gave no rationale'
            return MatchVerdict.non_match(rationale, per_criterion=checks)

        try:
            citations = tuple(
                Provenance(str(c['claim']), str(c['source_url']), str(c['quote']))
                for c in _objects(data.get('citations'), 'citations', Role.VALIDATOR)
            )
            verdict = MatchVerdict(
                is_match=True,
                per_criterion=tuple(checks),
                canonical_name=str(data.get('canonical_name') or candidate.raw_name).strip(),
                aliases=tuple(_strings(data.get('aliases'))),
                normalized_attributes=_check_attributes(data.get('attributes') or {}),
                citations=citations,
            )
            verdict.to_asset(candidate)
        except (KeyError, TypeError, InvariantViolation) as e:
            raise MalformedOutput(f'validator verdict is inconsistent: {e}', role=Role.VALIDATOR) from e
        return verdict


class ChatDeduplicator(Deduplicator):

    def __init__(self, client, template='agents/dedup.txt'):
        self.client = client
        self.template = template

    def merge_pass(self, items, existing):
        return self.client.complete_json(
            Role.DEDUPLICATOR,
            system_prompt(Role.DEDUPLICATOR),
            render_to_string(self.template, {
                'items': [(i, item, sorted(item.aliases)) for i, item in enumerate(items)],
                'existing': [(item, sorted(item.aliases)) for item in existing],
            }),
            read=lambda data: self.read_groups(items, data),
        )

    def read_groups(self, items, data):
        """groups: 같은 자산끼리 묶은 index 목록. existing: store 에 이미 있는 항목 index"""
        groups = data.get('groups', [])
        known = data.get('existing', [])
        if not isinstance(groups, list) or not all(isinstance(group, list) for group in groups):
            raise MalformedOutput(f'groups must be a list of index lists, got {groups!r}', role=Role.DEDUPLICATOR)
        if not isinstance(known, list):
            raise MalformedOutput(f'existing must be a list of indexes, got {known!r}', role=Role.DEDUPLICATOR)

        known = {i for i in known if isinstance(i, int)}
        used = set()
        merged = []
        for group in groups:
            indexes = [i for i in group if isinstance(i, int) and 0 <= i < len(items) and i not in used]
            if not indexes:
                continue
            used.update(indexes)
            if any(i in known for i in indexes):
                continue
            record = items[indexes[0]]
            for i in indexes[1:]:
                record = record.merged_with(items[i])
            merged.append((indexes[0], record))
        # 어느 그룹에도 없는 항목은 그대로 둠
        for i, item in enumerate(items):
            if i not in used and i not in known:
                merged.append((i, item))
        return [record for _, record in sorted(merged, key=lambda pair: pair[0])]


class ChatCoach(Coach):

    def __init__(self, client, template='agents/coach.txt', summary_template='agents/summarize.txt'):
        self.client = client
        self.template = template
        self.summary_template = summary_template

    def expand(self, context):
        try:
            return self.client.complete_json(
                Role.COACH, system_prompt(Role.COACH), render_to_string(self.template, {'context': context}),
                read=self.read_output,
            )
        except MalformedOutput as e:
            # 자식 없이 넘어감. 다음 epoch 에 다른 잎이 선택됨
            logger.warning('coach output for node %s could not be parsed: %s', context.node, e)
            return CoachOutput.build([], rationale='malformed coach output')

    def read_output(self, data):
        children = data.get('children', [])
        if not isinstance(children, list):
            raise MalformedOutput(f'children must be a list, got {children!r}', role=Role.COACH)
        pairs = []
        for item in children:
            if isinstance(item, dict) and item.get('directive'):
                pairs.append((str(item['directive']), str(item.get('instructions', ''))))
        return CoachOutput.build(pairs, rationale=str(data.get('rationale', '')))

    def summarize(self, rationales, cap):
        text = self.client.complete(
            Role.SUMMARIZER,
            system_prompt(Role.SUMMARIZER),
            [{'role': 'user', 'content': render_to_string(self.summary_template, {'rationales': rationales, 'cap': cap})}],
        )
        return text.strip()[:cap]


def build_chat_backends(transcript_dir=None, seed=None):
    client = ChatClient.from_settings(transcript_dir=transcript_dir, seed=seed)
    return Backends(
        investigator=ChatInvestigator(client),
        validator=ChatValidator(client),
        deduplicator=ChatDeduplicator(client),
        coach=ChatCoach(client),
        name='chat',
    )
