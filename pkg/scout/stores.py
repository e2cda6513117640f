"""Global stores shared by every rollout of a run.

C_global (candidates), Ã_global (validated assets) and the evidence logs
(executed queries, visited domains). All three accept concurrent appends;
snapshots are written in a canonical order so replays compare byte-for-byte.
"""
import enum
import logging
import threading
from typing import NamedTuple

from scout.exceptions import InvariantViolation
from scout.models import AssetRecord, Candidate, DomainEvidence, QueryEvidence
from utils.jsonl import write_lines
from utils.text import normalize_name

logger = logging.getLogger(__name__)


class CandidateStore:

    def __init__(self):
        self._items = []
        self._seen = set()  # (epoch, normalized name)
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))

    def merge_candidates(self, new):
        """정규화된 이름 기준으로 epoch 당 한 번만 추가. 추가된 개수를 반환"""
        appended = 0
        with self._lock:
            for candidate in new:
                key = (candidate.epoch, candidate.key)
                if key in self._seen:
                    continue
                self._seen.add(key)
                self._items.append(candidate)
                appended += 1
        return appended

    def names(self):
        """처음 발견된 순서대로, 정규화 이름이 겹치지 않는 raw_name 목록"""
        seen = set()
        names = []
        for candidate in self.ordered():
            if candidate.key not in seen:
                seen.add(candidate.key)
                names.append(candidate.raw_name)
        return names

    def ordered(self):
        indexed = list(enumerate(self._items))
        indexed.sort(key=lambda pair: (pair[1].epoch, pair[1].discovered_by_node, pair[0]))
        return [candidate for _, candidate in indexed]

    def snapshot(self, path):
        return write_lines(path, 'candidate', (c.to_record() for c in self.ordered()))


class Outcome(enum.StrEnum):
    INSERTED = 'inserted'
    MERGED = 'merged_into'


class Registration(NamedTuple):
    outcome: Outcome
    canonical_name: str


class GlobalAssetStore:

    def __init__(self):
        self.assets = {}  # canonical_name -> AssetRecord
        self.alias_index = {}  # normalized alias -> canonical_name
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.assets)

    def __contains__(self, name):
        return self.resolve(name) is not None

    def resolve(self, name):
        return self.alias_index.get(normalize_name(name))

    def resolve_any(self, names):
        """이름들 중 저장소에 있는 canonical_name 집합"""
        return {self.alias_index[key] for key in map(normalize_name, names) if key in self.alias_index}

    def canonical_names(self):
        return sorted(self.assets)

    def records(self):
        return [self.assets[name] for name in self.canonical_names()]

    def register_asset(self, record):
        record.validate()
        with self._lock:
            hits = self.resolve_any(record.aliases)
            if len(hits) > 1:
                raise InvariantViolation(
                    f'{record.canonical_name} bridges existing assets {", ".join(sorted(hits))}'
                )
            if hits:
                canonical = hits.pop()
                merged = self.assets[canonical].merged_with(record)
                self.assets[canonical] = merged
                self._index(merged)
                return Registration(Outcome.MERGED, canonical)

            self.assets[record.canonical_name] = record
            self._index(record)
            return Registration(Outcome.INSERTED, record.canonical_name)

    def _index(self, record):
        for alias in record.aliases:
            self.alias_index[normalize_name(alias)] = record.canonical_name

    def check_invariants(self):
        for name, record in self.assets.items():
            if self.resolve(name) != name:
                raise InvariantViolation(f'{name} does not resolve to itself')
            for alias in record.aliases:
                if self.resolve(alias) != name:
                    raise InvariantViolation(f'alias {alias} of {name} resolves elsewhere')

    def snapshot(self, path):
        return write_lines(path, 'asset', (record.to_record() for record in self.records()))

    @classmethod
    def from_records(cls, records):
        store = cls()
        for record in records:
            store.register_asset(AssetRecord.from_record(record))
        return store


class EvidenceLog:
    """append-only. 이미 들어간 항목은 바꾸거나 지우지 않음"""

    def __init__(self):
        self._queries = []
        self._domains = []
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._queries) + len(self._domains)

    def append_query(self, query_text, language, node, epoch):
        with self._lock:
            entry = QueryEvidence(query_text, language, node, epoch, seq=len(self._queries))
            self._queries.append(entry)
        return entry

    def append_domain(self, domain, language, node, epoch):
        with self._lock:
            entry = DomainEvidence(domain, language, node, epoch, seq=len(self._domains))
            self._domains.append(entry)
        return entry

    @property
    def queries(self):
        return sorted(self._queries, key=lambda q: (q.epoch, q.node, q.seq))

    @property
    def domains(self):
        return sorted(self._domains, key=lambda d: (d.epoch, d.node, d.seq))

    def query_texts(self):
        return [entry.query_text for entry in self.queries]

    def domain_names(self):
        seen = []
        for entry in self.domains:
            if entry.domain not in seen:
                seen.append(entry.domain)
        return seen

    def snapshot(self, path):
        records = [
            {'type': 'query', 'text': q.query_text, 'language': q.language, 'node': q.node, 'epoch': q.epoch}
            for q in self.queries
        ]
        records += [
            {'type': 'domain', 'text': d.domain, 'language': d.language, 'node': d.node, 'epoch': d.epoch}
            for d in self.domains
        ]
        return write_lines(path, 'evidence', records)


def candidate_from_record(record):
    return Candidate(
        raw_name=record['raw_name'],
        source_url=record.get('source_url', ''),
        discovered_by_node=record.get('node', 0),
        discovered_language=record.get('language', 'en'),
        epoch=record.get('epoch', 1),
    )
