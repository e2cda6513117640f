import abc
import logging
import threading
from collections import Counter
from dataclasses import dataclass

logger = logging.getLogger(__name__)


class Investigator(abc.ABC):

    @abc.abstractmethod
    def investigate(self, request):
        """InvestigatorRequest -> InvestigatorResult"""

    def base_prompt(self):
        return ''


class Validator(abc.ABC):

    @abc.abstractmethod
    def validate(self, query, candidate):
        """(query, Candidate) -> MatchVerdict"""


class Deduplicator(abc.ABC):

    @abc.abstractmethod
    def merge_pass(self, items, existing):
        """한 번의 중복 제거 패스.

        items 안의 같은 자산은 하나로 합치고 (alias/provenance 합집합),
        existing 에 이미 있는 자산은 뺀 AssetRecord 목록을 돌려줌.
        """


class Coach(abc.ABC):

    @abc.abstractmethod
    def expand(self, context):
        """CoachContext -> CoachOutput"""

    @abc.abstractmethod
    def summarize(self, rationales, cap):
        """거절 사유들을 반복되는 패턴 몇 줄로 요약"""


@dataclass
class Backends:
    investigator: Investigator
    validator: Validator
    deduplicator: Deduplicator
    coach: Coach
    name: str = 'scripted'


class CallMeter:
    """epoch 별 backend 호출 수. ceiling 을 넘는 호출은 charge() 가 False 를 돌려줌"""

    def __init__(self, ceiling=None):
        if ceiling is not None and ceiling < 1:
            raise ValueError(f'call ceiling must be >= 1, got {ceiling}')
        self.ceiling = ceiling
        self.epoch = 0
        self.per_epoch = Counter()
        self.total = 0
        self.refused = 0
        self._lock = threading.Lock()

    def start_epoch(self, epoch):
        with self._lock:
            self.epoch = epoch
            self.per_epoch = Counter()
            self.refused = 0

    def charge(self, role):
        with self._lock:
            if self.ceiling is not None and sum(self.per_epoch.values()) >= self.ceiling:
                self.refused += 1
                if self.refused == 1:
                    logger.warning('epoch %s: call ceiling %s reached, truncating', self.epoch, self.ceiling)
                return False
            self.per_epoch[str(role)] += 1
            self.total += 1
            return True

    @property
    def truncated(self):
        return self.refused > 0

    def counts(self):
        return dict(sorted(self.per_epoch.items()))
