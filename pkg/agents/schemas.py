"""Request and response shapes shared by every backend."""
from dataclasses import dataclass, field

from django.db import models

from scout.exceptions import InvariantViolation
from scout.models import Provenance, asset_from_verdict


class Role(models.TextChoices):
    INVESTIGATOR = 'investigator', 'Investigator'
    VALIDATOR = 'validator', 'Criteria match validator'
    DEDUPLICATOR = 'deduplicator', 'Deduplicator'
    COACH = 'coach', 'Coach'
    SUMMARIZER = 'summarizer', 'Failure summarizer'


class CriterionVerdict(models.TextChoices):
    PASS = 'pass', 'Pass'
    FAIL = 'fail', 'Fail'
    UNKNOWN = 'unknown', 'Unknown'


@dataclass(frozen=True)
class InvestigatorRequest:
    query: str
    directive: str = ''
    instructions: str = ''
    language: str = 'en'
    known_assets: tuple = ()
    known_candidates: tuple = ()
    node: int = 0
    epoch: int = 1

    def check_language(self, languages):
        if self.language not in languages:
            raise InvariantViolation(f'language {self.language} is not in the configured set {list(languages)}')
        return self

    @property
    def excluded(self):
        return tuple(self.known_assets) + tuple(self.known_candidates)


@dataclass
class InvestigatorResult:
    candidates: list = field(default_factory=list)
    executed_queries: list = field(default_factory=list)
    visited_domains: list = field(default_factory=list)


@dataclass(frozen=True)
class CriterionCheck:
    criterion: str
    verdict: str
    evidence: tuple = ()  # ((url, quote), ...)
    hard: bool = True

    @property
    def passed(self):
        return self.verdict == CriterionVerdict.PASS


@dataclass(frozen=True)
class MatchVerdict:
    is_match: bool
    per_criterion: tuple = ()
    failure_rationale: str = ''
    canonical_name: str = ''
    aliases: tuple = ()
    normalized_attributes: dict = field(default_factory=dict)
    citations: tuple = ()

    def __post_init__(self):
        if self.is_match:
            failed = [c.criterion for c in self.per_criterion if c.hard and not c.passed]
            if failed:
                raise InvariantViolation(f'match verdict with failing criteria: {"; ".join(failed)}')
            if self.failure_rationale:
                raise InvariantViolation('match verdict must not carry a failure rationale')
        elif not self.failure_rationale.strip():
            raise InvariantViolation('non-match verdict needs a failure rationale')
        for item in self.citations:
            if not isinstance(item, Provenance):
                raise InvariantViolation(f'citation {item!r} is not a Provenance')

    @classmethod
    def non_match(cls, rationale, per_criterion=()):
        return cls(is_match=False, per_criterion=tuple(per_criterion), failure_rationale=rationale)

    def to_asset(self, candidate):
        return asset_from_verdict(candidate, self)


@dataclass(frozen=True)
class CoachContext:
    query: str
    node: int
    directive: str = ''
    instructions: str = ''
    lineage: tuple = ()
    known_assets: tuple = ()
    known_candidates: tuple = ()
    executed_queries: tuple = ()
    visited_domains: tuple = ()
    failure_summary: str = ''
    base_prompt: str = ''
    existing_children: tuple = ()
    k: int = 3


@dataclass(frozen=True)
class CoachOutput:
    children: tuple = ()  # ((directive, instructions), ...)
    rationale: str = ''
    duplicates: int = 0

    def __post_init__(self):
        directives = [directive for directive, _ in self.children]
        if len(set(directives)) != len(directives):
            raise InvariantViolation('coach children must have pairwise distinct directives')

    @classmethod
    def build(cls, pairs, rationale=''):
        """중복/빈 directive 는 첫 번째만 남기고 버림"""
        children = []
        seen = set()
        duplicates = 0
        for directive, instructions in pairs:
            directive = (directive or '').strip()
            if not directive or directive in seen:
                duplicates += 1
                continue
            seen.add(directive)
            children.append((directive, (instructions or '').strip()))
        return cls(children=tuple(children), rationale=rationale, duplicates=duplicates)
