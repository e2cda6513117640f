"""Attribute predicates over simulated entities.

Text form: criteria joined by ``;`` are ANDed, values joined by ``|`` inside a
criterion are ORed, and whole branches joined by ``||`` are ORed::

    stage=clinical; modality=antibody|bispecific || target=lat1

An empty string is the always-true query.
"""
from dataclasses import dataclass

FIELDS = ('modality', 'target', 'indication', 'stage', 'region', 'origin')


@dataclass(frozen=True)
class Criterion:
    field: str
    values: frozenset

    def __post_init__(self):
        if self.field not in FIELDS:
            raise ValueError(f'unknown field {self.field!r}; expected one of {", ".join(FIELDS)}')
        if not self.values:
            raise ValueError(f'criterion on {self.field} has no values')

    def __str__(self):
        return f'{self.field}={"|".join(sorted(self.values))}'

    def holds(self, entity):
        return entity.attribute(self.field) in self.values

    def describe(self):
        return f'{self.field} is {" or ".join(sorted(self.values))}'

    @classmethod
    def parse(cls, text):
        field, sep, values = text.partition('=')
        if not sep:
            raise ValueError(f'expected field=value, got {text!r}')
        values = frozenset(v.strip().lower() for v in values.split('|') if v.strip())
        return cls(field.strip().lower(), values)


@dataclass(frozen=True)
class SimQuery:
    branches: tuple  # tuple[tuple[Criterion, ...], ...] (OR of ANDs)

    def __str__(self):
        return ' || '.join('; '.join(str(c) for c in branch) for branch in self.branches)

    @classmethod
    def true(cls):
        return cls(((),))

    @classmethod
    def false(cls):
        return cls(())

    @classmethod
    def parse(cls, text):
        text = (text or '').strip()
        if text in ('', '*'):
            return cls.true()
        branches = []
        for branch_text in text.split('||'):
            criteria = tuple(Criterion.parse(part) for part in branch_text.split(';') if part.strip())
            branches.append(criteria)
        return cls(tuple(branches))

    @property
    def criteria(self):
        return [c for branch in self.branches for c in branch]

    def constrained_fields(self):
        return {c.field for c in self.criteria}

    def matches(self, entity):
        return any(all(c.holds(entity) for c in branch) for branch in self.branches)

    def checks(self, entity):
        """가장 적게 실패한 branch 의 (criterion, 통과여부) 목록"""
        if not self.branches:
            return []
        scored = [[(c, c.holds(entity)) for c in branch] for branch in self.branches]
        return min(scored, key=lambda checks: sum(not ok for _, ok in checks))

    def failed_criteria(self, entity):
        return [c for c, ok in self.checks(entity) if not ok]

    def conjoin(self, other):
        return SimQuery(tuple(a + b for a in self.branches for b in other.branches))

    def narrowed(self, criterion):
        return SimQuery(tuple(branch + (criterion,) for branch in self.branches))
