"""English vs. origin-language discoverability of enriched assets."""
import logging
import math
from dataclasses import dataclass

from django.conf import settings

from utils.text import digest

logger = logging.getLogger(__name__)

SEARCH_SUFFIXES = ('', 'clinical trial', 'drug')


@dataclass(frozen=True)
class DiscoverabilityProfile:
    english_pages: int
    local_pages: int

    def __post_init__(self):
        for name in ('english_pages', 'local_pages'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f'{name} must be a non-negative integer, got {value!r}')

    def to_record(self):
        return {'english_pages': self.english_pages, 'local_pages': self.local_pages}


def under_radar_filter(profile, ceiling=None):
    """영어 검색 결과 ceiling(기본 9) 페이지 이하이고 현지어 결과가 1페이지 이상"""
    if ceiling is None:
        ceiling = settings.SCOUT['ENGLISH_PAGE_CEILING']
    return profile.english_pages <= ceiling and profile.local_pages > 0


def search_terms(record, count=None):
    """alias 마다 돌아가며 검색어를 만듦. 같은 레코드면 항상 같은 검색어"""
    count = count or settings.SCOUT['SEARCHES_PER_LANGUAGE']
    aliases = sorted(record.aliases)
    terms = []
    for i in range(count):
        alias = aliases[i % len(aliases)]
        suffix = SEARCH_SUFFIXES[i % len(SEARCH_SUFFIXES)]
        terms.append(f'"{alias}" {suffix}'.strip())
    return terms


def profile_discoverability(record, serp, count=None):
    """검색어들 중 가장 많은 결과 페이지 수를 언어별로 씀"""
    terms = search_terms(record, count)
    english = max(serp.pages(term, 'en') for term in terms)
    if record.origin_language == 'en':
        local = english
    else:
        local = max(serp.pages(term, record.origin_language) for term in terms)
    return DiscoverabilityProfile(english, local)


def filter_under_radar(records, profiles, fraction=None, seed=0, ceiling=None):
    """fraction 만큼의 자산에만 필터를 적용. (kept, dropped) 원래 순서 유지

    profiles: {canonical_name: DiscoverabilityProfile}
    """
    if fraction is None:
        fraction = settings.SCOUT['UNDER_RADAR_FRACTION']
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f'fraction must be within [0, 1], got {fraction}')
    records = list(records)
    order = sorted(records, key=lambda r: digest(f'{seed}:{r.canonical_name}'))
    subject = {r.canonical_name for r in order[:math.ceil(fraction * len(records))]}

    kept, dropped = [], []
    for record in records:
        if record.canonical_name in subject and not under_radar_filter(profiles[record.canonical_name], ceiling):
            dropped.append(record)
        else:
            kept.append(record)
    logger.info('under-the-radar filter: %d subject, %d kept, %d dropped', len(subject), len(kept), len(dropped))
    return kept, dropped
