"""Simulated web search for the scripted investigator.

A search in one language sees the entities of its slice that are
discoverable in that language, most prominent first. Only the top
``budget`` of them fit in the result window, so repeating the same search
stops producing anything new once the window is known.
"""
import random
from typing import NamedTuple

from simworld.query import SimQuery
from utils.text import digest, domain_of


class SimHit(NamedTuple):
    entity_id: int
    name: str
    source_url: str
    distractor: bool


class SimSearch(NamedTuple):
    hits: list
    executed_queries: list
    visited_domains: list


def prominence(entity, language):
    return -entity.weight(language), entity.id


def search_scope(query, directive):
    query = query if isinstance(query, SimQuery) else SimQuery.parse(query)
    directive = directive if isinstance(directive, SimQuery) else SimQuery.parse(directive)
    return query, directive, query.conjoin(directive)


def sim_investigate(universe, req, budget, distractor_rate=0.0, threshold=0.5, seed=0):
    if budget < 1:
        raise ValueError(f'budget must be >= 1, got {budget}')
    query, directive, scope = search_scope(req.query, req.directive)
    language = req.language
    known = universe.resolve_ids(list(req.known_assets) + list(req.known_candidates))

    visible = [
        e for e in universe.assets
        if scope.matches(e) and e.visible_in(language, threshold)
    ]
    visible.sort(key=lambda e: prominence(e, language))
    picks = [e for e in visible[:budget] if e.id not in known]

    distractors = []
    count = int(len(picks) * distractor_rate + 0.5)
    if count:
        # 조건 하나가 빠진 자산이나 약이 아닌 이름이 같은 결과 화면에 섞여 나옴
        pool = [
            e for e in universe.entities
            if directive.matches(e)
            and (not e.is_valid_drug or not query.matches(e))
            and e.visible_in(language, threshold)
            and e.id not in known
        ]
        pool.sort(key=lambda e: prominence(e, language))
        pool = pool[:budget * 2]
        rng = random.Random(f'{seed}:{digest(f"{scope}|{language}")}')
        distractors = rng.sample(pool, min(count, len(pool)))
        distractors.sort(key=lambda e: prominence(e, language))

    hits = [SimHit(e.id, e.name_in(language), e.source_url(language), False) for e in picks]
    hits += [SimHit(e.id, e.name_in(language), e.source_url(language), True) for e in distractors]

    executed = [f'[{language}] {scope}'.rstrip()]
    domains = []
    for hit in hits:
        domain = domain_of(hit.source_url)
        if domain not in domains:
            domains.append(domain)
    return SimSearch(hits, executed, domains)


def discoverable_only_in(universe, query, language, among=None, threshold=0.5):
    """query 를 만족하고 among 언어들 중 language 에서만 검색되는 자산"""
    query = query if isinstance(query, SimQuery) else SimQuery.parse(query)
    others = [lang for lang in (among or universe.spec.languages) if lang != language]
    return [
        e for e in universe.assets
        if query.matches(e)
        and e.visible_in(language, threshold)
        and not any(e.visible_in(other, threshold) for other in others)
    ]
