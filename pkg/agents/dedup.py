"""Deduplication drivers.

Both modes return ΔÃ: validated items that are new to the global store, with
duplicates inside the input collapsed to one representative.
"""
import logging

from agents.exceptions import BackendError
from agents.schemas import Role
from scout.models import DedupMode

logger = logging.getLogger(__name__)


def _batches(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def _pass(backend, items, existing, meter):
    """한 번의 패스. 실패하거나 호출 상한에 걸리면 None"""
    if meter is not None and not meter.charge(Role.DEDUPLICATOR):
        return None
    try:
        return list(backend.merge_pass(items, existing))
    except BackendError as e:
        logger.warning('dedup pass over %d items failed, passing them through: %s', len(items), e)
        return None


def _new_to_store(items, store):
    fresh = []
    for item in items:
        hits = store.resolve_any(item.aliases)
        if hits:
            logger.debug('%s already stored as %s', item.canonical_name, ', '.join(sorted(hits)))
            continue
        fresh.append(item)
    return fresh


def deduplicate_light(validated, store, backend, batch_size=50, meter=None):
    """batch 단위로 한 번씩, batch 가 여러 개면 합친 목록에 한 번 더"""
    if batch_size < 1:
        raise ValueError(f'batch_size must be >= 1, got {batch_size}')
    validated = list(validated)
    if not validated:
        return []
    existing = store.records()

    batches = _batches(validated, batch_size)
    merged = []
    for batch in batches:
        result = _pass(backend, batch, existing, meter)
        merged.extend(batch if result is None else result)

    if len(batches) > 1:
        result = _pass(backend, merged, existing, meter)
        if result is not None:
            merged = result
    return _new_to_store(merged, store)


def deduplicate_heavy(validated, store, backend, meter=None):
    """항목 하나당 한 번씩 패스.

    지금까지 받아들인 항목 + 새 항목을 같이 넘겨서, 중복이면 alias/provenance 가
    대표 항목으로 합쳐지게 함 (light 와 같은 레코드가 나와야 함)
    """
    existing = store.records()
    accepted = []
    for item in validated:
        result = _pass(backend, accepted + [item], existing, meter)
        accepted = accepted + [item] if result is None else result
    return _new_to_store(accepted, store)


def deduplicate(mode, validated, store, backend, batch_size=50, meter=None):
    if mode == DedupMode.HEAVY:
        return deduplicate_heavy(validated, store, backend, meter=meter)
    return deduplicate_light(validated, store, backend, batch_size=batch_size, meter=meter)
