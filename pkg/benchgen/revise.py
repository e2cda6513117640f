import logging
from dataclasses import dataclass, replace

from django.conf import settings

from agents.exceptions import BackendError
from benchgen.exceptions import Unresolvable
from benchgen.querygen import find_leak

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Confirmed:
    generated: object  # GeneratedQuery
    record: object  # AssetRecord
    rounds: int
    history: tuple = ()  # 라운드별 (query, rationale)


def validate_and_revise(generated, record, validator, generator, max_rounds=None):
    """검증 -> 실패하면 이유를 넘겨 수정 -> 다시 검증. 처음 통과한 쌍을 돌려줌

    max_rounds 번 검증해도 통과하지 못하면 Unresolvable.
    수정본이 식별자를 흘리면 그 라운드는 실패로 보고 이전 쿼리로 다시 수정함.
    """
    if max_rounds is None:
        max_rounds = settings.SCOUT['REVISION_ROUNDS']
    if max_rounds < 1:
        raise ValueError(f'max_rounds must be >= 1, got {max_rounds}')

    history = []
    rationale = ''
    for round_number in range(1, max_rounds + 1):
        verdict = validator.validate_query(generated, record)
        if verdict.is_match:
            return Confirmed(generated, record, round_number, tuple(history))
        rationale = verdict.failure_rationale
        history.append((generated.text, rationale))
        logger.debug('%s round %d rejected: %s', record.canonical_name, round_number, rationale)
        if round_number == max_rounds:
            break
        try:
            revised = generator.revise(generated, record, rationale)
        except BackendError as e:
            logger.warning('%s: revision failed in round %d: %s', record.canonical_name, round_number, e)
            continue
        leak = find_leak(revised.text, record)
        if leak is not None:
            logger.info('%s: revision leaks %r, keeping the previous query', record.canonical_name, leak)
            continue
        generated = replace(revised, attempts=generated.attempts)

    raise Unresolvable(
        f'{record.canonical_name}: validator still rejects after {max_rounds} rounds: {rationale}',
        query=generated.text, rationale=rationale, rounds=max_rounds,
    )
