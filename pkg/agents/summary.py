import logging
from collections import Counter

from agents.exceptions import BackendError
from agents.schemas import Role

logger = logging.getLogger(__name__)


def failure_pattern(rationale):
    """'wrong modality: AB-1001 is adc' -> 'wrong modality'"""
    return rationale.split(':', 1)[0].strip()


def frequency_summary(rationales, cap):
    counts = Counter(failure_pattern(r) for r in rationales if r.strip())
    lines = [f'- {pattern} (x{n})' for pattern, n in sorted(counts.items(), key=lambda item: (-item[1], item[0]))]
    return '\n'.join(lines)[:cap]


def truncated_concatenation(rationales, cap):
    return '; '.join(r.strip() for r in rationales if r.strip())[:cap]


def summarize_failures(rationales, coach, cap=2000, meter=None):
    rationales = [r for r in rationales if r and r.strip()]
    if not rationales:
        return ''
    if meter is not None and not meter.charge(Role.SUMMARIZER):
        return truncated_concatenation(rationales, cap)
    try:
        summary = coach.summarize(rationales, cap)
    except BackendError as e:
        logger.warning('failure summarization failed, falling back to concatenation: %s', e)
        return truncated_concatenation(rationales, cap)
    return (summary or '')[:cap]
