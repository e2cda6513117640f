from evalkit.exceptions import EmptyBenchmark, SubsetViolation


def _binary(verdict):
    value = getattr(verdict, 'verdict', verdict)
    if value not in (0, 1):
        raise ValueError(f'recall verdicts are binary, got {value!r}')
    return int(value)


def recall_score(verdicts):
    """벤치마크 예제별 0/1 판정의 평균"""
    values = [_binary(v) for v in verdicts]
    if not values:
        raise EmptyBenchmark('recall needs at least one benchmark example')
    return sum(values) / len(values)


def precision_score(all_predicted, correct):
    """예측 (query, asset) 쌍 중 맞은 비율. 예측이 없으면 None (0 이 아님)"""
    all_predicted = set(all_predicted)
    correct = set(correct)
    if not correct <= all_predicted:
        raise SubsetViolation(f'{len(correct - all_predicted)} correct pairs are not among the predictions')
    if not all_predicted:
        return None
    return len(correct) / len(all_predicted)


def f1(precision, recall):
    for name, value in (('precision', precision), ('recall', recall)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f'{name} must be within [0, 1], got {value}')
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
