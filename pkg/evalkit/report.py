from dataclasses import dataclass
from pathlib import Path

from evalkit.grading import OracleGrader, evaluate_run, sim_examples
from evalkit.metrics import f1
from utils.jsonl import write_json

QUALITY_COLUMNS = ('epoch', 'wall_clock', 'assets', 'precision', 'recall', 'f1')


@dataclass(frozen=True)
class QualityPoint:
    epoch: int
    wall_clock: float
    assets: int
    precision: float | None
    recall: float | None
    f1: float | None

    def to_row(self):
        def cell(value):
            return '' if value is None else f'{value:.6f}'
        return [str(self.epoch), f'{self.wall_clock:.3f}', str(self.assets),
                cell(self.precision), cell(self.recall), cell(self.f1)]


def quality_series(epochs, examples, grader, query_id='q1'):
    """epoch 마다 그때까지 모인 자산으로 precision/recall/F1 을 다시 계산"""
    examples = list(examples)
    query = examples[0].query if examples else ''
    verdict_cache = {}
    found = []
    points = []
    for record in epochs:
        found.extend(record.get('new_assets', []))
        recalled = sum(grader.recall_verdict(example, found).verdict for example in examples)
        for name in found:
            if name not in verdict_cache:
                verdict_cache[name] = grader.precision_verdict(query_id, query, name).is_match
        precision = sum(verdict_cache[name] for name in found) / len(found) if found else None
        recall = recalled / len(examples) if examples else None
        score = f1(precision, recall) if precision is not None and recall is not None else None
        points.append(QualityPoint(record['epoch'], record.get('wall_clock', 0.0), len(found), precision, recall, score))
    return points


def evaluate_sim_run(universe, query, asset_names, epochs=()):
    """오라클 채점: (Evaluation, quality series)"""
    grader = OracleGrader(universe)
    examples = sim_examples(universe, query)
    evaluation = evaluate_run({'q1': list(asset_names)}, examples, grader)
    return evaluation, quality_series(epochs, examples, grader)


def render_table(evaluation):
    def cell(value):
        return '-' if value is None else f'{value:.4f}'

    header = f'{"query":<12}{"examples":>10}{"recalled":>10}{"predicted":>11}{"correct":>9}'
    lines = [header, '-' * len(header)]
    for row in evaluation.rows:
        lines.append(f'{row.query_id:<12}{row.examples:>10}{row.recalled:>10}{row.predicted:>11}{row.correct:>9}')
    lines += [
        '',
        f'recall     {cell(evaluation.recall)}',
        f'precision  {cell(evaluation.precision)}',
        f'f1         {cell(evaluation.f1)}',
    ]
    if evaluation.excluded:
        lines.append('')
        lines.append(f'excluded ({len(evaluation.excluded)}):')
        lines += [f'  {kind} {ident}: {reason}' for kind, ident, reason in evaluation.excluded]
    return '\n'.join(lines) + '\n'


def render_quality(points):
    lines = ['\t'.join(QUALITY_COLUMNS)]
    lines += ['\t'.join(point.to_row()) for point in points]
    return '\n'.join(lines) + '\n'


def write_metrics(directory, evaluation, points=(), quality_name='quality.tsv'):
    directory = Path(directory)
    write_json(directory / 'metrics.json', evaluation.to_record())
    (directory / 'metrics.txt').write_text(render_table(evaluation), encoding='utf-8')
    (directory / quality_name).write_text(render_quality(points), encoding='utf-8')
    return directory
