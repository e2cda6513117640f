import logging

from django.conf import settings

from agents.base import CallMeter
from agents.registry import build_backends
from evalkit.report import evaluate_sim_run, write_metrics
from scout.exceptions import BackendFailure
from scout.orchestrator import LogicalClock, MonotonicClock, build_orchestrator
from scout.rundir import RunDirectory
from simworld.universe import oracle_answer

logger = logging.getLogger(__name__)


def execute_run(config, out, fixture=None):
    """설정 하나로 검색을 돌리고 run 디렉터리를 채움. (RunResult, Evaluation 또는 None)"""
    rundir = RunDirectory(out)
    rundir.ensure_writable()
    universe = fixture.universe() if fixture is not None else None
    backends = build_backends(
        config.backend,
        roles=dict(config.roles),
        universe=universe,
        budget=fixture.budget if fixture else settings.SIMWORLD['BUDGET'],
        distractor_rate=fixture.distractor_rate if fixture else settings.SIMWORLD['DISTRACTOR_RATE'],
        threshold=settings.SIMWORLD['VISIBILITY_THRESHOLD'],
        seed=config.seed,
        transcript_dir=rundir.transcripts,
    )

    rundir = RunDirectory.create(out)
    rundir.write_config(config)
    meter = CallMeter(config.call_ceiling)
    clock = LogicalClock(meter) if backends.name == 'scripted' else MonotonicClock()
    ground_truth = oracle_answer(universe, config.query) if universe is not None else None
    orchestrator = build_orchestrator(config, backends, meter=meter, clock=clock, ground_truth=ground_truth)

    try:
        result = orchestrator.run()
    except BackendFailure as e:
        if e.partial is not None:
            rundir.write_result(e.partial)
        raise
    rundir.write_result(result)

    evaluation = None
    if universe is not None and ground_truth:
        evaluation, points = evaluate_sim_run(
            universe, config.query, result.assets.canonical_names(), [r.to_record() for r in result.reports],
        )
        write_metrics(rundir.path, evaluation, points)
        logger.info('%s: recall=%.4f assets=%d', rundir, evaluation.recall or 0.0, len(result.assets))
    elif universe is not None:
        logger.warning('no asset in %s matches %r, skipping metrics', fixture.name, config.query)
    rundir.mark_complete()
    return result, evaluation
