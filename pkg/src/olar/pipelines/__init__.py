"""Online active regression pipelines and the budget-mode experiment samplers."""
from __future__ import annotations

from olar.pipelines.boost import BOOST_RULES, boost
from olar.pipelines.budget import (
    BudgetReport,
    budget_levels,
    budgeted_active,
    offline_active_like,
    uniform_baseline,
)
from olar.pipelines.common import WEIGHT_MODES, LabelCache, PipelineConfig, PipelineResult
from olar.pipelines.general import run_general_p, run_p1
from olar.pipelines.p2 import run_p2


def runner_for(config: PipelineConfig):
    """The pipeline function matching ``config`` (p and weight mode)."""
    cfg = config.validated()
    if cfg.p == 1.0:
        return run_p1
    if cfg.p == 2.0 and cfg.weight_mode != "compression-tree":
        return run_p2
    return run_general_p


def run(stream, config: PipelineConfig, rule: str = "median") -> PipelineResult:
    """Run the pipeline for ``config`` on ``stream``, boosting when ``boost_runs`` > 1."""
    cfg = config.validated()
    chosen, _ = boost(cfg, runner_for(cfg), stream, rule=rule)
    return chosen


__all__ = [
    "BOOST_RULES",
    "WEIGHT_MODES",
    "BudgetReport",
    "LabelCache",
    "PipelineConfig",
    "PipelineResult",
    "boost",
    "budget_levels",
    "budgeted_active",
    "offline_active_like",
    "run",
    "run_general_p",
    "run_p1",
    "run_p2",
    "runner_for",
    "uniform_baseline",
]
