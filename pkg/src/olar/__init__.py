"""Online active ℓp regression for p in [1, 2]: online Lewis weights, rescaled row sampling and label-efficient solvers."""
from __future__ import annotations

from olar.data import LabelOracle, RowStream, SyntheticSpec, gaussian_instance, gen_synthetic, read_stream
from olar.lewis import lewis_weights, leverage_scores, online_lewis_weights_exact
from olar.pipelines import PipelineConfig, PipelineResult, run
from olar.solvers import relative_error, solve

__version__ = "0.1.0"

__all__ = [
    "LabelOracle",
    "PipelineConfig",
    "PipelineResult",
    "RowStream",
    "SyntheticSpec",
    "gaussian_instance",
    "gen_synthetic",
    "lewis_weights",
    "leverage_scores",
    "online_lewis_weights_exact",
    "read_stream",
    "relative_error",
    "run",
    "solve",
]
