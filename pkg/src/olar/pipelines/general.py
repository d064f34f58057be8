"""Multi-stage online active regression for p in (1, 2], and the single-stage p=1 variant."""
from __future__ import annotations

import time

import numpy as np

from olar.sampling import (
    STAGE_S,
    STAGE_S1,
    STAGE_S2,
    STAGE_S3,
    CounterRNG,
    QueryLedger,
    SamplingDecision,
    WeightedSketch,
    decide,
    sample_step,
    sampling_probability,
)
from olar.solvers import solve
from olar.pipelines.common import LabelCache, PipelineConfig, PipelineResult, kept_rows, retained_prefix
from olar.pipelines.weights import make_estimator

# seed offsets for the weight estimators, kept away from the sampler stage ids
_EST_A, _EST_A1 = 101, 102


class _Run:
    """State common to the general pipelines: config, RNG, label cache, space accounting."""

    def __init__(self, stream, config: PipelineConfig):
        self.cfg = config.validated()
        self.stream = stream
        self.d = stream.d
        self.n_declared = self.cfg.n_declared or stream.n
        self.rng = CounterRNG(self.cfg.seed)
        self.ledger = QueryLedger(self.cfg.budget)
        self.labels = LabelCache(stream.oracle, self.ledger)
        self.peak = 0
        self.t0 = time.perf_counter()

    def estimator(self, offset: int):
        return make_estimator(
            self.cfg.weight_mode, self.d, self.cfg.p, self.cfg, self.n_declared, self.rng.derive(offset)
        )

    def solve(self, A, b, x0=None):
        return solve(A, b, self.cfg.p, self.cfg.solver_tol, self.cfg.solver_max_iter, x0=x0, strict=False)

    def track(self, *holders) -> None:
        self.peak = max(self.peak, sum(len(h) if isinstance(h, WeightedSketch) else h.stored_rows for h in holders))


def _retain(run: _Run, sketches, estimators, prescaled=None):
    """Put the retained prefix into every sketch and estimator with probability 1."""
    prefix, rest = retained_prefix(run.stream, run.d)
    for i, a in prefix:
        dec = SamplingDecision(i, 1.0, True, 1.0)
        for sk in sketches:
            label = run.labels.fetch("init", i) if sk.track_labels else None
            sk.add(a, dec, label)
        for est in estimators:
            est.push(a)
    return len(prefix), rest


def _residual_solutions(run: _Run, S, S2, S3, x0=None):
    x0 = x0 or (None, None, None)
    sol_c = run.solve(S.A, S.b, x0[0])
    x_c = sol_c.x
    z2 = S2.b - S2.A @ x_c
    sol_hat = run.solve(S2.A, z2, x0[1])
    z3 = S3.b - S3.A @ x_c
    sol_bar = run.solve(S3.A, z3 - S3.A @ sol_hat.x, x0[2])
    return (sol_c, sol_hat, sol_bar)


def run_general_p(stream, config: PipelineConfig, intermediate: bool = False, checkpoints=()) -> PipelineResult:
    """Four-sampler online active ℓp regression.

    S samples (A, b) by online Lewis weights with β; S₁ samples A with β₁
    without touching labels; rows kept by S₁ are sampled again by S₂ (β₂)
    and S₃ (β₃) using their online weight inside S₁A. At the end
    x_c = Reg(SA, Sb), x̂_c = Reg(S₂S₁A, z̃₂), x̄′ = Reg(S₃S₁A, z̃₃ − S₃S₁A·x̂_c)
    and x̃ = x_c + x̂_c + x̄′.

    With ``intermediate`` the three regressions are re-solved (warm started)
    after every row that any labelled sampler accepts; ``path`` then holds
    x̃^{(t)} for every t from the end of the retained prefix. The final
    answer is always a fresh solve, identical to the non-intermediate run.
    ``checkpoints`` lists prefix lengths T at which x̃^{(T)} is solved from
    the sketches as they stand after row T; the solutions land in
    ``diagnostics["checkpoints"]`` keyed by T.
    """
    run = _Run(stream, config)
    cfg, d, p = run.cfg, run.d, run.cfg.p
    betas = cfg.betas(d)
    S = WeightedSketch(d, p, STAGE_S)
    S1 = WeightedSketch(d, p, STAGE_S1, track_labels=False)
    S2 = WeightedSketch(d, p, STAGE_S2)
    S3 = WeightedSketch(d, p, STAGE_S3)
    est = run.estimator(_EST_A)
    est1 = run.estimator(_EST_A1)
    start, rest = _retain(run, (S, S1, S2, S3), (est, est1))
    run.track(S, S1, S2, S3, est, est1)

    marks = {int(c) for c in checkpoints}
    snapshots: dict[int, list[float]] = {}
    path = []
    current = None
    if intermediate:
        current = _residual_solutions(run, S, S2, S3)
        path.append(sum(s.x for s in current))

    for t, a in enumerate(rest, start=start):
        w = est.push(a)
        sizes = (len(S), len(S2), len(S3))
        sample_step(S, run.rng, t, a, sampling_probability(betas["beta"], w), run.labels.stage("S"), None)
        # the same online weight drives S₁ (one computation, two independent draws)
        dec1 = decide(run.rng, t, sampling_probability(betas["beta1"], w), p, STAGE_S1)
        if dec1.sampled:
            row1 = a * dec1.scale
            S1.add(row1, dec1)
            w1 = est1.push(row1)
            sample_step(S2, run.rng, t, row1, sampling_probability(betas["beta2"], w1),
                        run.labels.stage("S2"), None, prescale=dec1.scale)
            sample_step(S3, run.rng, t, row1, sampling_probability(betas["beta3"], w1),
                        run.labels.stage("S3"), None, prescale=dec1.scale)
        run.track(S, S1, S2, S3, est, est1)
        if intermediate:
            if (len(S), len(S2), len(S3)) != sizes:
                current = _residual_solutions(run, S, S2, S3, tuple(s.x for s in current))
            path.append(sum(s.x for s in current))
        if t + 1 in marks:
            snapshots[t + 1] = sum(s.x for s in _residual_solutions(run, S, S2, S3)).tolist()

    sol_c, sol_hat, sol_bar = _residual_solutions(run, S, S2, S3)
    x = sol_c.x + sol_hat.x + sol_bar.x
    return PipelineResult(
        x=x,
        method="general-p",
        config=cfg,
        ledger=run.ledger,
        stage_rows={"S": len(S), "S1": len(S1), "S2": len(S2), "S3": len(S3)},
        peak_rows=run.peak,
        wall_time=time.perf_counter() - run.t0,
        path=np.array(path) if intermediate else None,
        path_start=start,
        sketch=(S.A.copy(), S.b),
        sampled_rows=kept_rows(S, S2, S3),
        diagnostics={
            "betas": betas,
            "retained": start,
            "x_c": sol_c.x.tolist(),
            "x_hat_c": sol_hat.x.tolist(),
            "x_bar_prime": sol_bar.x.tolist(),
            "solver_converged": [sol_c.converged, sol_hat.converged, sol_bar.converged],
            "s3_residual_mass": float(np.sum(np.abs(S3.b - S3.A @ sol_c.x) ** p)),
            "checkpoints": snapshots,
        },
    )


def run_p1(stream, config: PipelineConfig) -> PipelineResult:
    """Single-stage ℓ1 sampling by online Lewis weights; x̃ = Reg(SA, Sb, 1)."""
    run = _Run(stream, config)
    cfg, d = run.cfg, run.d
    if cfg.p != 1.0:
        raise ValueError(f"run_p1 needs p=1, got {cfg.p}")
    beta = cfg.betas(d)["beta"]
    S = WeightedSketch(d, 1.0, STAGE_S)
    est = run.estimator(_EST_A)
    start, rest = _retain(run, (S,), (est,))
    for t, a in enumerate(rest, start=start):
        w = est.push(a)
        sample_step(S, run.rng, t, a, sampling_probability(beta, w), run.labels.stage("S"), None)
        run.track(S, est)
    run.track(S, est)
    sol = run.solve(S.A, S.b)
    return PipelineResult(
        x=sol.x,
        method="p1",
        config=cfg,
        ledger=run.ledger,
        stage_rows={"S": len(S)},
        peak_rows=run.peak,
        wall_time=time.perf_counter() - run.t0,
        path_start=start,
        sketch=(S.A.copy(), S.b),
        sampled_rows=kept_rows(S),
        diagnostics={"beta": beta, "retained": start, "solver_converged": sol.converged},
    )
