"""Budget-constrained samplers used in the experiments: active, uniform and an offline reference."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from olar.errors import BudgetExhausted
from olar.lewis import lewis_weights
from olar.sampling import STAGE_S, CounterRNG, QueryLedger, SamplingDecision, WeightedSketch, decide
from olar.pipelines.common import LabelCache, PipelineConfig, PipelineResult, kept_rows, retained_prefix
from olar.pipelines.weights import make_estimator
from olar.solvers import solve


def _prefix(stream, d, sketch, labels):
    prefix, rest = retained_prefix(stream, d)
    for i, a in prefix:
        sketch.add(a, SamplingDecision(i, 1.0, True, 1.0), labels.fetch("init", i))
    return len(prefix), rest


def _offer(sketch, rng, t, a, prob, labels, stage="S") -> bool:
    """One rescaled Bernoulli draw; a row that would overrun the budget is skipped unqueried."""
    dec = decide(rng, t, min(max(prob, 0.0), 1.0), sketch.p, sketch.stage)
    if not dec.sampled:
        return False
    try:
        label = labels.fetch(stage, t)
    except BudgetExhausted:
        return False
    sketch.add(a * dec.scale, dec, label * dec.scale)
    return True


def _result(method, cfg, sketch, ledger, t0, diagnostics) -> PipelineResult:
    sol = solve(sketch.A, sketch.b, cfg.p, cfg.solver_tol, cfg.solver_max_iter, strict=False)
    diagnostics = {**diagnostics, "solver_converged": sol.converged}
    return PipelineResult(
        x=sol.x,
        method=method,
        config=cfg,
        ledger=ledger,
        stage_rows={"S": len(sketch)},
        peak_rows=len(sketch),
        wall_time=time.perf_counter() - t0,
        diagnostics=diagnostics,
        sketch=(sketch.A.copy(), sketch.b),
        sampled_rows=kept_rows(sketch),
    )


def _config(p, seed, budget, config):
    base = config or PipelineConfig(p=p)
    cfg = PipelineConfig(**{**base.to_dict(), "p": p, "seed": seed, "budget": int(budget)})
    return cfg.validated()


def uniform_baseline(stream, budget: int, p: float, seed: int = 0, config: PipelineConfig | None = None):
    """Keep the retained prefix, then take row t with probability B_t/(n − t); unweighted final solve."""
    t0 = time.perf_counter()
    n = stream.n
    if budget > n:
        raise ValueError(f"budget {budget} exceeds stream length {n}")
    cfg = _config(p, seed, budget, config)
    ledger = QueryLedger(None)  # the retained prefix is always queried
    labels = LabelCache(stream.oracle, ledger)
    rng = CounterRNG(seed)
    sketch = WeightedSketch(stream.d, p, STAGE_S)
    start, rest = _prefix(stream, stream.d, sketch, labels)
    ledger.budget = max(int(budget), ledger.total_queries)
    for t, a in enumerate(rest, start=start):
        remaining = ledger.budget - ledger.total_queries
        if remaining <= 0:
            continue
        if rng.uniform(STAGE_S, t) < remaining / (n - t):
            sketch.add(a, SamplingDecision(t, remaining / (n - t), True, 1.0), labels.fetch("S", t))
    return _result("uniform", cfg, sketch, ledger, t0, {"retained": start})


def budgeted_active(
    stream, budget: int, p: float, seed: int = 0, config: PipelineConfig | None = None, mass: str = "decay"
) -> PipelineResult:
    """Online Lewis-weight sampling with p_t = min(1, B_t·w̃_t/Ŝ_t).

    B_t is the remaining budget and Ŝ_t estimates the weight mass still to
    come. With ``mass="decay"`` it uses the κ/t decay of online weights on a
    stationary stream: Ŝ_t = κ̂·ln(n/t), κ̂ the mean of s·w̃_s so far. With
    ``mass="mean"``, Ŝ_t = (mean of w̃ so far)·(n − t), which spends too
    little early on when weights decay but matches uniform rates when all
    weights are equal. When the remaining budget covers every remaining
    row, rows are taken with probability 1. Kept rows are rescaled by
    p_t^{-1/p} and the answer is Reg on the sketch.
    """
    if mass not in ("decay", "mean"):
        raise ValueError(f"mass must be 'decay' or 'mean', got {mass!r}")
    t0 = time.perf_counter()
    n, d = stream.n, stream.d
    if budget <= d:
        raise ValueError(f"budget {budget} must exceed d={d}")
    cfg = _config(p, seed, budget, config)
    ledger = QueryLedger(None)
    labels = LabelCache(stream.oracle, ledger)
    rng = CounterRNG(seed)
    est = make_estimator(cfg.weight_mode, d, p, cfg, cfg.n_declared or n, rng.derive(101))
    sketch = WeightedSketch(d, p, STAGE_S)
    prefix, rest = retained_prefix(stream, d)
    for i, a in prefix:
        est.push(a)
        sketch.add(a, SamplingDecision(i, 1.0, True, 1.0), labels.fetch("init", i))
    start = len(prefix)
    ledger.budget = max(int(budget), ledger.total_queries)
    total_w = total_kappa = 0.0
    seen = 0
    for t, a in enumerate(rest, start=start):
        w = est.push(a)
        total_w += w
        total_kappa += (t + 1) * w
        seen += 1
        remaining = ledger.budget - ledger.total_queries
        if remaining <= 0:
            continue
        left = n - t
        if remaining >= left:
            prob = 1.0
        else:
            if mass == "decay":
                future = (total_kappa / seen) * math.log(n / (t + 1))
            else:
                future = (total_w / seen) * left
            prob = remaining * w / future if future > 0 else 1.0
        _offer(sketch, rng, t, a, prob, labels)
    return _result("active-online", cfg, sketch, ledger, t0, {"retained": start, "weight_mode": cfg.weight_mode, "mass": mass})


def _calibrate(weights: np.ndarray, target: float) -> np.ndarray:
    """Probabilities min(1, c·w) with Σ = target (or all ones if target ≥ n)."""
    if target >= weights.size:
        return np.ones_like(weights)
    lo, hi = 0.0, 1.0
    while np.minimum(hi * weights, 1.0).sum() < target:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.minimum(mid * weights, 1.0).sum() < target:
            lo = mid
        else:
            hi = mid
    return np.minimum(hi * weights, 1.0)


def offline_active_like(
    stream, budget: int, p: float, seed: int = 0, config: PipelineConfig | None = None
) -> PipelineResult:
    """Reference method: one-shot Lewis-weight sampling of the whole matrix.

    Not an online algorithm. Probabilities min(1, c·wᵢ(A)) are calibrated so
    the expected number of queries equals the budget; the budget is also a
    hard cap.
    """
    t0 = time.perf_counter()
    n, d = stream.n, stream.d
    cfg = _config(p, seed, budget, config)
    A = stream.features()
    w = lewis_weights(A, p, tol=cfg.weight_tol, strict=False).weights
    probs = _calibrate(w, float(budget))
    ledger = QueryLedger(int(budget))
    labels = LabelCache(stream.oracle, ledger)
    rng = CounterRNG(seed)
    sketch = WeightedSketch(d, p, STAGE_S)
    for t, a in enumerate(stream):
        _offer(sketch, rng, t, a, float(probs[t]), labels)
    return _result("offline-active-like", cfg, sketch, ledger, t0, {"expected_queries": float(probs.sum())})


@dataclass
class BudgetReport:
    method: str
    budgets: list[int]
    mean_error: list[float]
    std_error: list[float]
    mean_queries: list[float]
    trials: int
    errors: dict[int, list[float]] = field(default_factory=dict, repr=False)

    @classmethod
    def from_trials(cls, method: str, errors: dict[int, list[float]], queries: dict[int, list[int]]) -> "BudgetReport":
        budgets = sorted(errors)
        trials = {len(v) for v in errors.values()}
        if len(trials) != 1:
            raise ValueError("every budget needs the same number of trials")
        return cls(
            method=method,
            budgets=budgets,
            mean_error=[float(np.mean(errors[b])) for b in budgets],
            std_error=[float(np.std(errors[b])) for b in budgets],
            mean_queries=[float(np.mean(queries[b])) for b in budgets],
            trials=trials.pop(),
            errors=errors,
        )

    def is_decreasing(self, slack: float = 0.0) -> bool:
        m = self.mean_error
        return all(m[i + 1] <= m[i] * (1.0 + slack) for i in range(len(m) - 1))


def budget_levels(n: int, fractions=(0.08, 0.10, 0.12, 0.14)) -> list[int]:
    return [int(math.floor(f * n)) for f in fractions]
