"""Online active least squares with maintained inverses and per-step solutions."""
from __future__ import annotations

import time

import numpy as np

from olar.errors import NumericBreakdown, SingularPrefix
from olar.jl import SparseJL, default_dims, jl_apply_append
from olar.linalg import RowBuffer, rank_one_inverse_update, rel_frobenius
from olar.sampling import (
    STAGE_S,
    STAGE_S1,
    STAGE_S2,
    STAGE_S3,
    STAGE_NAMES,
    CounterRNG,
    QueryLedger,
    SamplingDecision,
    decide,
    sampling_probability,
)
from olar.pipelines.common import LabelCache, PipelineConfig, PipelineResult, kept_rows


class InverseState:
    """One sampler's sketch Ã with Ḡ = (ÃᵀÃ)⁻¹, F = JÃ and H = FḠ.

    ``Atb`` and ``gram`` (ÃᵀÃ) are kept alongside so the normal-equation
    solutions and a rebuild after a numeric breakdown cost O(d²)/O(d³).
    """

    def __init__(self, rows0: np.ndarray, labels0: np.ndarray | None, jl: SparseJL | None, stage: int):
        d = rows0.shape[1]
        self.stage = stage
        self.rows = RowBuffer(d)
        self.rows.extend(rows0)
        self.gram = rows0.T @ rows0
        if np.linalg.matrix_rank(rows0) < d:
            raise SingularPrefix(f"retained rows of stage {STAGE_NAMES.get(stage, stage)} are singular")
        self.Ginv = np.linalg.inv(self.gram)
        self.Ginv = 0.5 * (self.Ginv + self.Ginv.T)
        self.Atb = None if labels0 is None else rows0.T @ labels0
        self.labels = None if labels0 is None else list(labels0)
        self.jl = jl
        self.F = None
        self.H = None
        self.rebuilds = 0
        self.decisions: list[SamplingDecision] = []
        if jl is not None:
            self.F = np.zeros((jl.m, d))
            for k, r in enumerate(rows0):
                jl_apply_append(self.F, jl, k, r)
            self.H = self.F @ self.Ginv

    def weight(self, a: np.ndarray, fast: bool) -> float:
        """‖Ha‖² (JL estimate) or the exact aᵀḠa it approximates."""
        if fast:
            y = self.H @ a
            return float(y @ y)
        return float(a @ self.Ginv @ a)

    def update(self, a: np.ndarray, p_t: float, label: float | None = None) -> None:
        """Append the row a/√p_t (and label/√p_t): Sherman–Morrison on Ḡ, JL column append, H = FḠ."""
        try:
            self.Ginv = rank_one_inverse_update(self.Ginv, a, p_t)
            self.gram += np.outer(a, a) / p_t
        except NumericBreakdown:
            self.gram += np.outer(a, a) / p_t
            self.Ginv = np.linalg.inv(self.gram)
            self.rebuilds += 1
        row = a / np.sqrt(p_t)
        self.rows.append(row)
        if label is not None:
            self.Atb = self.Atb + row * (label / np.sqrt(p_t))
            self.labels.append(label / np.sqrt(p_t))
        if self.jl is not None:
            jl_apply_append(self.F, self.jl, self.jl.cols, row)
            self.H = self.F @ self.Ginv

    def drift(self) -> float:
        """Relative Frobenius gap between Ḡ and a direct inverse of ÃᵀÃ."""
        A = self.rows.view
        return rel_frobenius(self.Ginv, np.linalg.inv(A.T @ A))

    def __len__(self) -> int:
        return len(self.rows)


def run_p2(stream, config: PipelineConfig, record_path: bool = True, drift_checkpoints=()) -> PipelineResult:
    """Four-sampler online active ℓ2 regression with a solution after every row.

    Every weight is read from the stage's state before the current row is
    inserted. Stage S maintains x_c = ḠÃᵀb̃. Stage S₁ keeps rows only.
    Rows kept by S₁ are offered to S₂ and S₃, which maintain
    x̂_c = Ḡ₂Ã₂ᵀ(b̃₂ − Ã₂x_c) and x̄′ = Ḡ₃Ã₃ᵀ(b̃₃ − Ã₃x_c − Ã₃x̂_c).
    A stage that does not sample the row carries its previous solution.
    ``path`` holds x̃^{(t)} = x_c + x̂_c + x̄′ for t = d, …, n.
    """
    cfg = config.validated()
    if cfg.p != 2.0:
        raise ValueError(f"run_p2 needs p=2, got {cfg.p}")
    if cfg.weight_mode == "compression-tree":
        raise ValueError("run_p2 uses exact-oracle or leverage-fast weights; use run_general_p for trees")
    fast = cfg.weight_mode == "leverage-fast"
    t0 = time.perf_counter()
    d, n = stream.d, stream.n
    n_declared = cfg.n_declared or n
    betas = cfg.betas(d)
    rng = CounterRNG(cfg.seed)
    ledger = QueryLedger(cfg.budget)
    labels = LabelCache(stream.oracle, ledger)
    m, s = default_dims(n_declared, cfg.delta)

    rows_iter = iter(stream)
    head = []
    for a in rows_iter:
        head.append(np.asarray(a, dtype=np.float64))
        if len(head) == d:
            break
    if len(head) < d:
        raise SingularPrefix(f"stream has only {len(head)} rows, need {d}")
    A0 = np.array(head)
    if np.linalg.matrix_rank(A0) < d:
        raise SingularPrefix("the first d rows are singular")
    b0 = np.array([labels.fetch("init", i) for i in range(d)])

    def jl(stage):
        return SparseJL(m, s, rng.derive(200 + stage)) if fast else None

    st = InverseState(A0, b0, jl(STAGE_S), STAGE_S)
    st1 = InverseState(A0, None, jl(STAGE_S1), STAGE_S1)
    st2 = InverseState(A0, b0, jl(STAGE_S2), STAGE_S2)
    st3 = InverseState(A0, b0, jl(STAGE_S3), STAGE_S3)
    x_c = st.Ginv @ st.Atb
    x_hat = st2.Ginv @ (st2.Atb - st2.gram @ x_c)
    x_bar = st3.Ginv @ (st3.Atb - st3.gram @ (x_c + x_hat))
    path = [x_c + x_hat + x_bar] if record_path else []
    drift = []
    checkpoints = set(int(c) for c in drift_checkpoints)

    for t, a in enumerate(rows_iter, start=d):
        a = np.asarray(a, dtype=np.float64)
        # stage S
        p_t = sampling_probability(betas["beta"], st.weight(a, fast))
        dec = decide(rng, t, p_t, 2.0, STAGE_S)
        if dec.sampled:
            st.update(a, p_t, labels.fetch("S", t))
            st.decisions.append(dec)
            x_c = st.Ginv @ st.Atb
        # stage S₁ and the two stages nested inside it
        p1 = sampling_probability(betas["beta1"], st1.weight(a, fast))
        dec1 = decide(rng, t, p1, 2.0, STAGE_S1)
        if dec1.sampled:
            st1.update(a, p1)
            st1.decisions.append(dec1)
            a1 = a / np.sqrt(p1)
            p2 = sampling_probability(betas["beta2"], st2.weight(a1, fast))
            dec2 = decide(rng, t, p2, 2.0, STAGE_S2)
            if dec2.sampled:
                st2.update(a1, p2, labels.fetch("S2", t) / np.sqrt(p1))
                st2.decisions.append(SamplingDecision(t, p1 * p2, True, 1.0 / np.sqrt(p1 * p2)))
                x_hat = st2.Ginv @ (st2.Atb - st2.gram @ x_c)
            p3 = sampling_probability(betas["beta3"], st3.weight(a1, fast))
            dec3 = decide(rng, t, p3, 2.0, STAGE_S3)
            if dec3.sampled:
                st3.update(a1, p3, labels.fetch("S3", t) / np.sqrt(p1))
                st3.decisions.append(SamplingDecision(t, p1 * p3, True, 1.0 / np.sqrt(p1 * p3)))
                x_bar = st3.Ginv @ (st3.Atb - st3.gram @ (x_c + x_hat))
        if record_path:
            path.append(x_c + x_hat + x_bar)
        if t + 1 in checkpoints:
            drift.append({"t": t + 1, **{STAGE_NAMES[x.stage]: x.drift() for x in (st, st1, st2, st3)}})

    states = (st, st1, st2, st3)
    return PipelineResult(
        x=x_c + x_hat + x_bar,
        method="p2",
        config=cfg,
        ledger=ledger,
        stage_rows={STAGE_NAMES[x.stage]: len(x) for x in states},
        peak_rows=sum(len(x) for x in states),
        wall_time=time.perf_counter() - t0,
        path=np.array(path) if record_path else None,
        path_start=d,
        sketch=(st.rows.view.copy(), np.array(st.labels)),
        sampled_rows=kept_rows(st, st2, st3) | frozenset(range(d)),
        diagnostics={
            "betas": betas,
            "jl_dims": [m, s] if fast else None,
            "rebuilds": sum(x.rebuilds for x in states),
            "drift": drift,
            "x_c": x_c.tolist(),
            "x_hat_c": x_hat.tolist(),
            "x_bar_prime": x_bar.tolist(),
        },
    )
