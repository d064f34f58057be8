"""Configuration, results and label bookkeeping shared by all pipelines."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from olar.errors import RankDeficientPrefix
from olar.linalg import lp_norm
from olar.sampling import QueryLedger

WEIGHT_MODES = ("exact-oracle", "compression-tree", "leverage-fast")


@dataclass
class PipelineConfig:
    """Parameters of one pipeline run.

    Oversampling parameters left as ``None`` are filled from their Θ-shapes
    with the ``c_*`` constants (see ``betas``). ``refresh_fraction`` sets the
    lazy-refresh mass of the exact weight oracle as a fraction of d; 0 makes
    every row a full fixed-point solve.
    """

    p: float = 2.0
    epsilon: float = 0.5
    delta: float = 0.1
    n_declared: int | None = None
    beta: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    beta3: float | None = None
    c_beta: float = 4.0
    c_beta1: float = 0.1
    c_beta3: float = 0.1
    c_beta_p1: float = 1.0
    weight_mode: str | None = None
    refresh_fraction: float = 0.05
    weight_tol: float = 1e-6
    solver_tol: float = 1e-10
    solver_max_iter: int = 2000
    boost_runs: int = 1
    seed: int = 0
    budget: int | None = None

    def validated(self) -> "PipelineConfig":
        p = float(self.p)
        if not 1.0 <= p <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {p}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        mode = self.weight_mode or ("leverage-fast" if p == 2.0 else "exact-oracle")
        if mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight mode {mode!r}; choose from {WEIGHT_MODES}")
        if mode == "leverage-fast" and p != 2.0:
            raise ValueError("leverage-fast weights exist only for p=2")
        for name in ("beta", "beta1", "beta2", "beta3"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.boost_runs < 1:
            raise ValueError("boost_runs must be at least 1")
        if self.refresh_fraction < 0:
            raise ValueError("refresh_fraction must be non-negative")
        return replace(self, p=p, weight_mode=mode)

    def betas(self, d: int) -> dict[str, float]:
        """Oversampling parameters for dimension ``d``.

        β = β₂ = max(8, c·ln d); β₃ = c₃·ln²d·ln(d/ε)·ln(1/δ)/ε². β₁ is
        c₁·d·ln(1/(εδ))/ε^{2+p} for p < 2 and c₁·(d·ln(1/ε) + ln(1/δ))/ε⁴
        for the p=2 pipeline. For p=1 the single sampler uses
        c_p1·ln(d/(εδ))/ε².
        """
        eps, delta, p = self.epsilon, self.delta, float(self.p)
        ld = math.log(max(d, 2))
        base = max(8.0, self.c_beta * ld)
        if p == 2.0:
            b1 = self.c_beta1 * (d * math.log(1.0 / eps) + math.log(1.0 / delta)) / eps**4
        else:
            b1 = self.c_beta1 * d * math.log(1.0 / (eps * delta)) / eps ** (2.0 + p)
        b3 = self.c_beta3 * ld**2 * math.log(d / eps) * math.log(1.0 / delta) / eps**2
        if p == 1.0:
            base = self.c_beta_p1 * math.log(d / (eps * delta)) / eps**2
        out = {"beta": base, "beta1": b1, "beta2": max(8.0, self.c_beta * ld), "beta3": b3}
        for k in out:
            if getattr(self, k) is not None:
                out[k] = float(getattr(self, k))
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, raw: dict) -> "PipelineConfig":
        """Build from string-valued key=value pairs (config files, CLI overrides)."""
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, value in raw.items():
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise KeyError(f"unknown config key {key!r}")
            if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
                out[key] = None
                continue
            kind = kinds[key]
            if not isinstance(value, str):
                out[key] = value
            elif "int" in kind:
                out[key] = int(value)
            elif "float" in kind:
                out[key] = float(value)
            else:
                out[key] = value.strip()
        return cls(**out)


@dataclass
class PipelineResult:
    x: np.ndarray
    method: str
    config: PipelineConfig
    ledger: QueryLedger
    stage_rows: dict[str, int]
    peak_rows: int
    wall_time: float
    objective: float | None = None
    path: np.ndarray | None = field(default=None, repr=False)
    path_start: int = 0
    diagnostics: dict = field(default_factory=dict)
    sketch: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)  # the S-stage (Ã, b̃)
    sampled_rows: frozenset[int] = field(default_factory=frozenset, repr=False)  # rows kept by a labelled sampler

    @property
    def queries(self) -> int:
        return self.ledger.total_queries

    def evaluate(self, A, b) -> float:
        """Set and return ‖Ax − b‖_p on full data (an evaluation step outside the query model)."""
        self.objective = lp_norm(np.asarray(A) @ self.x - np.asarray(b), self.config.p)
        return self.objective

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "config": self.config.to_dict(),
            "ledger": self.ledger.as_dict(),
            "x": [float(v) for v in self.x],
            "objective": self.objective,
            "stage_rows": self.stage_rows,
            "peak_rows": self.peak_rows,
            "wall_time": self.wall_time,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def kept_rows(*sketches) -> frozenset[int]:
    """Indices kept by any of the given samplers (anything with ``decisions``)."""
    return frozenset(dec.row_index for sk in sketches for dec in sk.decisions if dec.sampled)


class LabelCache:
    """Single point of contact with the label source for one pipeline run.

    A label is fetched at most once; later requests from other samplers are
    served from the cache. The ledger attributes each query to the stage that
    first asked for it and enforces the optional budget.
    """

    def __init__(self, source, ledger: QueryLedger):
        if source is None:
            raise ValueError("pipeline needs a label source")
        self.source = source
        self.ledger = ledger
        self._labels: dict[int, float] = {}

    def fetch(self, stage: str, index: int) -> float:
        index = int(index)
        if index in self._labels:
            return self._labels[index]
        self.ledger.check()
        value = float(self.source.query(index))
        self.ledger.record(stage, index)
        self._labels[index] = value
        return value

    def known(self, index: int) -> bool:
        return int(index) in self._labels

    def stage(self, name: str) -> "_StageView":
        return _StageView(self, name)


class _StageView:
    def __init__(self, cache: LabelCache, name: str):
        self.cache = cache
        self.name = name

    def query(self, index: int) -> float:
        return self.cache.fetch(self.name, index)


def retained_prefix(rows, d: int, max_rows: int | None = None):
    """Consume rows until at least d were taken and they span R^d.

    Returns the retained rows as a list of (index, row). Raises
    RankDeficientPrefix if the stream ends first.
    """
    taken: list[tuple[int, np.ndarray]] = []
    it = iter(rows)
    for i, a in enumerate(it):
        taken.append((i, np.asarray(a, dtype=np.float64)))
        if len(taken) >= d and np.linalg.matrix_rank(np.array([r for _, r in taken])) == d:
            return taken, it
        if max_rows is not None and len(taken) >= max_rows:
            break
    raise RankDeficientPrefix(f"stream prefix of {len(taken)} rows never reached rank {d}")
