"""Rescaled row sampling, sketch accumulation and the label-query ledger."""
from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from olar.errors import BudgetExhausted, InvalidProbability
from olar.linalg import RowBuffer

# stage ids; the four samplers of the multi-stage pipelines draw independent streams
STAGE_S, STAGE_S1, STAGE_S2, STAGE_S3 = 0, 1, 2, 3
STAGE_INIT = 4
STAGE_NAMES = {STAGE_S: "S", STAGE_S1: "S1", STAGE_S2: "S2", STAGE_S3: "S3", STAGE_INIT: "init"}

_MASK64 = (1 << 64) - 1
EMBEDDING_C = 8.0


class CounterRNG:
    """Counter-based uniform generator: ``uniform(*counter)`` is a pure function of (seed, counter).

    Draws are a keyed BLAKE2b hash of the counter tuple, so any stage can ask
    for the variate of any stream position without consuming shared state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = (self.seed % (1 << 128)).to_bytes(16, "little")

    def _digest(self, counter: tuple[int, ...]) -> int:
        msg = struct.pack(f"<{len(counter)}Q", *(c & _MASK64 for c in counter))
        return int.from_bytes(hashlib.blake2b(msg, digest_size=8, key=self._key).digest(), "little")

    def uniform(self, *counter: int) -> float:
        return (self._digest(counter) >> 11) * (1.0 / (1 << 53))

    def derive(self, *counter: int) -> int:
        """A child seed, e.g. for boosting copies or per-trial streams."""
        return self._digest(counter)


@dataclass(frozen=True)
class SamplingDecision:
    row_index: int
    probability: float
    sampled: bool
    scale: float  # p_i^{-1/p} when sampled, inf otherwise


def check_probability(p_i: float) -> float:
    p_i = float(p_i)
    if not np.isfinite(p_i) or p_i < 0.0 or p_i > 1.0:
        raise InvalidProbability(f"sampling probability must lie in [0, 1], got {p_i}")
    return p_i


def decide(rng: CounterRNG, row_index: int, p_i: float, p: float = 2.0, stage: int = STAGE_S) -> SamplingDecision:
    """Keep row ``row_index`` with probability ``p_i``; kept rows are scaled by p_i^{-1/p}."""
    p_i = check_probability(p_i)
    sampled = p_i >= 1.0 or (p_i > 0.0 and rng.uniform(stage, row_index) < p_i)
    scale = p_i ** (-1.0 / p) if sampled else float("inf")
    return SamplingDecision(int(row_index), p_i, sampled, scale)


def composed_probability(p_outer: float, p_inner: float, p: float = 2.0) -> tuple[float, float]:
    """Joint probability and row scale for a row kept by two nested samplers."""
    for q in (p_outer, p_inner):
        if not np.isfinite(q) or not 0.0 < q <= 1.0:
            raise InvalidProbability(f"composed probabilities must lie in (0, 1], got {q}")
    joint = p_outer * p_inner
    return joint, joint ** (-1.0 / p)


def sampling_probability(beta: float, weight: float) -> float:
    return min(beta * max(weight, 0.0), 1.0)


def embedding_beta(d: int, epsilon: float, c: float = EMBEDDING_C) -> float:
    """Default oversampling for a one-shot ℓp subspace embedding: c·ln(d)/ε²."""
    return c * math.log(max(d, 2)) / epsilon**2


def sample_rows(A, weights, beta: float, p: float, rng: CounterRNG, stage: int = STAGE_S):
    """Offline rescaled sampling of A with probabilities min(1, β·wᵢ); returns (SA, decisions)."""
    A = np.asarray(A, dtype=np.float64)
    probs = np.minimum(beta * np.maximum(np.asarray(weights, dtype=np.float64), 0.0), 1.0)
    decisions = [decide(rng, i, float(q), p, stage) for i, q in enumerate(probs)]
    kept = [i for i, dec in enumerate(decisions) if dec.sampled]
    scales = np.array([decisions[i].scale for i in kept])
    return A[kept] * scales[:, None], decisions


class LabelSource(Protocol):
    def query(self, index: int) -> float: ...


@dataclass
class QueryLedger:
    """Counts every label revealed, per stage, against an optional hard cap."""

    budget: int | None = None
    total_queries: int = 0
    per_stage: dict[str, int] = field(default_factory=dict)
    rows: set[int] = field(default_factory=set)

    def check(self) -> None:
        if self.budget is not None and self.total_queries + 1 > self.budget:
            raise BudgetExhausted(f"budget of {self.budget} queries exhausted")

    def record(self, stage: str, row_index: int) -> None:
        self.total_queries += 1
        self.per_stage[stage] = self.per_stage.get(stage, 0) + 1
        self.rows.add(int(row_index))

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.total_queries

    @property
    def distinct_labels(self) -> int:
        return len(self.rows)

    def as_dict(self) -> dict:
        return {
            "total_queries": self.total_queries,
            "per_stage": dict(sorted(self.per_stage.items())),
            "distinct_labels": self.distinct_labels,
            "budget": self.budget,
        }


def query_label(source: LabelSource, ledger: QueryLedger, stage: str, row_index: int) -> float:
    """Fetch one label through the ledger; the cap is checked before the oracle is touched."""
    ledger.check()
    value = float(source.query(row_index))
    ledger.record(stage, row_index)
    return value


class WeightedSketch:
    """Rows aₜᵀ·s and labels bₜ·s of the rows a sampler kept, with their decisions."""

    def __init__(self, d: int, p: float, stage: int = STAGE_S, track_labels: bool = True):
        self.d = d
        self.p = float(p)
        self.stage = stage
        self.track_labels = track_labels
        self.rows = RowBuffer(d)
        self.labels: list[float] = []
        self.decisions: list[SamplingDecision] = []

    @property
    def name(self) -> str:
        return STAGE_NAMES.get(self.stage, str(self.stage))

    def add(self, row, decision: SamplingDecision, label: float | None = None) -> None:
        self.rows.append(row)
        self.decisions.append(decision)
        if self.track_labels:
            self.labels.append(float(label))

    @property
    def A(self) -> np.ndarray:
        return self.rows.view

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)


def sample_step(
    sketch: WeightedSketch,
    rng: CounterRNG,
    row_index: int,
    a_t,
    p_t: float,
    label_source: LabelSource | None,
    ledger: QueryLedger | None,
    prescale: float = 1.0,
    stage_name: str | None = None,
) -> SamplingDecision:
    """One Bernoulli draw; on success query the label and append the rescaled pair.

    ``a_t`` may already carry an earlier sampler's rescaling; ``prescale`` is
    that factor, applied to the label so rows and labels stay consistent.
    With ``ledger=None`` the source does its own accounting. Raises
    BudgetExhausted (before any label is fetched) when the ledger cap would
    be exceeded.
    """
    dec = decide(rng, row_index, p_t, sketch.p, sketch.stage)
    if not dec.sampled:
        return dec
    label = None
    if sketch.track_labels:
        if ledger is None:
            raw = label_source.query(row_index)
        else:
            raw = query_label(label_source, ledger, stage_name or sketch.name, row_index)
        label = float(raw) * prescale * dec.scale
    sketch.add(np.asarray(a_t, dtype=np.float64) * dec.scale, dec, label)
    return dec


def dump_decisions(path, sketches) -> None:
    """Debug dump: one CSV line per kept row across ``sketches``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "row_index", "probability", "scale", "queried"])
        for sk in sketches:
            for dec in sk.decisions:
                writer.writerow([sk.name, dec.row_index, repr(dec.probability), repr(dec.scale), int(sk.track_labels)])
