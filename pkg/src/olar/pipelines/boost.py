"""Probability boosting: several independent runs over one stream, then a selection rule."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from olar.linalg import lp_norm
from olar.sampling import CounterRNG, QueryLedger

_BOOST_KEY = 0x5EED


class SharedOracle:
    """Serves every boosted copy from one label cache so a label is never queried twice."""

    def __init__(self, oracle):
        self.oracle = oracle
        self._labels: dict[int, float] = {}

    def query(self, index: int) -> float:
        if index not in self._labels:
            self._labels[index] = float(self.oracle.query(index))
        return self._labels[index]

    @property
    def distinct(self) -> int:
        return len(self._labels)


class _View:
    """A stream whose rows come from ``stream`` and whose labels come from a shared cache."""

    def __init__(self, stream, oracle):
        self._stream = stream
        self.oracle = oracle
        self.n, self.d = stream.n, stream.d

    def __iter__(self):
        return iter(self._stream)

    def features(self):
        return self._stream.features()


BOOST_RULES = ("median", "validation", "cross", "trim")


def boost(config, runner, stream, rule: str = "median"):
    """Run ``runner(stream, cfg)`` ``config.boost_runs`` times with derived seeds and pick one answer.

    ``median`` (default): pick the candidate whose median distance
    ‖A(xᵢ − xⱼ)‖_p to the others is smallest. It reads features only, and
    if more than half the candidates are within C·opt the pick is within
    3C·opt by the triangle inequality.
    ``validation``: an extra run with its own seed supplies a held-out
    S-sketch; the candidate with the smallest ℓp residual on it wins.
    ``cross``: score each candidate on the S-sketches of all the others.
    ``trim``: drop the 10% of candidates with the largest
    ``s3_residual_mass`` and return the first remaining one.

    All copies read labels through one shared cache, so the label source is
    touched once per distinct row. Returns (chosen result, all candidates).
    """
    k = int(config.boost_runs)
    if rule not in BOOST_RULES:
        raise ValueError(f"unknown boosting rule {rule!r}; choose from {BOOST_RULES}")
    if k < 1:
        raise ValueError("boost_runs must be at least 1")
    if k == 1:
        res = runner(stream, config)
        return res, [res]
    shared = SharedOracle(stream.oracle)
    view = _View(stream, shared)
    root = CounterRNG(config.seed)
    seeds = [root.derive(_BOOST_KEY, i) & 0x7FFFFFFF for i in range(k)]
    candidates = [runner(view, replace(config, seed=s, boost_runs=1)) for s in seeds]
    xs = [c.x for c in candidates]
    candidates_and_held = candidates
    if all(np.array_equal(xs[0], x) for x in xs[1:]):
        chosen = candidates[0]
    elif rule == "validation":
        held = runner(view, replace(config, seed=root.derive(_BOOST_KEY, k) & 0x7FFFFFFF, boost_runs=1))
        A_v, b_v = held.sketch
        candidates_and_held = candidates + [held]
        scores = [lp_norm(A_v @ x - b_v, config.p) for x in xs]
        chosen = candidates[int(np.argmin(scores))]
    elif rule == "median":
        A = stream.features()
        AX = A @ np.array(xs).T
        dist = np.array([[lp_norm(AX[:, i] - AX[:, j], config.p) for j in range(k)] for i in range(k)])
        chosen = candidates[int(np.argmin(np.median(dist, axis=1)))]
    elif rule == "cross":
        scores = []
        for i, x in enumerate(xs):
            total = 0.0
            for j, c in enumerate(candidates):
                if j != i:
                    A_j, b_j = c.sketch
                    total += lp_norm(A_j @ x - b_j, config.p) ** config.p
            scores.append(total)
        chosen = candidates[int(np.argmin(scores))]
    else:
        mass = np.array([c.diagnostics.get("s3_residual_mass", 0.0) for c in candidates])
        keep = np.argsort(mass, kind="stable")[: max(1, k - int(np.ceil(0.1 * k)))]
        chosen = candidates[int(np.min(keep))]
    rows = set().union(*(c.ledger.rows for c in candidates_and_held))
    ledger = QueryLedger(total_queries=len(rows), per_stage={"boost": len(rows)}, rows=rows)
    diagnostics = {**chosen.diagnostics, "boost": {"runs": k, "rule": rule, "distinct_labels": shared.distinct}}
    sampled = frozenset().union(*(c.sampled_rows for c in candidates_and_held))
    return replace(chosen, ledger=ledger, diagnostics=diagnostics, sampled_rows=sampled), candidates
