from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from olar.errors import BudgetExhausted, InvalidProbability
from olar.lewis import lewis_weights
from olar.sampling import (
    STAGE_S,
    STAGE_S1,
    CounterRNG,
    QueryLedger,
    WeightedSketch,
    composed_probability,
    decide,
    dump_decisions,
    embedding_beta,
    query_label,
    sample_rows,
    sample_step,
    sampling_probability,
)


class CountingSource:
    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=float)
        self.calls: list[int] = []

    def query(self, index):
        self.calls.append(index)
        return self.labels[index]


class TestCounterRNG:
    def test_pure_function_of_counter(self):
        a, b = CounterRNG(3), CounterRNG(3)
        assert a.uniform(0, 17) == b.uniform(0, 17)
        assert a.uniform(0, 17) != a.uniform(1, 17)
        assert a.uniform(0, 17) != CounterRNG(4).uniform(0, 17)

    def test_range_and_mean(self):
        g = CounterRNG(0)
        u = np.array([g.uniform(2, i) for i in range(20_000)])
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.01

    def test_stages_uncorrelated(self):
        g = CounterRNG(11)
        u = np.array([[g.uniform(s, i) for s in (STAGE_S, STAGE_S1)] for i in range(10_000)])
        assert abs(np.corrcoef(u.T)[0, 1]) < 0.03


class TestDecide:
    def test_probability_one(self):
        dec = decide(CounterRNG(0), 5, 1.0)
        assert dec.sampled and dec.scale == 1.0

    def test_probability_zero(self):
        dec = decide(CounterRNG(0), 5, 0.0)
        assert not dec.sampled and np.isinf(dec.scale)

    def test_half_rate(self):
        g = CounterRNG(2024)
        rate = np.mean([decide(g, i, 0.5).sampled for i in range(100_000)])
        assert abs(rate - 0.5) <= 0.01

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_scale(self, p):
        g = CounterRNG(1)
        dec = next(d for d in (decide(g, i, 0.3, p) for i in range(100)) if d.sampled)
        assert dec.scale == pytest.approx(0.3 ** (-1 / p))

    @pytest.mark.parametrize("bad", [-0.1, 1.01, np.nan, np.inf])
    def test_invalid(self, bad):
        with pytest.raises(InvalidProbability):
            decide(CounterRNG(0), 0, bad)

    @given(st.integers(0, 2**40), st.integers(0, 10**6), st.floats(0, 1))
    def test_deterministic(self, seed, idx, q):
        assert decide(CounterRNG(seed), idx, q) == decide(CounterRNG(seed), idx, q)


class TestComposedProbability:
    def test_examples(self):
        assert composed_probability(1, 1) == (1.0, 1.0)
        assert composed_probability(0.5, 0.5, 2.0)[1] == pytest.approx(2.0)
        assert composed_probability(0.2, 0.4, 1.0)[1] == pytest.approx(12.5)

    @pytest.mark.parametrize("pair", [(0.0, 0.5), (0.5, 1.5), (np.nan, 1.0)])
    def test_invalid(self, pair):
        with pytest.raises(InvalidProbability):
            composed_probability(*pair)

    def test_sampling_probability_clips(self):
        assert sampling_probability(10.0, 0.5) == 1.0
        assert sampling_probability(2.0, 0.1) == pytest.approx(0.2)
        assert sampling_probability(2.0, -1.0) == 0.0


class TestSampleStep:
    def test_all_ones_reproduces_stream(self, rng):
        A, b = rng.standard_normal((5, 3)), rng.standard_normal(5)
        src, ledger = CountingSource(b), QueryLedger()
        sk = WeightedSketch(3, 2.0)
        for i in range(5):
            sample_step(sk, CounterRNG(0), i, A[i], 1.0, src, ledger)
        np.testing.assert_array_equal(sk.A, A)
        np.testing.assert_array_equal(sk.b, b)
        assert ledger.total_queries == 5 and src.calls == list(range(5))

    def test_zero_probability_never_queries(self, rng):
        A = rng.standard_normal((5, 3))
        src, ledger = CountingSource(np.zeros(5)), QueryLedger()
        sk = WeightedSketch(3, 2.0)
        for i in range(5):
            sample_step(sk, CounterRNG(0), i, A[i], 0.0, src, ledger)
        assert len(sk) == 0 and ledger.total_queries == 0 and src.calls == []

    def test_untracked_labels_never_query(self, rng):
        src = CountingSource(np.ones(3))
        sk = WeightedSketch(2, 2.0, track_labels=False)
        sample_step(sk, CounterRNG(0), 0, [1.0, 2.0], 1.0, src, QueryLedger())
        assert len(sk) == 1 and src.calls == []

    def test_prescale_applies_to_label(self):
        sk = WeightedSketch(1, 2.0)
        sample_step(sk, CounterRNG(0), 0, [2.0 * 3.0], 1.0, CountingSource([5.0]), QueryLedger(), prescale=3.0)
        assert sk.b[0] == 15.0 and sk.A[0, 0] == 6.0

    def test_budget_stops_before_query(self):
        src, ledger = CountingSource(np.ones(4)), QueryLedger(budget=2)
        sk = WeightedSketch(1, 2.0)
        for i in range(2):
            sample_step(sk, CounterRNG(0), i, [1.0], 1.0, src, ledger)
        with pytest.raises(BudgetExhausted):
            sample_step(sk, CounterRNG(0), 2, [1.0], 1.0, src, ledger)
        assert src.calls == [0, 1] and ledger.remaining == 0

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_unbiased_cost(self, p, rng):
        A, b = rng.standard_normal((20, 3)), rng.standard_normal(20)
        x = rng.standard_normal(3)
        probs = rng.uniform(0.1, 1.0, size=20)
        direct = np.sum(np.abs(A @ x - b) ** p)
        costs = []
        for seed in range(10_000):
            g = CounterRNG(seed)
            sk = WeightedSketch(3, p)
            for i in range(20):
                sample_step(sk, g, i, A[i], probs[i], CountingSource(b), None)
            costs.append(np.sum(np.abs(sk.A @ x - sk.b) ** p) if len(sk) else 0.0)
        assert abs(np.mean(costs) / direct - 1) <= 0.02


class TestLedger:
    def test_counts(self):
        ledger = QueryLedger()
        src = CountingSource(np.arange(6.0))
        for stage, i in [("S", 0), ("S2", 1), ("S", 2), ("S3", 2)]:
            query_label(src, ledger, stage, i)
        assert ledger.total_queries == sum(ledger.per_stage.values()) == 4
        assert ledger.distinct_labels == 3
        assert ledger.as_dict()["per_stage"] == {"S": 2, "S2": 1, "S3": 1}
        assert ledger.remaining is None


class TestSampleRows:
    def test_row_count_concentration(self, rng):
        A = rng.standard_normal((500, 5))
        w = lewis_weights(A, 1.5).weights
        beta = 20.0
        expected = np.minimum(beta * w, 1).sum()
        inside = 0
        for seed in range(100):
            SA, _ = sample_rows(A, w, beta, 1.5, CounterRNG(seed))
            inside += 0.5 * expected <= SA.shape[0] <= 2 * expected
        assert inside >= 95

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_embedding_small(self, p, rng):
        A = rng.standard_normal((500, 5))
        w = lewis_weights(A, p).weights
        beta = embedding_beta(5, 0.5)
        SA, decs = sample_rows(A, w, beta, p, CounterRNG(5))
        X = rng.standard_normal((5, 50))
        ratio = np.linalg.norm(SA @ X, ord=p, axis=0) / np.linalg.norm(A @ X, ord=p, axis=0)
        assert np.all(np.abs(ratio - 1) <= 0.5)
        assert len(decs) == 500


def test_dump_decisions(tmp_path):
    sk = WeightedSketch(1, 2.0, stage=STAGE_S1, track_labels=False)
    g = CounterRNG(0)
    for i in range(3):
        sample_step(sk, g, i, [1.0], 1.0, None, None)
    path = tmp_path / "dump.csv"
    dump_decisions(path, [sk])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["stage", "row_index", "probability", "scale", "queried"]
    assert rows[1:] == [["S1", str(i), "1.0", "1.0", "0"] for i in range(3)]
