from __future__ import annotations

import json
import time

import numpy as np
import pytest

from olar.errors import BadHeader, MissingColumn, NonNumeric, RaggedRow, StreamNonFinite, UnexpectedEof
from olar.data import (
    HEADER,
    LabelOracle,
    RowStream,
    StreamHeader,
    SyntheticSpec,
    gaussian_instance,
    gen_synthetic,
    ingest_csv_dataset,
    load_x_star,
    read_stream,
    save_synthetic,
    write_stream,
)
from olar.pipelines import PipelineConfig, run
from olar.solvers import solve

from conftest import assert_contract


def write_csv_rows(path, A, b, header=None):
    lines = [",".join(header)] if header else []
    lines += [",".join(repr(float(v)) for v in (*row, label)) for row, label in zip(A, b)]
    path.write_text("\n".join(lines) + "\n")


class TestBinary:
    def test_header_round_trip(self):
        h = StreamHeader(1000, 7, True)
        raw = h.pack()
        assert raw[:4] == b"OLAR" and len(raw) == HEADER.size
        assert StreamHeader.unpack(raw) == h

    def test_round_trip_bit_identical(self, tmp_path, rng):
        A, b = rng.standard_normal((40, 3)), rng.standard_normal(40)
        write_stream(tmp_path / "s.bin", A, b)
        s = read_stream(tmp_path / "s.bin")
        np.testing.assert_array_equal(np.array(list(s)), A)
        assert s.oracle.invocations == 0
        assert [s.oracle.query(i) for i in range(40)] == b.tolist()
        assert s.oracle.invocations == 40

    def test_without_labels(self, tmp_path, rng):
        write_stream(tmp_path / "s.bin", rng.standard_normal((4, 2)))
        assert read_stream(tmp_path / "s.bin").oracle is None

    @pytest.mark.parametrize("cut", [2, 10, HEADER.size + 5, -3])
    def test_truncated(self, tmp_path, rng, cut):
        write_stream(tmp_path / "s.bin", rng.standard_normal((5, 2)), rng.standard_normal(5))
        raw = (tmp_path / "s.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:cut])
        with pytest.raises(BadHeader) as info:
            read_stream(tmp_path / "t.bin")
        assert info.value.offset is not None

    def test_truncation_is_eof(self, tmp_path, rng):
        write_stream(tmp_path / "s.bin", rng.standard_normal((5, 2)), rng.standard_normal(5))
        raw = (tmp_path / "s.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-3])
        with pytest.raises(UnexpectedEof):
            read_stream(tmp_path / "t.bin")

    def test_bad_version(self, tmp_path):
        (tmp_path / "v.bin").write_bytes(StreamHeader(1, 1, False, version=9).pack() + bytes(8))
        with pytest.raises(BadHeader):
            read_stream(tmp_path / "v.bin")

    def test_non_finite_row_reported(self, tmp_path):
        A = np.ones((4, 2))
        A[2, 1] = np.inf
        write_stream(tmp_path / "s.bin", A, np.ones(4))
        with pytest.raises(StreamNonFinite) as info:
            read_stream(tmp_path / "s.bin")
        assert info.value.row == 2


class TestCsv:
    def test_example(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2,3\n4,5,6\n")
        s = read_stream(tmp_path / "a.csv")
        np.testing.assert_array_equal(s.features(), [[1, 2], [4, 5]])
        assert s.oracle.invocations == 0
        assert {s.oracle.query(0), s.oracle.query(1)} == {3.0, 6.0}

    def test_header_row_skipped(self, tmp_path):
        (tmp_path / "a.csv").write_text("x1,x2,y\n1,2,3\n")
        assert read_stream(tmp_path / "a.csv").n == 1

    def test_ragged(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2,3\n4,5\n")
        with pytest.raises(RaggedRow) as info:
            read_stream(tmp_path / "a.csv")
        assert info.value.row == 1

    def test_non_numeric(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2,3\n4,x,6\n")
        with pytest.raises(NonNumeric):
            read_stream(tmp_path / "a.csv")

    def test_nan(self, tmp_path):
        (tmp_path / "a.csv").write_text("1,2,3\nnan,5,6\n")
        with pytest.raises(StreamNonFinite):
            read_stream(tmp_path / "a.csv")


class TestOracle:
    def test_counts_and_order(self):
        o = LabelOracle(np.arange(5.0))
        assert [o.query(i) for i in (3, 1, 3)] == [3.0, 1.0, 3.0]
        assert o.invocations == 3 and o.queried == [3, 1, 3]
        o.reset_counter()
        assert o.invocations == 0 and o.queried == []

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            LabelOracle(np.ones(2)).query(2)

    def test_fresh_stream_has_zeroed_oracle(self, rng):
        s = RowStream.from_arrays(rng.standard_normal((3, 2)), np.ones(3))
        s.oracle.query(0)
        assert s.fresh().oracle.invocations == 0 and s.oracle.invocations == 1


class TestSynthetic:
    def test_noiseless_recovers_planted(self):
        data = gen_synthetic(SyntheticSpec(100, 3, noise_std=0.0, seed=1))
        np.testing.assert_allclose(data.b, data.A @ data.x_star, atol=1e-12)
        np.testing.assert_allclose(solve(data.A, data.b, 2.0).x, data.x_star, atol=1e-8)

    def test_deterministic(self):
        a, b = gen_synthetic(SyntheticSpec(50, 2, seed=4)), gen_synthetic(SyntheticSpec(50, 2, seed=4))
        np.testing.assert_array_equal(a.A, b.A)
        np.testing.assert_array_equal(a.b, b.b)

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
    def test_inflation_factor(self, p):
        n, d = 2000, 20
        ratios = []
        for seed in range(10):
            data = gen_synthetic(SyntheticSpec(n, d, p=p, seed=seed))
            assert data.inflated.size == d
            mask = np.zeros(n, dtype=bool)
            mask[data.inflated] = True
            norms = np.linalg.norm(data.A, axis=1)
            ratios.append(norms[mask].mean() / norms[~mask].mean())
        assert np.mean(ratios) == pytest.approx(n ** (1 / p), rel=0.2)

    def test_labels_from_inflated_matrix(self):
        data = gen_synthetic(SyntheticSpec(200, 4, noise_std=0.0, seed=2))
        np.testing.assert_allclose(data.b[data.inflated], data.A[data.inflated] @ data.x_star)

    def test_large_instance_fast(self):
        start = time.perf_counter()
        data = gen_synthetic(SyntheticSpec(10_000, 100, seed=0))
        assert time.perf_counter() - start < 10.0
        assert data.A.shape == (10_000, 100)

    @pytest.mark.parametrize("kw", [dict(n=5, d=5), dict(n=10, d=2, inflate_count=11)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            gen_synthetic(SyntheticSpec(**kw))

    def test_plain_gaussian_has_no_inflation(self):
        assert gaussian_instance(50, 3).inflated.size == 0

    def test_save_and_read(self, tmp_path):
        data = gen_synthetic(SyntheticSpec(60, 3, seed=5))
        manifest = save_synthetic(data, tmp_path / "ds")
        assert json.loads((tmp_path / "ds" / "manifest.json").read_text()) == manifest
        s = read_stream(tmp_path / "ds")
        np.testing.assert_array_equal(s.features(), data.A)
        np.testing.assert_array_equal(load_x_star(tmp_path / "ds" / "x_star.bin"), data.x_star)
        assert manifest["inflated_rows"] == data.inflated.tolist()


class TestIngest:
    def test_toy(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        info = ingest_csv_dataset(tmp_path / "t.csv", ["a", "b"], "y", tmp_path / "t.bin")
        s = read_stream(tmp_path / "t.bin")
        assert s.n == 3 and info["d"] == 2
        np.testing.assert_array_equal(s.features(), [[1, 2], [4, 5], [7, 8]])

    def test_normalize_constant_column(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,c,y\n1,5,0\n2,5,0\n3,5,1\n")
        ingest_csv_dataset(tmp_path / "t.csv", ["a", "c"], "y", tmp_path / "t.bin", normalize=True)
        A = read_stream(tmp_path / "t.bin").features()
        np.testing.assert_allclose(A[:, 0].mean(), 0.0, atol=1e-15)
        np.testing.assert_allclose(A[:, 0].std(), 1.0)
        np.testing.assert_array_equal(A[:, 1], 0.0)
        side = json.loads((tmp_path / "t.bin.json").read_text())
        assert side["std"][1] == 1e-12 and side["normalized"]

    def test_missing_column(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,y\n1,2\n")
        with pytest.raises(MissingColumn):
            ingest_csv_dataset(tmp_path / "t.csv", ["a", "b"], "y", tmp_path / "t.bin")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,y\n1,2\nfoo,3\n")
        with pytest.raises(NonNumeric):
            ingest_csv_dataset(tmp_path / "t.csv", ["a"], "y", tmp_path / "t.bin")

    def test_gas_sensor_shape(self, tmp_path, rng):
        n, d = 13910, 128
        names = [f"f{j}" for j in range(d)]
        write_csv_rows(tmp_path / "gas.csv", rng.standard_normal((n, d)), rng.standard_normal(n), names + ["y"])
        info = ingest_csv_dataset(tmp_path / "gas.csv", names, "y", tmp_path / "gas.bin", normalize=True)
        assert info["d"] == 128 and info["n"] == n
        assert read_stream(tmp_path / "gas.bin").features().shape == (n, d)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_binary_and_csv_give_identical_runs(tmp_path, p):
    data = gen_synthetic(SyntheticSpec(300, 3, p=p, seed=9))
    write_stream(tmp_path / "s.bin", data.A, data.b)
    write_csv_rows(tmp_path / "s.csv", data.A, data.b)
    cfg = PipelineConfig(p=p, seed=4)
    results = []
    for name in ("s.bin", "s.csv"):
        stream = read_stream(tmp_path / name)
        res = run(stream, cfg)
        assert_contract(stream, res)
        results.append(res)
    np.testing.assert_array_equal(results[0].x, results[1].x)
    assert results[0].ledger.rows == results[1].ledger.rows
