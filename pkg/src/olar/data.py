"""Row streams, the counting label oracle, synthetic data and dataset ingestion.

Binary layout (little endian)::

    "OLAR" | version u16 | n u64 | d u32 | flags u8 | n·d f64 features | n f64 labels

Bit 0 of ``flags`` marks the label section as present. Labels live after all
features so the oracle can seek to a single label without touching rows.
"""
from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from olar.errors import (
    BadHeader,
    DimensionMismatch,
    MissingColumn,
    NonNumeric,
    RaggedRow,
    StreamNonFinite,
    UnexpectedEof,
)

MAGIC = b"OLAR"
VERSION = 1
HEADER = struct.Struct("<4sHQIB")
FLAG_LABELS = 1
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class StreamHeader:
    n: int
    d: int
    has_labels: bool
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.n, self.d, FLAG_LABELS if self.has_labels else 0)

    @classmethod
    def unpack(cls, raw: bytes) -> "StreamHeader":
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise BadHeader(f"bad magic {raw[:4]!r}", 0)
        if len(raw) < HEADER.size:
            raise UnexpectedEof(f"header needs {HEADER.size} bytes, got {len(raw)}", len(raw))
        _, version, n, d, flags = HEADER.unpack_from(raw)
        if version != VERSION:
            raise BadHeader(f"unsupported version {version}", 4)
        return cls(int(n), int(d), bool(flags & FLAG_LABELS), version)

    @property
    def labels_offset(self) -> int:
        return HEADER.size + 8 * self.n * self.d


class LabelOracle:
    """Reveals one label per ``query`` and counts every invocation.

    ``queried`` keeps the row indices in call order so callers can audit
    exactly which labels were ever exposed.
    """

    def __init__(self, labels: np.ndarray | None = None, path=None, offset: int = 0, n: int | None = None):
        if (labels is None) == (path is None):
            raise ValueError("give exactly one of labels or path")
        self._labels = None if labels is None else np.asarray(labels, dtype=np.float64).reshape(-1)
        self._path = None if path is None else Path(path)
        self._offset = offset
        self.n = len(self._labels) if self._labels is not None else int(n)
        self.invocations = 0
        self.queried: list[int] = []

    def query(self, index: int) -> float:
        index = int(index)
        if not 0 <= index < self.n:
            raise IndexError(f"label index {index} outside [0, {self.n})")
        if self._labels is not None:
            value = float(self._labels[index])
        else:
            with open(self._path, "rb") as fh:
                fh.seek(self._offset + 8 * index)
                raw = fh.read(8)
            if len(raw) != 8:
                raise UnexpectedEof("label section truncated", self._offset + 8 * index)
            value = struct.unpack("<d", raw)[0]
        self.invocations += 1
        self.queried.append(index)
        return value

    def reset_counter(self) -> None:
        self.invocations = 0
        self.queried.clear()


class RowStream:
    """Feature rows in order, with labels reachable only through ``oracle``."""

    def __init__(self, rows: np.ndarray, oracle: LabelOracle | None):
        self._rows = rows
        self.oracle = oracle

    @classmethod
    def from_arrays(cls, A, b=None) -> "RowStream":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise DimensionMismatch(f"A must be 2-d, got shape {A.shape}")
        bad = np.flatnonzero(~np.all(np.isfinite(A), axis=1))
        if bad.size:
            raise StreamNonFinite(f"row {bad[0]} has non-finite entries", int(bad[0]))
        oracle = None
        if b is not None:
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if b.size != A.shape[0]:
                raise DimensionMismatch(f"{A.shape[0]} rows but {b.size} labels")
            oracle = LabelOracle(b)
        return cls(A, oracle)

    @property
    def n(self) -> int:
        return self._rows.shape[0]

    @property
    def d(self) -> int:
        return self._rows.shape[1]

    def __iter__(self):
        return iter(self._rows)

    def __len__(self) -> int:
        return self.n

    def features(self) -> np.ndarray:
        """The full feature matrix (free in the active model; used by oracles and baselines)."""
        return self._rows

    def fresh(self) -> "RowStream":
        """Same rows with a new, zeroed oracle (for repeated trials on one dataset)."""
        if self.oracle is None:
            return RowStream(self._rows, None)
        o = self.oracle
        clone = LabelOracle(o._labels) if o._labels is not None else LabelOracle(path=o._path, offset=o._offset, n=o.n)
        return RowStream(self._rows, clone)


# -- binary / CSV --------------------------------------------------------


def write_stream(path, A, b=None) -> None:
    A = np.ascontiguousarray(A, dtype="<f8")
    header = StreamHeader(A.shape[0], A.shape[1], b is not None)
    with open(path, "wb") as fh:
        fh.write(header.pack())
        fh.write(A.tobytes())
        if b is not None:
            fh.write(np.ascontiguousarray(b, dtype="<f8").reshape(-1).tobytes())


def _read_binary(path: Path) -> RowStream:
    size = path.stat().st_size
    with open(path, "rb") as fh:
        header = StreamHeader.unpack(fh.read(HEADER.size))
        need = header.labels_offset + (8 * header.n if header.has_labels else 0)
        if size < need:
            raise UnexpectedEof(f"file has {size} bytes, header promises {need}", size)
        A = np.frombuffer(fh.read(8 * header.n * header.d), dtype="<f8").reshape(header.n, header.d)
    A = A.astype(np.float64)
    bad = np.flatnonzero(~np.all(np.isfinite(A), axis=1))
    if bad.size:
        raise StreamNonFinite(f"row {bad[0]} has non-finite entries", int(bad[0]))
    oracle = LabelOracle(path=path, offset=header.labels_offset, n=header.n) if header.has_labels else None
    return RowStream(A, oracle)


def _parse_float(tok: str, row: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise NonNumeric(f"row {row}: cannot parse {tok!r} as a number") from None


def _read_csv(path: Path) -> RowStream:
    with open(path, newline="") as fh:
        records = [r for r in csv.reader(fh) if r]
    if records:
        try:
            [float(t) for t in records[0]]
        except ValueError:
            records = records[1:]  # header row
    if not records:
        raise RaggedRow("CSV has no data rows", 0)
    width = len(records[0])
    if width < 2:
        raise RaggedRow("CSV needs at least one feature column and a label column", 0)
    values = np.empty((len(records), width))
    for i, rec in enumerate(records):
        if len(rec) != width:
            raise RaggedRow(f"row {i} has {len(rec)} fields, expected {width}", i)
        values[i] = [_parse_float(t, i) for t in rec]
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise StreamNonFinite(f"row {bad[0]} has non-finite entries", int(bad[0]))
    return RowStream(values[:, :-1].copy(), LabelOracle(values[:, -1].copy()))


def read_stream(path) -> RowStream:
    """Open a binary stream (detected by its magic) or a CSV whose last column is the label.

    A directory written by ``save_synthetic`` is opened through its manifest.
    """
    path = Path(path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        path = path / manifest["stream"]
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_binary(path)
    if path.suffix.lower() in (".bin", ".olar"):
        raise BadHeader(f"bad magic {head!r}", 0)
    return _read_csv(path)


# -- synthetic data ------------------------------------------------------


@dataclass
class SyntheticSpec:
    n: int
    d: int
    p: float = 2.0
    noise_std: float = 1.0
    inflate_count: int | None = None  # defaults to d
    inflate_factor: float | None = None  # defaults to n^{1/p}
    seed: int = 0

    def resolved(self) -> "SyntheticSpec":
        count = self.d if self.inflate_count is None else self.inflate_count
        factor = self.n ** (1.0 / self.p) if self.inflate_factor is None else self.inflate_factor
        if self.n <= self.d:
            raise ValueError(f"need n > d, got n={self.n}, d={self.d}")
        if count > self.n:
            raise ValueError(f"inflate_count {count} exceeds n={self.n}")
        return SyntheticSpec(self.n, self.d, self.p, self.noise_std, count, factor, self.seed)


@dataclass
class SyntheticData:
    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    inflated: np.ndarray
    spec: SyntheticSpec = field(repr=False)

    def stream(self) -> RowStream:
        return RowStream.from_arrays(self.A, self.b)


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Gaussian rows, a seeded random subset scaled up, then b = Ax* + ξ on the scaled matrix."""
    spec = spec.resolved()
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.n, spec.d))
    x_star = rng.standard_normal(spec.d)
    inflated = np.sort(rng.choice(spec.n, size=spec.inflate_count, replace=False))
    A[inflated] *= spec.inflate_factor
    b = A @ x_star + spec.noise_std * rng.standard_normal(spec.n)
    return SyntheticData(A, b, x_star, inflated, spec)


def gaussian_instance(n: int, d: int, seed: int = 0, noise_std: float = 1.0) -> SyntheticData:
    """Plain Gaussian data without inflated rows."""
    return gen_synthetic(SyntheticSpec(n, d, noise_std=noise_std, inflate_count=0, seed=seed))


def save_synthetic(data: SyntheticData, out_dir) -> dict:
    """Write stream.bin, x_star.bin and manifest.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stream(out / "stream.bin", data.A, data.b)
    np.ascontiguousarray(data.x_star, dtype="<f8").tofile(out / "x_star.bin")
    manifest = {
        "format": "olar-stream",
        "version": VERSION,
        "stream": "stream.bin",
        "x_star": "x_star.bin",
        "spec": asdict(data.spec),
        "inflated_rows": data.inflated.tolist(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_x_star(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8")


# -- real datasets -------------------------------------------------------


def ingest_csv_dataset(path, feature_cols, label_col, out_path, normalize: bool = False) -> dict:
    """Convert a headed CSV into a binary stream, optionally standardising features.

    Columns are selected by header name. With ``normalize`` each feature is
    mapped to mean 0 and std 1 (std floored at 1e-12, so a constant column
    becomes all zeros); means and stds go to ``<out_path>.json``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn("empty CSV")
        index = {name.strip(): i for i, name in enumerate(header)}
        wanted = list(feature_cols) + [label_col]
        missing = [c for c in wanted if c not in index]
        if missing:
            raise MissingColumn(f"columns not found: {missing}")
        cols = [index[c] for c in wanted]
        rows = []
        for i, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise RaggedRow(f"row {i} has {len(rec)} fields, expected {len(header)}", i)
            rows.append([_parse_float(rec[c], i) for c in cols])
    values = np.asarray(rows, dtype=np.float64).reshape(-1, len(cols))
    A, b = values[:, :-1], values[:, -1]
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise StreamNonFinite(f"row {bad[0]} has non-finite entries", int(bad[0]))
    sidecar = {"source": os.fspath(path), "features": list(feature_cols), "label": label_col,
               "n": int(A.shape[0]), "d": int(A.shape[1]), "normalized": bool(normalize)}
    if normalize:
        mean = A.mean(axis=0)
        raw_std = A.std(axis=0)
        std = np.maximum(raw_std, STD_FLOOR)
        A = np.where(raw_std > STD_FLOOR, (A - mean) / std, 0.0)
        sidecar["mean"] = mean.tolist()
        sidecar["std"] = std.tolist()
    write_stream(out_path, A, b)
    Path(f"{os.fspath(out_path)}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return sidecar

