"""Merge-and-reduce block structure for approximate online Lewis weights.

Rows enter block B₀. When B₀ outgrows ``Q``, the blocks below the first empty
slot j are concatenated, subsampled by their Lewis weights with oversampling
``beta_c`` and stored (rescaled) in B_j. The online weight of the newest row
is read off the concatenation B_L ∘ … ∘ B₀.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from olar.errors import BadHeader, CapacityOverflow, DimensionMismatch
from olar.lewis import IncrementalLewis, lewis_weights
from olar.linalg import RowBuffer
from olar.sampling import CounterRNG

SNAPSHOT_MAGIC = b"OLCT"
SNAPSHOT_VERSION = 1
_SNAP_HEAD = "<4sHI"

# stage ids for the compression samplers (kept apart from the pipeline stages)
TREE_STAGE_BASE = 16

# Θ-constants; see TreeParams.default
C_BETA = 1.0
C_Q = 4.0
REFRESH_FRACTION = 0.05


@dataclass
class TreeParams:
    Q: float
    beta_c: float
    eta: float = 0.5
    delta: float = 0.01
    n_max: int = 1 << 20
    weight_tol: float = 1e-6
    max_iter: int = 200
    hard_cap: float = math.inf
    refresh_mass: float = 0.0

    @property
    def levels(self) -> int:
        return max(1, math.ceil(math.log2(max(self.n_max, 2))))

    @classmethod
    def default(cls, d: int, n_max: int, eta: float = 0.5, delta: float = 0.01, **overrides) -> "TreeParams":
        """Practical constants: beta_c = C_BETA·ln(n/δ)/η², Q = C_Q·beta_c·d (at most n).

        Weight queries between full refreshes use the lazy scheme of
        IncrementalLewis with a pending mass of 5% of d.
        """
        beta_c = C_BETA * math.log(max(n_max, 2) / delta) / eta**2
        Q = min(float(n_max), math.ceil(C_Q * beta_c * d))
        params = dict(
            Q=Q, beta_c=beta_c, eta=eta, delta=delta, n_max=int(n_max),
            hard_cap=4.0 * max(beta_c * d, Q), refresh_mass=REFRESH_FRACTION * d,
        )
        params.update(overrides)
        return cls(**params)


class CompressionTree:
    def __init__(self, d: int, p: float, params: TreeParams, seed: int = 0, stage: int = TREE_STAGE_BASE):
        self.d = d
        self.p = float(p)
        self.params = params
        self.rng = CounterRNG(seed)
        self.stage = stage
        self.blocks: list[np.ndarray] = [np.empty((0, d)) for _ in range(params.levels + 1)]
        self._b0 = RowBuffer(d)
        self.rows_seen = 0
        self.rounds = 0
        self.peak_rows = 0
        # Lewis weights of the whole concatenation B_L ∘ … ∘ B₀, grown row by row
        self._lewis = IncrementalLewis(d, p, params.weight_tol, params.max_iter, params.refresh_mass)
        self.last_weight: float | None = None

    # -- structure -----------------------------------------------------

    @property
    def L(self) -> int:
        return len(self.blocks) - 1

    def block(self, i: int) -> np.ndarray:
        return self._b0.view.copy() if i == 0 else self.blocks[i]

    def block_sizes(self) -> list[int]:
        return [len(self._b0)] + [b.shape[0] for b in self.blocks[1:]]

    @property
    def stored_rows(self) -> int:
        return sum(self.block_sizes())

    def concatenation(self) -> np.ndarray:
        """B_L ∘ B_{L−1} ∘ … ∘ B₀."""
        return np.vstack([self.blocks[i] for i in range(self.L, 0, -1)] + [self._b0.view])

    # -- operations ----------------------------------------------------

    def ingest(self, a_t) -> float:
        """Append ``a_t`` to B₀, record its approximate online weight, then compress if B₀ > Q.

        The weight is taken while ``a_t`` is still the last row of B₀, i.e.
        before a compression triggered by this same row rewrites the blocks.
        """
        a_t = np.asarray(a_t, dtype=np.float64).reshape(-1)
        if a_t.size != self.d:
            raise DimensionMismatch(f"row has {a_t.size} entries, tree expects {self.d}")
        self._b0.append(a_t)
        self.rows_seen += 1
        self.last_weight = self._lewis.append(a_t)
        self.peak_rows = max(self.peak_rows, self.stored_rows)
        if len(self._b0) > self.params.Q:
            self._compress()
        return self.last_weight

    def approx_online_weight(self, a_t=None) -> float:
        """Approximate online Lewis weight of the newest row.

        With ``a_t=None`` this is the value recorded by the last ``ingest``.
        An explicit row is appended virtually to the current blocks.
        """
        if a_t is None:
            if self.last_weight is None:
                raise ValueError("no row ingested yet")
            return self.last_weight
        a_t = np.asarray(a_t, dtype=np.float64).reshape(1, -1)
        M = np.vstack([self.concatenation(), a_t])
        init = np.append(self._lewis.weights, 1.0) if self._lewis.weights.size == M.shape[0] - 1 else None
        return lewis_weights(M, self.p, self.params.weight_tol, self.params.max_iter, init=init, strict=False).last

    def _compress(self) -> None:
        L = self.L
        j = next((i for i in range(1, L + 1) if self.blocks[i].shape[0] == 0), None)
        if j is None:
            # every slot is occupied: fold everything into the top block
            j = L
        parts = [self.blocks[i] for i in range(j - 1, 0, -1)] + [self._b0.view]
        if j == L and self.blocks[L].shape[0]:
            parts.insert(0, self.blocks[L])
        M = np.vstack(parts)
        w = lewis_weights(M, self.p, self.params.weight_tol, self.params.max_iter, strict=False).weights
        probs = np.minimum(self.params.beta_c * w, 1.0)
        keep = np.array(
            [i for i, q in enumerate(probs) if q >= 1.0 or (q > 0.0 and self.rng.uniform(self.stage, self.rounds, i) < q)],
            dtype=int,
        )
        new_block = M[keep] * (probs[keep] ** (-1.0 / self.p))[:, None]
        if new_block.shape[0] > self.params.hard_cap:
            raise CapacityOverflow(
                f"compressed block of {new_block.shape[0]} rows exceeds cap {self.params.hard_cap:.0f}"
            )
        warm = self._warm_start_after(M.shape[0], keep, probs)
        for i in range(1, j):
            self.blocks[i] = np.empty((0, self.d))
        self._b0.clear()
        self.blocks[j] = new_block
        self.rounds += 1
        rows = self.concatenation()
        res = lewis_weights(rows, self.p, self.params.weight_tol, self.params.max_iter, init=warm, strict=False)
        self._lewis.reset(rows, res.weights)

    def _warm_start_after(self, m: int, keep: np.ndarray, probs: np.ndarray) -> np.ndarray:
        # M is always the tail of the concatenation. A row kept with probability
        # q and rescaled by q^{-1/p} carries roughly w/q of the Lewis weight.
        w = self._lewis.weights
        head, tail = w[: w.size - m], w[w.size - m:]
        new = np.minimum(tail[keep] / np.maximum(probs[keep], 1e-300), 1.0)
        return np.concatenate([head, new])

    # -- persistence ---------------------------------------------------

    def snapshot(self) -> bytes:
        """Versioned binary blob: header, JSON metadata, then raw little-endian arrays."""
        lw = self._lewis
        meta = {
            "d": self.d,
            "p": self.p,
            "params": {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in asdict(self.params).items()},
            "seed": self.rng.seed,
            "stage": self.stage,
            "rows_seen": self.rows_seen,
            "rounds": self.rounds,
            "peak_rows": self.peak_rows,
            "sizes": self.block_sizes(),
            "last_weight": self.last_weight,
            "pending": lw._pending,
            "refreshes": lw.refreshes,
            "has_minv": lw._minv is not None,
        }
        raw = json.dumps(meta).encode()
        buf = io.BytesIO()
        buf.write(struct.pack(_SNAP_HEAD, SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(raw)))
        buf.write(raw)
        for i in range(self.L + 1):
            buf.write(np.ascontiguousarray(self.block(i), dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(lw.weights, dtype="<f8").tobytes())
        if lw._minv is not None:
            buf.write(np.ascontiguousarray(lw._minv, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def restore(cls, blob: bytes) -> "CompressionTree":
        head = struct.calcsize(_SNAP_HEAD)
        if len(blob) < head:
            raise BadHeader("snapshot too short", 0)
        magic, version, n = struct.unpack_from(_SNAP_HEAD, blob)
        if magic != SNAPSHOT_MAGIC:
            raise BadHeader(f"bad snapshot magic {magic!r}", 0)
        if version != SNAPSHOT_VERSION:
            raise BadHeader(f"unsupported snapshot version {version}", 4)
        if len(blob) < head + n:
            raise BadHeader("snapshot metadata truncated", head)
        meta = json.loads(blob[head: head + n])
        params = {k: (math.inf if v is None and k == "hard_cap" else v) for k, v in meta["params"].items()}
        tree = cls(meta["d"], meta["p"], TreeParams(**params), seed=meta["seed"], stage=meta["stage"])
        d = tree.d
        off = head + n

        def take(count: int) -> np.ndarray:
            nonlocal off
            if len(blob) < off + 8 * count:
                raise BadHeader("snapshot arrays truncated", off)
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            return arr

        for i, size in enumerate(meta["sizes"]):
            arr = take(size * d).reshape(size, d)
            if i == 0:
                tree._b0.extend(arr)
            else:
                tree.blocks[i] = arr
        lw = tree._lewis
        lw.rows.extend(tree.concatenation())
        lw.weights = take(sum(meta["sizes"]))
        lw._pending = meta["pending"]
        lw.refreshes = meta["refreshes"]
        lw._minv = take(d * d).reshape(d, d) if meta["has_minv"] else None
        tree.rows_seen = meta["rows_seen"]
        tree.rounds = meta["rounds"]
        tree.peak_rows = meta["peak_rows"]
        tree.last_weight = meta["last_weight"]
        return tree
