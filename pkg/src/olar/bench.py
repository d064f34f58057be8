"""Budget sweeps with repeated seeded trials, written as a stable CSV.

Data rows::

    method,budget,trial,relative_error,queries_used,seed,status

followed by a line ``# aggregate`` and the per-(method, budget) summary::

    method,budget,trials,mean,std

Floats are written with ``repr`` so a rerun with the same inputs gives the
same bytes. ``std`` is the population standard deviation (ddof=0) over the
trials whose status is ``ok``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from olar.errors import OlarError
from olar.pipelines import PipelineConfig, budgeted_active, offline_active_like, uniform_baseline
from olar.sampling import CounterRNG
from olar.solvers import relative_error, solve

METHODS = {
    "active-online": budgeted_active,
    "uniform": uniform_baseline,
    "offline-active-like": offline_active_like,
}
DATA_COLUMNS = ("method", "budget", "trial", "relative_error", "queries_used", "seed", "status")
AGGREGATE_COLUMNS = ("method", "budget", "trials", "mean", "std")
AGGREGATE_MARKER = "# aggregate"


@dataclass
class SweepSpec:
    methods: list[str]
    budgets: list[int]
    trials: int = 20
    p: float = 2.0
    dataset: str | None = None
    seed: int = 0
    output: str | None = None
    config: PipelineConfig | None = field(default=None, repr=False)

    def validated(self) -> "SweepSpec":
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
        if not self.methods:
            raise ValueError("at least one method is needed")
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        budgets = [int(b) for b in self.budgets]
        if not budgets or any(b <= 0 for b in budgets):
            raise ValueError(f"budgets must be positive, got {budgets}")
        if budgets != sorted(budgets):
            raise ValueError(f"budgets must be sorted ascending, got {budgets}")
        return SweepSpec(list(self.methods), budgets, int(self.trials), float(self.p),
                         self.dataset, int(self.seed), self.output, self.config)


@dataclass(frozen=True)
class TrialRecord:
    method: str
    budget: int
    trial: int
    relative_error: float
    queries_used: int
    seed: int
    status: str = "ok"


@dataclass(frozen=True)
class Aggregate:
    method: str
    budget: int
    trials: int
    mean: float
    std: float


def trial_seed(master: int, budget: int, trial: int) -> int:
    """Per-(budget, trial) seed shared by every method, so methods are compared on paired draws."""
    return CounterRNG(master).derive(budget, trial) & 0x7FFFFFFF


def run_trial(method: str, stream, budget: int, p: float, seed: int, reference,
              config: PipelineConfig | None = None, trial: int = 0) -> TrialRecord:
    """One trial on a fresh label oracle; ``reference`` is (b, opt) from ``full_reference``.

    Failures come back as a record carrying the exception name as status.
    """
    fresh = stream.fresh()
    b, opt = reference
    try:
        res = METHODS[method](fresh, budget, p, seed=seed, config=config)
        err = relative_error(fresh.features(), b, p, res.x, opt)
        status = "ok" if fresh.oracle.invocations == res.queries else "ledger-mismatch"
        return TrialRecord(method, budget, trial, float(err), int(res.queries), seed, status)
    except (OlarError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return TrialRecord(method, budget, trial, math.nan, int(fresh.oracle.invocations), seed,
                           type(exc).__name__)


def full_reference(stream, p: float) -> tuple[np.ndarray, float]:
    """All labels and opt = min ‖Ax − b‖_p, read through a separate oracle (evaluation only)."""
    oracle = stream.fresh().oracle
    b = np.array([oracle.query(i) for i in range(stream.n)])
    return b, solve(stream.features(), b, p, strict=False).objective


def sweep(spec: SweepSpec, stream) -> list[TrialRecord]:
    """Every (method, budget, trial) in that order."""
    spec = spec.validated()
    reference = full_reference(stream, spec.p)
    records = []
    for method in spec.methods:
        for budget in spec.budgets:
            for trial in range(spec.trials):
                seed = trial_seed(spec.seed, budget, trial)
                records.append(run_trial(method, stream, budget, spec.p, seed, reference, spec.config, trial))
    return records


def aggregate(records) -> list[Aggregate]:
    groups: dict[tuple[str, int], list[float]] = {}
    for r in records:
        values = groups.setdefault((r.method, r.budget), [])
        if r.status == "ok":
            values.append(r.relative_error)
    out = []
    for (method, budget), values in groups.items():
        if values:
            out.append(Aggregate(method, budget, len(values), float(np.mean(values)), float(np.std(values))))
        else:
            out.append(Aggregate(method, budget, 0, math.nan, math.nan))
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_csv(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DATA_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in DATA_COLUMNS])
    fh.write(AGGREGATE_MARKER + "\n")
    w.writerow(AGGREGATE_COLUMNS)
    for a in aggregate(records):
        w.writerow([_fmt(getattr(a, c)) for c in AGGREGATE_COLUMNS])


def to_csv(records) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[TrialRecord], list[Aggregate]]:
    """Parse the two sections written by ``write_csv``."""
    data_part, _, agg_part = text.partition(AGGREGATE_MARKER + "\n")
    records = [
        TrialRecord(row["method"], int(row["budget"]), int(row["trial"]), float(row["relative_error"]),
                    int(row["queries_used"]), int(row["seed"]), row["status"])
        for row in csv.DictReader(io.StringIO(data_part))
    ]
    aggs = [
        Aggregate(row["method"], int(row["budget"]), int(row["trials"]), float(row["mean"]), float(row["std"]))
        for row in csv.DictReader(io.StringIO(agg_part))
    ]
    return records, aggs
