"""Replicated sweeps, fixed-grid baselines, and log-log scaling fits."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from . import metrics
from .environments import EnvironmentSpec
from .groups import family_from_name
from .learner import RunConfig, Transcript, run

log = logging.getLogger(__name__)

AXES = ("T", "J", "m")
CSV_COLUMNS = (
    "axis", "value", "replica", "seed", "mcerr", "calerr",
    "ever_active_total", "max_depth_reached", "runtime_ms", "baseline_calerr",
)


def default_bins(T: int) -> int:
    """ceil(T^(1/3)), computed exactly on integers."""
    n = max(1, round(T ** (1 / 3)))
    while n ** 3 < T:
        n += 1
    while n > 1 and (n - 1) ** 3 >= T:
        n -= 1
    return n


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    replicas: int
    base: RunConfig
    baseline: str | int | None = None     # None, "auto" (ceil T^(1/3)) or a bin count
    master_seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.baseline not in (None, "auto") and not (isinstance(self.baseline, int) and self.baseline >= 1):
            raise ValueError(f"baseline must be null, 'auto' or a positive int, got {self.baseline!r}")

    _keys = {"axis", "values", "replicas", "baseline", "master_seed"}

    @classmethod
    def from_dict(cls, sweep: dict[str, Any], base: RunConfig) -> "SweepSpec":
        extra = set(sweep) - cls._keys
        if extra:
            raise ValueError(f"unknown sweep keys: {sorted(extra)}")
        baseline = sweep.get("baseline")
        if isinstance(baseline, dict):
            if set(baseline) != {"fixed_grid"}:
                raise ValueError("baseline object must be {'fixed_grid': n | 'auto'}")
            baseline = baseline["fixed_grid"]
        return cls(
            axis=sweep["axis"],
            values=tuple(sweep["values"]),
            replicas=int(sweep.get("replicas", 1)),
            base=base,
            baseline=baseline,
            master_seed=int(sweep.get("master_seed", 0)),
        )


def replica_seed(master_seed: int, replica: int) -> int:
    """Seed shared by every axis value of one replica (common random numbers)."""
    return int(np.random.SeedSequence([master_seed, replica]).generate_state(1, np.uint64)[0])


def config_for(spec: SweepSpec, value, seed: int) -> RunConfig:
    """Run config for one axis value; the learner and Nature get separate streams."""
    base = spec.base
    env = base.environment
    family = base.family
    T = base.T
    if spec.axis == "T":
        T = int(value)
    elif spec.axis == "J":
        if env.variant != "piecewise_bernoulli" or "means" not in env.params:
            raise ValueError("axis J needs a piecewise_bernoulli environment with a 'means' cycle")
        cycle = env.params["means"]
        env = EnvironmentSpec(env.variant, {"means": [cycle[j % len(cycle)] for j in range(int(value))]})
    elif spec.axis == "m":
        if env.variant != "ordered_grid_walsh":
            raise ValueError("axis m needs the ordered_grid_walsh environment")
        env = EnvironmentSpec(env.variant, {"m": int(value)})
        if family.startswith("walsh"):
            family = f"walsh:{int(value)}"
    return replace(base, T=T, environment=env, family=family, learner_seed=seed, env_seed=seed + 1)


@dataclass
class RunSummary:
    mcerr: float
    calerr: float
    ever_active: int
    max_depth: int
    runtime_ms: float
    transcript: Transcript | None = None


def summarize(config: RunConfig, keep_transcript: bool = False) -> RunSummary:
    family = family_from_name(config.family)
    start = time.perf_counter()
    try:
        tr = run(config, family)
    except Exception as exc:
        raise RuntimeError(f"run failed for config {json.dumps(config.to_dict())}: {exc}") from exc
    elapsed = (time.perf_counter() - start) * 1e3
    table = metrics.mcerr(tr, family)
    return RunSummary(table.mcerr, table.calerr, tr.ever_active(), tr.max_depth_reached(), elapsed,
                      tr if keep_transcript else None)


def _task(args):
    config, keep = args
    return summarize(config, keep)


def run_many(configs: list[RunConfig], jobs: int = 1, keep_transcripts: bool = False) -> list[RunSummary]:
    """Run configs in order; results come back in input order."""
    tasks = [(c, keep_transcripts) for c in configs]
    if jobs <= 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_task, tasks))


@dataclass
class SweepRow:
    axis: str
    value: Any
    replica: int
    seed: int
    mcerr: float
    calerr: float
    ever_active_total: int
    max_depth_reached: int
    runtime_ms: float
    baseline_calerr: float | None = None


@dataclass
class Fit:
    exponent: float
    intercept: float
    stderr: float


@dataclass
class SweepReport:
    spec: SweepSpec
    rows: list[SweepRow]
    transcripts: dict[tuple, Transcript] = field(default_factory=dict)

    def column(self, name: str, value) -> list[float]:
        return [getattr(r, name) for r in self.rows if r.value == value]

    def aggregate(self, name: str) -> list[dict]:
        out = []
        for v in self.spec.values:
            col = [x for x in self.column(name, v) if x is not None]
            if not col:
                continue
            q1, med, q3 = np.percentile(col, [25, 50, 75])
            out.append({"value": v, "median": float(med), "iqr": float(q3 - q1)})
        return out

    def medians(self, name: str) -> list[float]:
        return [a["median"] for a in self.aggregate(name)]

    def fit(self, name: str) -> Fit | None:
        agg = self.aggregate(name)
        pts = [(a["value"], a["median"]) for a in agg]
        if len({x for x, _ in pts}) < 2 or any(y <= 0 for _, y in pts):
            return None
        return fit_scaling(pts)

    def to_csv(self, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.axis, r.value, r.replica, r.seed, repr(r.mcerr), repr(r.calerr),
                r.ever_active_total, r.max_depth_reached,
                f"{r.runtime_ms:.1f}" if timing else "",
                "" if r.baseline_calerr is None else repr(r.baseline_calerr),
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        metrics_ = ["mcerr", "calerr"] + (["baseline_calerr"] if self.spec.baseline is not None else [])
        out = {
            "axis": self.spec.axis,
            "values": list(self.spec.values),
            "replicas": self.spec.replicas,
            "master_seed": self.spec.master_seed,
            "base": self.spec.base.to_dict(),
            "baseline": self.spec.baseline,
            "aggregates": {m: self.aggregate(m) for m in metrics_},
            "fits": {},
        }
        for m in metrics_:
            f = self.fit(m)
            out["fits"][m] = None if f is None else vars(f)
        return out


def run_sweep(spec: SweepSpec, jobs: int = 1, keep_transcripts: bool = False) -> SweepReport:
    seeds = [replica_seed(spec.master_seed, r) for r in range(spec.replicas)]
    cells = [(v, r) for v in spec.values for r in range(spec.replicas)]
    configs = [config_for(spec, v, seeds[r]) for v, r in cells]
    results = run_many(configs, jobs, keep_transcripts)
    base_results = [None] * len(cells)
    if spec.baseline is not None:
        grid = []
        for c in configs:
            n = default_bins(c.T) if spec.baseline == "auto" else spec.baseline
            grid.append(replace(c, fixed_grid=n))
        base_results = run_many(grid, jobs)
    rows, transcripts = [], {}
    for (v, r), c, res, base in zip(cells, configs, results, base_results):
        rows.append(SweepRow(spec.axis, v, r, seeds[r], res.mcerr, res.calerr, res.ever_active,
                             res.max_depth, res.runtime_ms, None if base is None else base.calerr))
        if res.transcript is not None:
            transcripts[(v, r)] = res.transcript
    return SweepReport(spec, rows, transcripts)


def fit_scaling(points) -> Fit:
    """Least-squares fit of log y = exponent * log x + intercept."""
    pts = [(float(x), float(y)) for x, y in points]
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValueError("scaling fit needs positive x and y")
    if len({x for x, _ in pts}) < 2:
        raise ValueError("scaling fit needs at least two distinct x values")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    if len(pts) == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return Fit(float(slope), float(ly[0] - slope * lx[0]), 0.0)
    res = stats.linregress(lx, ly)
    return Fit(float(res.slope), float(res.intercept), float(res.stderr))


def read_csv_points(path, column: str = "calerr") -> list[tuple[float, float]]:
    """Median of ``column`` per axis value from a report CSV."""
    by_value: dict[float, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row.get(column, "") == "":
                continue
            by_value.setdefault(float(row["value"]), []).append(float(row[column]))
    if not by_value:
        raise ValueError(f"no values in column {column!r}")
    return [(v, float(np.median(ys))) for v, ys in sorted(by_value.items())]


def load_config(path) -> tuple[RunConfig, dict | None]:
    """Parse a config document ``{"run": {...}, "sweep": {...}}``."""
    doc = json.loads(Path(path).read_text())
    extra = set(doc) - {"run", "sweep"}
    if extra:
        raise ValueError(f"unknown top-level config keys: {sorted(extra)}")
    if "run" not in doc:
        raise ValueError("config needs a 'run' section")
    return RunConfig.from_dict(doc["run"]), doc.get("sweep")
