"""Deterministic discrete-event simulation of a router and N workers.

The event loop lives in a compiled extension (``_kernel``) when it has been
built, with a pure-Python twin (``_kernel_py``) used otherwise.  Set
``FINESCHED_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..metrics import HIT, SimReport
from ..policy import Policy, PolicyKind, compile_table
from ..profile import DEFAULT_BUCKET_COUNT, Catalog, sustainable_batch_rate
from ..tracegen import Trace
from . import _kernel_py

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None

SAMPLE_PERIOD_US = 100_000
DIVERGENCE_FACTOR = 50

if _kernel_c is not None and os.environ.get("FINESCHED_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_BACKENDS = {"python": _kernel_py.simulate}
if _kernel_c is not None:
    _BACKENDS["cython"] = _kernel_c.simulate


@dataclass(frozen=True)
class SimConfig:
    catalog: Catalog
    policy: PolicyKind
    worker_count: int = 8
    actuation_delay_us: int = 0
    bucket_count: int = DEFAULT_BUCKET_COUNT
    dispatch_overhead_us: int = 0
    fault_schedule: tuple[tuple[int, int], ...] = field(default=())
    sample_period_us: int = SAMPLE_PERIOD_US

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.actuation_delay_us < 0:
            raise ValueError("actuation delay must be >= 0")
        if self.dispatch_overhead_us < 0:
            raise ValueError("dispatch overhead must be >= 0")
        for t, w in self.fault_schedule:
            if not 0 <= w < self.worker_count:
                raise ValueError(f"fault names unknown worker {w}")
            if t < 0:
                raise ValueError("fault times must be >= 0")
        if self.policy.name == "fixed":
            try:
                self.catalog.get(self.policy.subnet_id)
            except KeyError:
                known = ", ".join(s.id for s in self.catalog)
                raise ValueError(
                    f"fixed policy names unknown subnet {self.policy.subnet_id!r} (known: {known})"
                ) from None

    def echo(self) -> dict:
        return {
            "policy": str(self.policy),
            "workers": self.worker_count,
            "actuation_delay_us": self.actuation_delay_us,
            "bucket_count": self.bucket_count,
            "dispatch_overhead_us": self.dispatch_overhead_us,
            "faults": [list(f) for f in self.fault_schedule],
            "sample_period_us": self.sample_period_us,
            "subnets": [s.id for s in self.catalog],
        }


def count_latency_table(catalog: Catalog) -> np.ndarray:
    """[subnet, count] -> latency of the smallest profiled batch >= count."""
    bmax = catalog.max_batch
    out = np.full((len(catalog), bmax + 1), -1, dtype=np.int64)
    for i, s in enumerate(catalog):
        for c in range(1, bmax + 1):
            if c <= max(s.batch_sizes):
                out[i, c] = s.latency_for_count(c)
    return out


def divergence_threshold(trace: Trace) -> float:
    """Backlog above which a run is flagged as diverging: 50 x rate x SLO."""
    if len(trace) == 0 or trace.duration_us <= 0:
        return math.inf
    rate = len(trace) / (trace.duration_us / 1e6)
    slo = float(np.mean(trace.deadline_us - trace.arrival_us)) / 1e6
    return DIVERGENCE_FACTOR * rate * slo


def run(trace: Trace, config: SimConfig, backend: str | None = None) -> SimReport:
    catalog = config.catalog
    policy = Policy(config.policy, catalog, config.bucket_count)
    table = compile_table(policy, catalog)
    faults = sorted(config.fault_schedule)
    n_samples = math.ceil(trace.duration_us / config.sample_period_us) if trace.duration_us else 0
    sim = _BACKENDS[backend or BACKEND]
    raw = sim(
        trace.arrival_us,
        trace.deadline_us,
        table.thr,
        table.batch,
        table.subnet,
        table.depth_class,
        count_latency_table(catalog),
        config.worker_count,
        int(config.actuation_delay_us),
        int(config.dispatch_overhead_us),
        np.array([f[0] for f in faults], dtype=np.int64),
        np.array([f[1] for f in faults], dtype=np.int64),
        int(config.sample_period_us),
        n_samples,
    )
    return build_report(trace, config, raw, backend or BACKEND)


def build_report(trace: Trace, config: SimConfig, raw: dict, backend: str) -> SimReport:
    """Turn raw kernel (or live runtime) arrays into a SimReport."""
    catalog = config.catalog
    n_samples = len(raw["q_samples"])
    acc_table = np.array([s.accuracy for s in catalog], dtype=np.float64)
    counts = np.diff(raw["b_off"])
    batches = {
        "start": raw["b_start"],
        "end": raw["b_end"],
        "worker": raw["b_worker"],
        "subnet": raw["b_subnet"],
        "decided": raw["b_decided"],
        "count": counts,
        "offsets": raw["b_off"],
        "members": raw["members"],
    }
    accuracy = np.full(len(trace), np.nan)
    served = raw["batch_of"] >= 0
    accuracy[served] = acc_table[raw["b_subnet"][raw["batch_of"][served]]]
    accuracy[raw["status"] != HIT] = np.nan

    dyn = _dynamics(trace, batches, acc_table, raw, config.sample_period_us, n_samples)
    threshold = divergence_threshold(trace)
    echo = config.echo()
    echo["backend"] = backend
    if trace.spec:
        echo["trace"] = trace.spec
    return SimReport(
        status=raw["status"],
        accuracy=accuracy,
        completion_us=raw["completion"],
        arrival_us=trace.arrival_us,
        deadline_us=trace.deadline_us,
        batches=batches,
        dynamics=dyn,
        divergence=raw["max_backlog"] > threshold,
        max_backlog=raw["max_backlog"],
        divergence_threshold=threshold,
        config=echo,
    )


def _dynamics(trace, batches, acc_table, raw, period, n_samples) -> dict:
    t_ms = np.arange(n_samples, dtype=np.int64) * period // 1000
    ingest = np.bincount(
        np.minimum(trace.arrival_us // period, max(n_samples - 1, 0)), minlength=n_samples
    )[:n_samples] * (1e6 / period)
    bins = np.minimum(batches["start"] // period, max(n_samples - 1, 0))
    cnt = batches["count"].astype(np.float64)
    served = np.bincount(bins, weights=cnt, minlength=n_samples)[:n_samples]
    nb = np.bincount(bins, minlength=n_samples)[:n_samples]
    acc_w = np.bincount(bins, weights=cnt * acc_table[batches["subnet"]], minlength=n_samples)[
        :n_samples
    ]
    with np.errstate(invalid="ignore", divide="ignore"):
        accuracy = np.where(served > 0, acc_w / served, np.nan)
        batch = np.where(nb > 0, served / nb, np.nan)
    return {
        "t_ms": t_ms,
        "ingest_qps": ingest.astype(np.float64),
        "accuracy": accuracy,
        "batch": batch,
        "queue_depth": raw["q_samples"],
        "workers": raw["w_samples"],
    }


def sustainable_qps(catalog: Catalog, subnet_id: str, worker_count: int) -> float:
    """Peak ingest rate a fleet can absorb serving only `subnet_id`."""
    return worker_count * sustainable_batch_rate(catalog.get(subnet_id))


def check_invariants(report: SimReport, catalog: Catalog | None = None) -> list[str]:
    """Scheduling-constraint violations found in a report's batch log."""
    problems = []
    b = report.batches
    n = len(report)
    if report.hits + report.misses + report.drops != n:
        problems.append("conservation: hits + misses + drops != total")
    seen = np.zeros(n, dtype=np.int64)
    np.add.at(seen, b["members"], 1)
    if np.any(seen > 1):
        problems.append("a query was batched more than once")
    for w in np.unique(b["worker"]):
        m = b["worker"] == w
        st, en = b["start"][m], b["end"][m]
        order = np.argsort(st, kind="stable")
        st, en = st[order], en[order]
        if np.any(st[1:] < en[:-1]):
            problems.append(f"worker {w} runs overlapping batches")
    offs = b["offsets"]
    for k in range(len(b["start"])):
        mem = b["members"][offs[k] : offs[k + 1]]
        if b["start"][k] < report.arrival_us[mem].max():
            problems.append(f"batch {k} starts before a member arrived")
            break
    if catalog is not None and len(b["subnet"]):
        if b["subnet"].min() < 0 or b["subnet"].max() >= len(catalog):
            problems.append("batch with an invalid subnet")
    return problems
