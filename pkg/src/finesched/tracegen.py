"""Seeded arrival-trace synthesis.

Three kinds are supported:

* ``bursty``: a deterministic base stream at ``lambda_b`` merged with a gamma
  renewal stream at ``lambda_v`` (shape ``1/cv2``).
* ``time_varying``: gamma inter-arrivals whose mean rate ramps linearly from
  ``lambda_1`` to ``lambda_2`` with acceleration ``tau`` (q/s^2).
* ``spikes``: a deterministic base stream plus 1-second gamma bursts that lift
  the total rate to ``spike_height`` every ``spike_period`` seconds.

Timestamps are integer microseconds.  The same spec and seed always yield the
same trace.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, TextIO

import numpy as np

US = 1_000_000
DEFAULT_SLO_US = 36_000

TraceKind = Literal["bursty", "time_varying", "spikes"]


@dataclass(frozen=True)
class TraceSpec:
    kind: TraceKind = "bursty"
    duration: float = 60.0
    slo_us: int = DEFAULT_SLO_US
    seed: int = 0
    cv2: float = 1.0
    lambda_b: float = 0.0
    lambda_v: float = 0.0
    lambda_1: float = 0.0
    lambda_2: float = 0.0
    tau: float = math.inf
    spike_period: float = 15.0
    spike_height: float = 0.0

    def __post_init__(self):
        if self.kind not in ("bursty", "time_varying", "spikes"):
            raise ValueError(f"unknown trace kind {self.kind!r}")
        for name in ("lambda_b", "lambda_v", "lambda_1", "lambda_2", "spike_height"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.cv2 < 0:
            raise ValueError("cv2 must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.slo_us <= 0:
            raise ValueError("slo must be > 0")
        if self.kind == "time_varying":
            if self.lambda_2 < self.lambda_1:
                raise ValueError("time-varying traces need lambda_2 >= lambda_1")
            if self.tau <= 0:
                raise ValueError("tau must be > 0")
            if self.lambda_1 <= 0 and not math.isinf(self.tau):
                raise ValueError("a finite ramp needs lambda_1 > 0")
        if self.kind == "spikes" and self.spike_period <= 0:
            raise ValueError("spike_period must be > 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(d["tau"]):
            d["tau"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        d = dict(d)
        if d.get("tau") == "inf":
            d["tau"] = math.inf
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def mean_rate(self) -> float:
        """Expected arrivals per second averaged over the whole duration."""
        return expected_count(self) / self.duration


@dataclass
class Trace:
    arrival_us: np.ndarray
    deadline_us: np.ndarray
    duration_us: int
    spec: dict | None = None

    def __post_init__(self):
        self.arrival_us = np.ascontiguousarray(self.arrival_us, dtype=np.int64)
        self.deadline_us = np.ascontiguousarray(self.deadline_us, dtype=np.int64)
        if self.arrival_us.shape != self.deadline_us.shape:
            raise ValueError("arrival and deadline arrays differ in length")
        if len(self.arrival_us) and np.any(np.diff(self.arrival_us) < 0):
            raise ValueError("arrivals must be non-decreasing")
        if np.any(self.deadline_us <= self.arrival_us):
            raise ValueError("every deadline must follow its arrival")

    def __len__(self) -> int:
        return len(self.arrival_us)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    @classmethod
    def from_arrivals(cls, arrival_us, slo_us: int, duration_us: int | None = None, spec=None):
        arr = np.asarray(arrival_us, dtype=np.int64)
        if duration_us is None:
            duration_us = int(arr[-1]) + 1 if len(arr) else 0
        return cls(arr, arr + int(slo_us), int(duration_us), spec)

    def slice_time(self, start_us: int, end_us: int) -> "Trace":
        m = (self.arrival_us >= start_us) & (self.arrival_us < end_us)
        return Trace(
            self.arrival_us[m] - start_us, self.deadline_us[m] - start_us, end_us - start_us
        )


def concat_traces(*traces: Trace) -> Trace:
    """Merge traces (e.g. different SLOs) into one arrival-ordered trace."""
    arr = np.concatenate([t.arrival_us for t in traces])
    dl = np.concatenate([t.deadline_us for t in traces])
    order = np.argsort(arr, kind="stable")
    return Trace(arr[order], dl[order], max(t.duration_us for t in traces))


def gamma_interarrivals(rng: np.random.Generator, rate: float, cv2: float, n: int) -> np.ndarray:
    """`n` inter-arrival gaps in seconds with mean 1/rate and squared CV cv2."""
    if cv2 == 0:
        return np.full(n, 1.0 / rate)
    shape = 1.0 / cv2
    return rng.gamma(shape, 1.0 / (rate * shape), size=n)


def _deterministic(rate: float, start: float, end: float) -> np.ndarray:
    if rate <= 0 or end <= start:
        return np.empty(0)
    n = math.ceil((end - start) * rate - 1e-9)
    return start + np.arange(n) / rate


def _gamma_stream(rng, rate: float, cv2: float, start: float, end: float) -> np.ndarray:
    """Renewal arrivals in [start, end); the first gap is drawn like the rest."""
    if rate <= 0 or end <= start:
        return np.empty(0)
    expected = (end - start) * rate
    chunk = int(expected * 1.1 + 10 * math.sqrt(expected * max(cv2, 1.0)) + 16)
    out, t0 = [], start
    while True:
        times = t0 + np.cumsum(gamma_interarrivals(rng, rate, cv2, chunk))
        cut = np.searchsorted(times, end)
        out.append(times[:cut])
        if cut < chunk:
            break
        t0 = times[-1]
    return np.concatenate(out)


def _to_us(times_s: np.ndarray) -> np.ndarray:
    # the epsilon keeps exact grid points like 3/4000 s from flooring to 749 us
    return np.floor(times_s * US + 1e-6).astype(np.int64)


def variant_arrivals(spec: TraceSpec) -> np.ndarray:
    """The gamma stream of a bursty trace alone (seconds), as used by gen_bursty."""
    rng = np.random.default_rng(spec.seed)
    return _gamma_stream(rng, spec.lambda_v, spec.cv2, 0.0, spec.duration)


def _finish(times_us: np.ndarray, spec: TraceSpec) -> Trace:
    duration_us = int(round(spec.duration * US))
    times_us = np.sort(times_us, kind="stable")
    # accumulated float gaps can land exactly on the end after rounding
    times_us = times_us[times_us < duration_us]
    return Trace.from_arrivals(times_us, spec.slo_us, duration_us, spec.to_dict())


def gen_bursty(spec: TraceSpec) -> Trace:
    if spec.kind != "bursty":
        raise ValueError("gen_bursty needs kind='bursty'")
    base = _deterministic(spec.lambda_b, 0.0, spec.duration)
    var = variant_arrivals(spec)
    return _finish(np.concatenate([_to_us(base), _to_us(var)]), spec)


def ramp_rate(spec: TraceSpec, t: float) -> float:
    if math.isinf(spec.tau):
        return spec.lambda_2
    return min(spec.lambda_2, spec.lambda_1 + spec.tau * t)


def gen_time_varying(spec: TraceSpec) -> Trace:
    """Each gap is drawn with the mean rate at the previous arrival time."""
    if spec.kind != "time_varying":
        raise ValueError("gen_time_varying needs kind='time_varying'")
    rng = np.random.default_rng(spec.seed)
    shape = 1.0 / spec.cv2 if spec.cv2 > 0 else 0.0
    out: list[float] = []
    t = 0.0
    chunk = 65536
    while True:
        unit = rng.gamma(shape, 1.0 / shape, size=chunk) if shape else np.ones(chunk)
        for u in unit.tolist():
            rate = ramp_rate(spec, t)
            if rate <= 0:
                return _finish(_to_us(np.asarray(out)), spec)
            t += u / rate
            if t >= spec.duration:
                return _finish(_to_us(np.asarray(out)), spec)
            out.append(t)


def spike_windows(spec: TraceSpec) -> list[tuple[float, float]]:
    """Spike intervals: 1 s long, centred in each period."""
    windows = []
    k = 0
    while True:
        start = k * spec.spike_period + max(spec.spike_period - 1.0, 0.0) / 2
        if start >= spec.duration:
            return windows
        windows.append((start, min(start + 1.0, spec.duration)))
        k += 1


def gen_spikes(spec: TraceSpec) -> Trace:
    if spec.kind != "spikes":
        raise ValueError("gen_spikes needs kind='spikes'")
    rng = np.random.default_rng(spec.seed)
    parts = [_to_us(_deterministic(spec.lambda_b, 0.0, spec.duration))]
    extra = spec.spike_height - spec.lambda_b
    if extra > 0:
        for lo, hi in spike_windows(spec):
            parts.append(_to_us(_gamma_stream(rng, extra, spec.cv2, lo, hi)))
    return _finish(np.concatenate(parts), spec)


def generate(spec: TraceSpec) -> Trace:
    return {"bursty": gen_bursty, "time_varying": gen_time_varying, "spikes": gen_spikes}[
        spec.kind
    ](spec)


def expected_count(spec: TraceSpec) -> float:
    """Integral of the mean arrival rate over the trace duration."""
    T = spec.duration
    if spec.kind == "bursty":
        return (spec.lambda_b + spec.lambda_v) * T
    if spec.kind == "spikes":
        extra = max(spec.spike_height - spec.lambda_b, 0.0)
        return spec.lambda_b * T + extra * sum(hi - lo for lo, hi in spike_windows(spec))
    if math.isinf(spec.tau):
        return spec.lambda_2 * T
    t_ramp = min((spec.lambda_2 - spec.lambda_1) / spec.tau, T)
    ramp = spec.lambda_1 * t_ramp + 0.5 * spec.tau * t_ramp**2
    return ramp + spec.lambda_2 * (T - t_ramp)


def dump_trace(trace: Trace, fh: TextIO) -> None:
    """JSON lines: a header object, then one object per query."""
    header = {"trace": trace.spec or {}, "duration_us": trace.duration_us, "count": len(trace)}
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    fh.writelines(
        f'{{"id":{i},"arrival_us":{a},"deadline_us":{d}}}\n'
        for i, (a, d) in enumerate(zip(trace.arrival_us.tolist(), trace.deadline_us.tolist()))
    )


def write_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as fh:
        dump_trace(trace, fh)


def read_trace(path: str | Path) -> Trace:
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise ValueError(f"{path}: empty trace file")
        header = json.loads(first)
        if "arrival_us" in header:
            # headerless file
            records, header = [header], {}
        else:
            records = []
        records.extend(json.loads(line) for line in fh if line.strip())
    records.sort(key=lambda r: (r["arrival_us"], r["id"]))
    ids = [r["id"] for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate query ids")
    arr = np.array([r["arrival_us"] for r in records], dtype=np.int64)
    dl = np.array([r["deadline_us"] for r in records], dtype=np.int64)
    duration = header.get("duration_us", int(arr[-1]) + 1 if len(arr) else 0)
    return Trace(arr, dl, duration, header.get("trace"))
