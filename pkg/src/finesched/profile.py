"""Subnet catalog, latency profiles, pareto filtering and latency buckets.

A catalog is a set of subnets, each with a fixed accuracy and a latency
profile over power-of-two batch sizes.  All latencies are integer
microseconds.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_BATCH_SIZES = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_BUCKET_COUNT = 20

# Six accuracy points spanning the supernet's range, and per-subnet base cost (ms).
DEFAULT_ACCURACIES = (73.82, 76.69, 77.64, 78.25, 79.44, 80.16)
DEFAULT_BASE_MS = (3.0, 4.0, 5.0, 7.0, 9.0, 12.0)
DEFAULT_BATCH_COEF = 0.15

PROFILE_HEADER = ("subnet_id", "accuracy", "gflops", "batch", "latency_us")


class ProfileError(ValueError):
    """Raised for malformed or inconsistent latency profiles."""


@dataclass(frozen=True)
class SubnetConfig:
    depth_flags: tuple[bool, ...]
    expand_ratios: tuple[float, ...]
    width_multipliers: tuple[float, ...]

    def __post_init__(self):
        if not (self.depth_flags and self.expand_ratios and self.width_multipliers):
            raise ProfileError("subnet config lists must be non-empty")
        if any(r <= 0 for r in self.expand_ratios):
            raise ProfileError("expand ratios must be positive")
        if any(not 0 < w <= 1 for w in self.width_multipliers):
            raise ProfileError("width multipliers must lie in (0, 1]")

    @property
    def mean_width(self) -> float:
        return sum(self.width_multipliers) / len(self.width_multipliers)


@dataclass(frozen=True)
class SubnetRecord:
    id: str
    accuracy: float
    latency_profile: Mapping[int, int]
    flops: float | None = None
    config: SubnetConfig | None = None

    def __post_init__(self):
        if not 0 <= self.accuracy <= 100:
            raise ProfileError(f"subnet {self.id}: accuracy {self.accuracy} outside [0, 100]")
        if not self.latency_profile:
            raise ProfileError(f"subnet {self.id}: empty latency profile")
        prof = dict(sorted((int(b), int(l)) for b, l in self.latency_profile.items()))
        object.__setattr__(self, "latency_profile", prof)
        prev_b, prev_l = None, None
        for b, l in prof.items():
            if b <= 0:
                raise ProfileError(f"subnet {self.id}: batch size {b} must be positive")
            if l <= 0:
                raise ProfileError(f"subnet {self.id}: latency at batch {b} must be positive")
            if prev_l is not None and l <= prev_l:
                raise ProfileError(
                    f"subnet {self.id}: latency not increasing in batch size "
                    f"(l({prev_b})={prev_l} >= l({b})={l})"
                )
            prev_b, prev_l = b, l

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(self.latency_profile)

    def latency(self, batch: int) -> int:
        return self.latency_profile[batch]

    def latency_for_count(self, count: int) -> int:
        """Latency of serving `count` queries: smallest profiled batch >= count."""
        for b, l in self.latency_profile.items():
            if b >= count:
                return l
        raise ProfileError(f"subnet {self.id}: no profiled batch >= {count}")


@dataclass(frozen=True)
class Catalog:
    subnets: tuple[SubnetRecord, ...]
    pareto: bool = False

    def __post_init__(self):
        subnets = tuple(self.subnets)
        object.__setattr__(self, "subnets", subnets)
        ids = [s.id for s in subnets]
        if len(set(ids)) != len(ids):
            raise ProfileError("duplicate subnet ids in catalog")
        if self.pareto:
            check_pareto_order(subnets)

    def __len__(self) -> int:
        return len(self.subnets)

    def __iter__(self):
        return iter(self.subnets)

    @property
    def max_batch(self) -> int:
        return max(max(s.batch_sizes) for s in self.subnets)

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return tuple(sorted({b for s in self.subnets for b in s.batch_sizes}))

    def get(self, subnet_id: str) -> SubnetRecord:
        for s in self.subnets:
            if s.id == subnet_id:
                return s
        raise KeyError(subnet_id)

    def index(self, subnet_id: str) -> int:
        for i, s in enumerate(self.subnets):
            if s.id == subnet_id:
                return i
        raise KeyError(subnet_id)

    def by_accuracy(self) -> list[SubnetRecord]:
        return sorted(self.subnets, key=lambda s: (s.accuracy, s.id))

    def min_latency(self) -> int:
        return min(min(s.latency_profile.values()) for s in self.subnets)

    def max_latency(self) -> int:
        return max(max(s.latency_profile.values()) for s in self.subnets)

    def subset(self, ids: Iterable[str], pareto: bool | None = None) -> "Catalog":
        keep = set(ids)
        subs = tuple(s for s in self.subnets if s.id in keep)
        return Catalog(subs, pareto=self.pareto if pareto is None else pareto)


def check_pareto_order(subnets: Sequence[SubnetRecord]) -> None:
    """Latency must strictly increase with accuracy rank at every common batch size."""
    ranked = sorted(subnets, key=lambda s: (s.accuracy, s.id))
    for lo, hi in zip(ranked, ranked[1:]):
        if hi.accuracy <= lo.accuracy:
            raise ProfileError(f"pareto catalog has equal accuracy for {lo.id} and {hi.id}")
        for b in set(lo.batch_sizes) & set(hi.batch_sizes):
            if hi.latency(b) <= lo.latency(b):
                raise ProfileError(
                    f"pareto order violated at batch {b}: {hi.id} (acc {hi.accuracy}) "
                    f"not slower than {lo.id} (acc {lo.accuracy})"
                )


def default_catalog(batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES) -> Catalog:
    """Synthetic six-subnet profile with l(B) = c * (1 + 0.15 B) ms."""
    subnets = []
    for i, (acc, base) in enumerate(zip(DEFAULT_ACCURACIES, DEFAULT_BASE_MS)):
        prof = {b: round(base * (1 + DEFAULT_BATCH_COEF * b) * 1000) for b in batch_sizes}
        width = 0.4 + 0.1 * i
        cfg = SubnetConfig(
            depth_flags=tuple(j <= i for j in range(5)),
            expand_ratios=(3.0 + 0.5 * i,) * 4,
            width_multipliers=(width,) * 4,
        )
        subnets.append(
            SubnetRecord(f"s{i}", acc, prof, flops=round(0.9 + 1.3 * i, 2), config=cfg)
        )
    return Catalog(tuple(subnets), pareto=True)


def load_catalog(path: str | Path, pareto: bool | None = None) -> Catalog:
    """Parse a profile CSV.  `pareto=None` flags it pareto when the order holds."""
    rows: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ProfileError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != PROFILE_HEADER:
            raise ProfileError(f"{path}:1: expected header {','.join(PROFILE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PROFILE_HEADER):
                raise ProfileError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            sid = row[0].strip()
            try:
                acc = float(row[1])
                gflops = float(row[2]) if row[2].strip() else None
                batch = int(row[3])
                lat = int(round(float(row[4])))
            except ValueError as exc:
                raise ProfileError(f"{path}:{lineno}: {exc}") from None
            rec = rows.get(sid)
            if rec is None:
                rec = rows[sid] = {"accuracy": acc, "gflops": gflops, "prof": {}}
                order.append(sid)
            elif rec["accuracy"] != acc:
                raise ProfileError(f"{path}:{lineno}: accuracy of {sid} changes between rows")
            if batch in rec["prof"]:
                raise ProfileError(f"{path}:{lineno}: duplicate batch {batch} for {sid}")
            rec["prof"][batch] = lat
    subnets = tuple(
        SubnetRecord(sid, rows[sid]["accuracy"], rows[sid]["prof"], flops=rows[sid]["gflops"])
        for sid in order
    )
    if not subnets:
        raise ProfileError(f"{path}: no profile rows")
    if pareto is None:
        try:
            check_pareto_order(subnets)
            pareto = True
        except ProfileError:
            pareto = False
    return Catalog(subnets, pareto=pareto)


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for s in catalog:
            for b, l in s.latency_profile.items():
                w.writerow([s.id, s.accuracy, "" if s.flops is None else s.flops, b, l])


def _dominates(a: SubnetRecord, b: SubnetRecord) -> bool:
    la, lb = a.latency(min(a.batch_sizes)), b.latency(min(b.batch_sizes))
    return a.accuracy >= b.accuracy and la <= lb and (a.accuracy > b.accuracy or la < lb)


def pareto_filter(catalog: Catalog) -> Catalog:
    """Keep subnets not dominated in (accuracy, batch-1 latency); sort by accuracy.

    Exact duplicates keep only the lexicographically smallest id.
    """
    subs = sorted(catalog.subnets, key=lambda s: s.id)
    keep = []
    for i, s in enumerate(subs):
        dominated = False
        for j, o in enumerate(subs):
            if i == j:
                continue
            if _dominates(o, s):
                dominated = True
                break
            same = o.accuracy == s.accuracy and o.latency(min(o.batch_sizes)) == s.latency(
                min(s.batch_sizes)
            )
            if same and j < i:
                dominated = True
                break
        if not dominated:
            keep.append(s)
    keep.sort(key=lambda s: (s.accuracy, s.id))
    try:
        check_pareto_order(keep)
        flag = True
    except ProfileError:
        # batch-1 dominance does not imply order at larger batches
        flag = False
    return Catalog(tuple(keep), pareto=flag)


@dataclass(frozen=True)
class Bucket:
    lo: float
    hi: float
    entries: tuple[tuple[int, str], ...]
    best: tuple[int, str] | None


@dataclass(frozen=True)
class BucketTable:
    lo: int
    hi: int
    count: int
    buckets: tuple[Bucket, ...] = ()

    @property
    def bucket_width(self) -> float:
        return (self.hi - self.lo) / self.count

    def __len__(self) -> int:
        return len(self.buckets)

    def index_for(self, latency: int) -> int:
        """Bucket index holding `latency`; the top bucket is closed on the right."""
        if self.hi == self.lo:
            return 0
        k = (latency - self.lo) * self.count // (self.hi - self.lo)
        return min(max(k, 0), self.count - 1)

    def upper_reached(self, k: int, theta: int) -> bool:
        """Exact test of `hi_k <= theta` without float rounding."""
        if k == self.count - 1:
            return theta >= self.hi
        return (theta - self.lo) * self.count >= (k + 1) * (self.hi - self.lo)

    def lower_reached(self, k: int, theta: int) -> bool:
        return (theta - self.lo) * self.count >= k * (self.hi - self.lo)

    def counts(self) -> list[int]:
        return [len(b.entries) for b in self.buckets]


def build_buckets(catalog: Catalog, bucket_count: int = DEFAULT_BUCKET_COUNT) -> BucketTable:
    if len(catalog) == 0:
        raise ProfileError("cannot build buckets over an empty catalog")
    if bucket_count < 1:
        raise ProfileError("bucket_count must be positive")
    acc = {s.id: s.accuracy for s in catalog}
    lo, hi = catalog.min_latency(), catalog.max_latency()
    if hi == lo:
        bucket_count = 1
    table = BucketTable(lo, hi, bucket_count)
    groups: list[list[tuple[int, str]]] = [[] for _ in range(bucket_count)]
    for s in catalog:
        for b, l in s.latency_profile.items():
            groups[table.index_for(l)].append((b, s.id))
    buckets = []
    for k, entries in enumerate(groups):
        entries.sort(key=lambda e: (catalog.get(e[1]).latency(e[0]), e[0], e[1]))
        best = max(entries, key=lambda e: (e[0], acc[e[1]]), default=None)
        b_lo = lo + k * table.bucket_width
        b_hi = hi if k == bucket_count - 1 else lo + (k + 1) * table.bucket_width
        buckets.append(Bucket(b_lo, b_hi, tuple(entries), best))
    return BucketTable(lo, hi, bucket_count, tuple(buckets))


@dataclass(frozen=True)
class MemorySpec:
    shared_weight_bytes: float
    per_subnet_stat_bytes: float
    subnet_count: int
    width_fractions: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.shared_weight_bytes < 0 or self.per_subnet_stat_bytes < 0 or self.subnet_count < 0:
            raise ValueError("memory spec values must be nonnegative")


def memory_footprint(spec: MemorySpec) -> dict:
    """Supernet footprint (shared layers plus per-subnet normalization stats)
    against the estimated cost of hosting every subnet as its own model.

    Standalone subnet size is approximated as shared bytes scaled by the
    subnet's mean width multiplier; without per-subnet widths, 1.0 is used.
    """
    k = spec.subnet_count
    stats = k * spec.per_subnet_stat_bytes
    supernet = spec.shared_weight_bytes + stats
    fracs = list(spec.width_fractions) or [1.0]
    fracs = [fracs[i % len(fracs)] for i in range(k)]
    individual = sum(spec.shared_weight_bytes * f for f in fracs)
    return {
        "supernet_bytes": supernet,
        "individual_bytes_estimate": individual,
        "stat_fraction": stats / supernet if supernet else 0.0,
    }


def load_memory_spec(path: str | Path) -> MemorySpec:
    """Read `key = value` (or `key: value`) lines; `#` starts a comment."""
    vals: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = (p.strip() for p in line.split(sep, 1))
        vals[k] = v
    try:
        widths = tuple(float(x) for x in vals["width_fractions"].split(",")) if "width_fractions" in vals else ()
        return MemorySpec(
            shared_weight_bytes=float(vals["shared_weight_bytes"]),
            per_subnet_stat_bytes=float(vals["per_subnet_stat_bytes"]),
            subnet_count=int(vals["subnet_count"]),
            width_fractions=widths,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc.args[0]}") from None


def sustainable_batch_rate(subnet: SubnetRecord) -> float:
    """Peak per-worker throughput (queries/s) of one subnet over its profile."""
    return max(b / (l / 1e6) for b, l in subnet.latency_profile.items())
