"""Scheduling policies: map (slack, queue depth) to a (batch size, subnet) choice.

Every policy only returns choices whose profiled latency is strictly below
the slack.  ``None`` means no choice fits and the most urgent query must be
dropped.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .profile import DEFAULT_BUCKET_COUNT, BucketTable, Catalog, build_buckets, pareto_filter

POLICY_NAMES = ("slackfit", "maxbatch", "maxacc", "fixed", "minacc")


@dataclass(frozen=True)
class PolicyKind:
    name: str
    subnet_id: str | None = None

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}")
        if (self.name == "fixed") != (self.subnet_id is not None):
            raise ValueError("only the fixed policy takes a subnet id")

    def __str__(self) -> str:
        return f"fixed:{self.subnet_id}" if self.name == "fixed" else self.name


def parse_policy(text: str) -> PolicyKind:
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "fixed":
        if not arg:
            raise ValueError("fixed policy needs a subnet id, e.g. fixed:s3")
        return PolicyKind("fixed", arg)
    if arg:
        raise ValueError(f"policy {name!r} takes no argument")
    return PolicyKind(name)


@dataclass(frozen=True)
class Decision:
    batch_size: int
    subnet_id: str
    predicted_latency_us: int


class Counter:
    """Counts key comparisons made by binary searches."""

    def __init__(self):
        self.n = 0

    def reset(self):
        self.n = 0


def _last_below(values, theta, counter: Counter | None) -> int:
    """Index of the last element < theta in an increasing sequence, or -1."""
    lo, hi = 0, len(values)
    while lo < hi:
        mid = (lo + hi) // 2
        if counter is not None:
            counter.n += 1
        if values[mid] < theta:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


class Policy:
    """A policy bound to a catalog.  Construction does all precomputation."""

    def __init__(self, kind: PolicyKind, catalog: Catalog, bucket_count: int = DEFAULT_BUCKET_COUNT):
        self.kind = kind
        self.bucket_count = bucket_count
        self.counter = Counter()
        if kind.name in ("slackfit", "maxbatch", "maxacc") and not catalog.pareto:
            catalog = pareto_filter(catalog)
            if not catalog.pareto:
                raise ValueError(f"{kind} needs a catalog whose pareto subset is latency-ordered")
        self.catalog = catalog
        self.ranked = catalog.by_accuracy()
        self._acc = {s.id: s.accuracy for s in catalog}
        self._lat = {(b, s.id): l for s in catalog for b, l in s.latency_profile.items()}
        self.buckets: BucketTable | None = None
        if kind.name == "slackfit":
            self.buckets = build_buckets(catalog, bucket_count)
        if kind.name in ("maxbatch", "maxacc"):
            sizes = {s.batch_sizes for s in self.ranked}
            if len(sizes) != 1:
                raise ValueError(f"{kind} needs every subnet profiled at the same batch sizes")
            self.sizes = self.ranked[0].batch_sizes
            # lat[i][j]: subnet rank i, batch index j
            self.lat = [[s.latency(b) for b in self.sizes] for s in self.ranked]
        if kind.name == "fixed":
            self.fixed = catalog.get(kind.subnet_id)
        elif kind.name == "minacc":
            self.fixed = self.ranked[0]
        if kind.name in ("fixed", "minacc"):
            self.fixed_sizes = self.fixed.batch_sizes
            self.fixed_lat = [self.fixed.latency(b) for b in self.fixed_sizes]

    @property
    def min_feasible_latency(self) -> int:
        """Slack below which the policy can never serve the front query."""
        if self.kind.name in ("fixed", "minacc"):
            return self.fixed_lat[0]
        return self.catalog.min_latency()

    def decide(self, theta: int, queue_depth: int | None = None) -> Decision | None:
        name = self.kind.name
        if name == "slackfit":
            return self._slackfit(theta, queue_depth)
        if name == "maxbatch":
            return self._maxbatch(theta)
        if name == "maxacc":
            return self._maxacc(theta)
        return self._fixed(theta)

    def _pick(self, entries, theta, depth):
        best, best_key = None, None
        for b, sid in entries:
            lat = self._lat[b, sid]
            if lat >= theta:
                continue
            # rank by queries actually served; equal counts prefer accuracy
            eff = b if depth is None else min(b, depth)
            key = (eff, self._acc[sid], -b)
            if best_key is None or key > best_key:
                best, best_key = Decision(b, sid, lat), key
        return best

    def _slackfit(self, theta, depth):
        table = self.buckets
        if theta <= table.lo:
            return None
        top = -1
        for k in range(table.count - 1, -1, -1):
            if table.upper_reached(k, theta):
                top = k
                break
        for k in range(top, -1, -1):
            d = self._pick(table.buckets[k].entries, theta, depth)
            if d is not None:
                return d
        # slack falls inside a bucket with no fully-feasible bucket below it
        kc = table.index_for(theta)
        if kc > top:
            return self._pick(table.buckets[kc].entries, theta, depth)
        return None

    def _maxbatch(self, theta):
        c = self.counter
        j = _last_below(self.lat[0], theta, c)
        if j < 0:
            return None
        col = [row[j] for row in self.lat]
        i = _last_below(col, theta, c)
        return Decision(self.sizes[j], self.ranked[i].id, self.lat[i][j])

    def _maxacc(self, theta):
        c = self.counter
        i = _last_below([row[0] for row in self.lat], theta, c)
        if i < 0:
            return None
        j = _last_below(self.lat[i], theta, c)
        return Decision(self.sizes[j], self.ranked[i].id, self.lat[i][j])

    def _fixed(self, theta):
        j = _last_below(self.fixed_lat, theta, None)
        if j < 0:
            return None
        return Decision(self.fixed_sizes[j], self.fixed.id, self.fixed_lat[j])


def decide(
    kind: PolicyKind,
    theta: int,
    queue_depth: int | None,
    buckets: BucketTable | None,
    catalog: Catalog,
) -> Decision | None:
    """One-shot decision.  Prefer a long-lived :class:`Policy` in loops."""
    count = buckets.count if buckets is not None else DEFAULT_BUCKET_COUNT
    return Policy(kind, catalog, count).decide(theta, queue_depth)


def dispatch_latency(catalog: Catalog, decision: Decision, queue_depth: int) -> tuple[int, int]:
    """Clamp a decision to the queue and return (count, latency_us)."""
    count = min(decision.batch_size, queue_depth)
    return count, catalog.get(decision.subnet_id).latency_for_count(count)


@dataclass
class DecisionTable:
    """A policy flattened into a step function of slack, per queue-depth class.

    For ``thr[i] <= theta < thr[i+1]`` and depth class ``c`` the decision is
    ``(batch[c, i], subnet[c, i])``; subnet ``-1`` means drop.  Depth ``d``
    maps to class ``depth_class[min(d, len(depth_class) - 1)]``.
    """

    thr: np.ndarray
    batch: np.ndarray
    subnet: np.ndarray
    depth_class: np.ndarray

    def lookup(self, theta: int, depth: int) -> tuple[int, int]:
        i = int(np.searchsorted(self.thr, theta, side="right")) - 1
        c = self.depth_class[min(depth, len(self.depth_class) - 1)]
        return int(self.batch[c, i]), int(self.subnet[c, i])


def compile_table(policy: Policy, catalog: Catalog) -> DecisionTable:
    """Evaluate the policy at every slack where any of its comparisons flips.

    Subnet indices refer to positions in `catalog` (the simulator's catalog).
    """
    lats = {l for s in policy.catalog for l in s.latency_profile.values()}
    points = set(lats) | {l + 1 for l in lats}
    table = policy.buckets
    if table is not None and table.hi > table.lo:
        span = table.hi - table.lo
        for k in range(table.count + 1):
            points.add(table.lo + -(-k * span // table.count))
    thr = sorted(points)
    thr.insert(0, min(thr) - 1)
    sizes = catalog.batch_sizes
    reps = list(sizes)
    depth_class = np.zeros(sizes[-1] + 2, dtype=np.int32)
    for d in range(1, len(depth_class)):
        depth_class[d] = min(bisect.bisect_left(sizes, d), len(sizes) - 1)
    batch = np.zeros((len(reps), len(thr)), dtype=np.int32)
    subnet = np.full((len(reps), len(thr)), -1, dtype=np.int32)
    for c, rep in enumerate(reps):
        depth = rep if policy.kind.name == "slackfit" else None
        for i, t in enumerate(thr):
            d = policy.decide(t, depth)
            if d is not None:
                batch[c, i] = d.batch_size
                subnet[c, i] = catalog.index(d.subnet_id)
    thr_arr = np.array(thr, dtype=np.int64)
    thr_arr[0] = np.iinfo(np.int64).min // 4
    return DecisionTable(thr_arr, batch, subnet, depth_class)
