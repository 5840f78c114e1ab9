"""Exact offline scheduler for tiny instances, plus the batch utility function.

Time is discretised into slots.  A schedule is a set of assignments
(member set, start slot, worker, subnet); it is feasible when every query is
used at most once, a worker runs one batch at a time, a batch starts after
all its members arrived and finishes by the earliest member deadline and by
the horizon.  The objective is the sum of accuracy x batch size.

``solve_exact`` is a memoised search over (slot, unavailable queries, worker
free times).  ``check_schedule`` re-derives feasibility independently.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .metrics import HIT
from .policy import PolicyKind
from .profile import Catalog, SubnetRecord, pareto_filter

MAX_QUERIES = 8
MAX_WORKERS = 2
MAX_SUBNETS = 3
MAX_SLOTS = 12
ALLOWED_BATCHES = (1, 2, 4)
DEFAULT_SLOT_US = 1000
EPS = 1e-9


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class IlpQuery:
    arrival: int
    deadline: int


@dataclass(frozen=True)
class IlpInstance:
    """Latencies in `subnets` are whole slots; `slot_us` maps slots to time."""

    queries: tuple[IlpQuery, ...]
    subnets: tuple[SubnetRecord, ...]
    workers: int = 1
    horizon: int = MAX_SLOTS
    slot_us: int = DEFAULT_SLOT_US

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        object.__setattr__(self, "subnets", tuple(self.subnets))
        if len(self.queries) > MAX_QUERIES:
            raise InstanceTooLarge(f"{len(self.queries)} queries (max {MAX_QUERIES})")
        if not 1 <= self.workers <= MAX_WORKERS:
            raise InstanceTooLarge(f"{self.workers} workers (allowed 1..{MAX_WORKERS})")
        if not 1 <= len(self.subnets) <= MAX_SUBNETS:
            raise InstanceTooLarge(f"{len(self.subnets)} subnets (allowed 1..{MAX_SUBNETS})")
        if not 1 <= self.horizon <= MAX_SLOTS:
            raise InstanceTooLarge(f"horizon {self.horizon} (allowed 1..{MAX_SLOTS})")
        sizes = self.batch_sizes
        for s in self.subnets:
            if s.batch_sizes != sizes:
                raise ValueError("all subnets must share the same batch sizes")
        if not set(sizes) <= set(ALLOWED_BATCHES):
            raise InstanceTooLarge(f"batch sizes {sizes} not within {ALLOWED_BATCHES}")
        arrivals = [q.arrival for q in self.queries]
        if arrivals != sorted(arrivals):
            raise ValueError("queries must be ordered by arrival")
        for q in self.queries:
            if not 0 <= q.arrival < q.deadline <= self.horizon:
                raise ValueError(f"query {q} must satisfy 0 <= arrival < deadline <= horizon")

    @property
    def batch_sizes(self) -> tuple[int, ...]:
        return self.subnets[0].batch_sizes

    def latency(self, subnet: SubnetRecord, count: int) -> int:
        return subnet.latency_for_count(count)

    def catalog(self) -> Catalog:
        """The subnets with latencies converted to microseconds."""
        return Catalog(
            tuple(
                SubnetRecord(
                    s.id, s.accuracy, {b: l * self.slot_us for b, l in s.latency_profile.items()}
                )
                for s in self.subnets
            )
        )

    def to_dict(self) -> dict:
        return {
            "slot_us": self.slot_us,
            "horizon": self.horizon,
            "workers": self.workers,
            "queries": [{"arrival": q.arrival, "deadline": q.deadline} for q in self.queries],
            "subnets": [
                {
                    "id": s.id,
                    "accuracy": s.accuracy,
                    "latency": {str(b): l for b, l in s.latency_profile.items()},
                }
                for s in self.subnets
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IlpInstance":
        slot_us = int(d.get("slot_us", DEFAULT_SLOT_US))
        subnets = []
        for s in d["subnets"]:
            if "latency" in s:
                prof = {int(b): int(l) for b, l in s["latency"].items()}
            else:
                # microsecond latencies round up so feasibility stays conservative
                prof = {int(b): -(-int(l) // slot_us) for b, l in s["latency_us"].items()}
            subnets.append(SubnetRecord(str(s["id"]), float(s["accuracy"]), prof))
        queries = [IlpQuery(int(q["arrival"]), int(q["deadline"])) for q in d["queries"]]
        return cls(
            tuple(queries),
            tuple(subnets),
            workers=int(d.get("workers", 1)),
            horizon=int(d.get("horizon", MAX_SLOTS)),
            slot_us=slot_us,
        )


def load_instance(path: str | Path) -> IlpInstance:
    return IlpInstance.from_dict(json.loads(Path(path).read_text()))


def save_instance(inst: IlpInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(inst.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class Assignment:
    members: tuple[int, ...]
    start: int
    worker: int
    subnet_id: str


@dataclass(frozen=True)
class Schedule:
    assignments: tuple[Assignment, ...] = field(default=())
    objective: float = 0.0


def utility(subnet: SubnetRecord, batch_size: int, d_b: int, start_time: int = 0) -> float:
    """Acc x |B| when the batch finishes strictly before d_b, else 0."""
    if start_time + subnet.latency(batch_size) < d_b:
        return subnet.accuracy * batch_size
    return 0.0


def solve_exact(inst: IlpInstance) -> Schedule:
    n = len(inst.queries)
    if n == 0:
        return Schedule()
    T = inst.horizon
    bmax = max(inst.batch_sizes)
    arr = [q.arrival for q in inst.queries]
    dl = [q.deadline for q in inst.queries]
    min_l1 = min(inst.latency(s, 1) for s in inst.subnets)

    # options[t]: (mask, subnet index, duration, gain) that may start at slot t
    options: list[list[tuple[int, int, int, float]]] = [[] for _ in range(T)]
    for k in range(1, min(bmax, n) + 1):
        for members in itertools.combinations(range(n), k):
            mask = sum(1 << i for i in members)
            a = max(arr[i] for i in members)
            d = min(dl[i] for i in members)
            for si, s in enumerate(inst.subnets):
                dur = inst.latency(s, k)
                gain = s.accuracy * k
                for t in range(a, min(d, T) - dur + 1):
                    options[t].append((mask, si, dur, gain))
    # a query is dead at t once even the fastest single run cannot meet it
    dead = [sum(1 << i for i in range(n) if dl[i] < t + min_l1) for t in range(T + 1)]

    def key(t, gone, busy):
        if t >= T:
            return T, 0, ()
        return t, gone | dead[t], tuple(sorted(max(b, t) for b in busy))

    @lru_cache(maxsize=None)
    def best(t: int, gone: int, busy: tuple[int, ...]) -> tuple[float, tuple]:
        if t >= T:
            return 0.0, ()
        n_free = sum(1 for b in busy if b <= t)
        idle = best(*key(t + 1, gone, busy))[0]
        if n_free == 0:
            return idle, ()
        # ties go to the first combination found; idling must win strictly
        value, choice = -math.inf, ()
        opts = [o for o in options[t] if not o[0] & gone]
        for r in range(1, n_free + 1):
            for combo in itertools.combinations(range(len(opts)), r):
                picked = [opts[i] for i in combo]
                used = 0
                ok = True
                for o in picked:
                    if o[0] & used:
                        ok = False
                        break
                    used |= o[0]
                if not ok:
                    continue
                nb = list(busy)
                for j, o in enumerate(picked):
                    nb[j] = t + o[2]  # free slots sit at the front of the sorted tuple
                v = sum(o[3] for o in picked) + best(*key(t + 1, gone | used, nb))[0]
                if v > value + EPS:
                    value, choice = v, tuple(picked)
        if idle > value + EPS or not choice:
            return idle, ()
        return value, choice

    # replay the memoised choices, mapping picks onto concrete worker ids
    assignments = []
    gone, busy = 0, [0] * inst.workers
    for t in range(T):
        _, choice = best(*key(t, gone, busy))
        gone |= dead[t]
        free = [w for w in range(inst.workers) if busy[w] <= t]
        for w, (mask, si, dur, _) in zip(free, choice):
            members = tuple(i for i in range(n) if mask >> i & 1)
            assignments.append(Assignment(members, t, w, inst.subnets[si].id))
            busy[w] = t + dur
            gone |= mask
    objective = best(*key(0, 0, [0] * inst.workers))[0]
    best.cache_clear()
    return Schedule(tuple(assignments), objective)


def check_schedule(inst: IlpInstance, sched: Schedule) -> list[str]:
    """Independent feasibility check.  Returns a list of violations."""
    problems = []
    subnets = {s.id: s for s in inst.subnets}
    used: set[int] = set()
    intervals: dict[int, list[tuple[int, int]]] = {}
    total = 0.0
    for k, a in enumerate(sched.assignments):
        if not a.members:
            problems.append(f"assignment {k} is empty")
            continue
        if a.subnet_id not in subnets:
            problems.append(f"assignment {k} uses unknown subnet {a.subnet_id}")
            continue
        if not 0 <= a.worker < inst.workers:
            problems.append(f"assignment {k} uses unknown worker {a.worker}")
        if len(a.members) > max(inst.batch_sizes):
            problems.append(f"assignment {k} exceeds the largest batch size")
            continue
        for q in a.members:
            if q in used:
                problems.append(f"query {q} assigned twice")
            used.add(q)
        s = subnets[a.subnet_id]
        end = a.start + s.latency_for_count(len(a.members))
        qs = [inst.queries[q] for q in a.members]
        if a.start < 0:
            problems.append(f"assignment {k} starts before slot 0")
        if a.start < max(q.arrival for q in qs):
            problems.append(f"assignment {k} starts before a member arrives")
        if end > min(q.deadline for q in qs):
            problems.append(f"assignment {k} finishes after its earliest deadline")
        if end > inst.horizon:
            problems.append(f"assignment {k} runs past the horizon")
        intervals.setdefault(a.worker, []).append((a.start, end))
        total += s.accuracy * len(a.members)
    for w, iv in intervals.items():
        iv.sort()
        for (s0, e0), (s1, _) in zip(iv, iv[1:]):
            if s1 < e0:
                problems.append(f"worker {w} runs overlapping batches")
    if abs(total - sched.objective) > 1e-6:
        problems.append(f"objective {sched.objective} != recomputed {total}")
    return problems


def _instance_trace(inst: IlpInstance):
    from .tracegen import Trace

    arr = np.array([q.arrival for q in inst.queries], dtype=np.int64) * inst.slot_us
    dl = np.array([q.deadline for q in inst.queries], dtype=np.int64) * inst.slot_us
    return Trace(arr, dl, inst.horizon * inst.slot_us)


def policy_schedule(inst: IlpInstance, kind: PolicyKind) -> Schedule:
    """Run the online policy through the simulator; keep only hit queries.

    Every event time is a slot multiple, so the realised schedule maps back to
    slots exactly.  Trimming a batch to its hit members never lengthens it.
    """
    from .simcore import SimConfig, run

    catalog = inst.catalog()
    if kind.name in ("slackfit", "maxbatch", "maxacc") and not pareto_filter(catalog).pareto:
        raise ValueError(f"{kind} needs a pareto-ordered instance")
    report = run(_instance_trace(inst), SimConfig(catalog, kind, worker_count=inst.workers))
    b = report.batches
    out = []
    total = 0.0
    for k in range(len(b["start"])):
        mem = b["members"][b["offsets"][k] : b["offsets"][k + 1]]
        hit = tuple(sorted(int(q) for q in mem if report.status[q] == HIT))
        if not hit:
            continue
        s = catalog.subnets[int(b["subnet"][k])]
        start = int(b["start"][k])
        if start % inst.slot_us:
            raise AssertionError("simulator dispatched off the slot grid")
        out.append(Assignment(hit, start // inst.slot_us, int(b["worker"][k]), s.id))
        total += s.accuracy * len(hit)
    return Schedule(tuple(out), total)


def policy_vs_oracle(inst: IlpInstance, kind: PolicyKind) -> dict:
    pol = policy_schedule(inst, kind)
    opt = solve_exact(inst)
    problems = check_schedule(inst, pol)
    if problems:
        raise AssertionError(f"{kind} produced an infeasible schedule: {problems}")
    if pol.objective > opt.objective + 1e-6:
        raise AssertionError(f"{kind} objective {pol.objective} beats oracle {opt.objective}")
    return {
        "policy": str(kind),
        "policy_objective": pol.objective,
        "oracle_objective": opt.objective,
        "policy_schedule": [a.__dict__ for a in pol.assignments],
        "oracle_schedule": [a.__dict__ for a in opt.assignments],
    }


def random_instance(seed: int) -> IlpInstance:
    """A random instance within the size caps with a latency-ordered subnet set."""
    rng = np.random.default_rng(seed)
    T = MAX_SLOTS
    n_sub = int(rng.integers(1, MAX_SUBNETS + 1))
    sizes = (1, 2, 4) if rng.random() < 0.7 else (1, 2)
    accs = np.sort(rng.choice(np.arange(60, 86), size=n_sub, replace=False)) / 100
    subnets = []
    prev = [0] * len(sizes)
    for i, acc in enumerate(accs):
        prof, last = {}, 0
        for j, b in enumerate(sizes):
            l = max(last + 1, prev[j] + 1) + int(rng.integers(0, 2))
            prof[b] = l
            last = l
        prev = [prof[b] for b in sizes]
        subnets.append(SubnetRecord(f"s{i}", float(acc), prof))
    n_q = int(rng.integers(1, MAX_QUERIES + 1))
    arrivals = np.sort(rng.integers(0, T - 2, size=n_q))
    queries = []
    for a in arrivals.tolist():
        d = min(T, a + int(rng.integers(2, 8)))
        queries.append(IlpQuery(a, d))
    return IlpInstance(tuple(queries), tuple(subnets), workers=int(rng.integers(1, 3)), horizon=T)


def observation_b_instance() -> IlpInstance:
    """High load: four queries share a tight deadline on one worker."""
    low = SubnetRecord("low", 0.70, {1: 4, 2: 6, 4: 9})
    high = SubnetRecord("high", 0.80, {1: 5, 2: 8, 4: 12})
    queries = tuple(IlpQuery(0, 10) for _ in range(4))
    return IlpInstance(queries, (low, high), workers=1, horizon=12)


def observation_c_instance() -> IlpInstance:
    """Low load: three queries with room for two batches on one worker."""
    low = SubnetRecord("low", 0.70, {1: 1, 2: 2, 4: 3})
    mid = SubnetRecord("mid", 0.75, {1: 2, 2: 4, 4: 5})
    high = SubnetRecord("high", 0.80, {1: 3, 2: 5, 4: 7})
    queries = tuple(IlpQuery(0, 6) for _ in range(3))
    return IlpInstance(queries, (low, mid, high), workers=1, horizon=12)


def random_mixed_catalog(rng: np.random.Generator, n_subnets: int = 12) -> Catalog:
    """Random subnets, some dominated, sharing batch sizes 1..64."""
    sizes = (1, 2, 4, 8, 16, 32, 64)
    subs = []
    for i in range(n_subnets):
        base = float(rng.uniform(2_000, 12_000))
        coef = float(rng.uniform(0.05, 0.3))
        prof = {b: int(base * (1 + coef * b)) for b in sizes}
        subs.append(SubnetRecord(f"r{i}", float(rng.uniform(70, 81)), prof))
    return Catalog(tuple(subs))


def check_lemma1(catalog: Catalog, trials: int, epsilon_us: int, seed: int = 0) -> dict:
    """Pareto subnets never lose utility to a similar-latency dominated subnet.

    Pairs are (p pareto, q not pareto) with Acc(p) > Acc(q) and latencies at
    the sampled batch within `epsilon_us`.  "Similar latency" is read as the
    deadline not separating the two latencies; draws where it does are
    counted in ``separated`` and not judged.
    """
    rng = np.random.default_rng(seed)
    front = {s.id for s in pareto_filter(catalog)}
    par = [s for s in catalog if s.id in front]
    non = [s for s in catalog if s.id not in front]
    sizes = catalog.batch_sizes
    result = {"trials": 0, "violations": 0, "strict": 0, "separated": 0, "counterexample": None}
    if not par or not non:
        return result
    lo, hi = catalog.min_latency(), catalog.max_latency()
    attempts = 0
    while result["trials"] < trials and attempts < 100 * trials:
        attempts += 1
        b = int(sizes[rng.integers(len(sizes))])
        q = non[rng.integers(len(non))]
        cands = [
            p
            for p in par
            if p.accuracy > q.accuracy and abs(p.latency(b) - q.latency(b)) <= epsilon_us
        ]
        if not cands:
            continue
        p = cands[rng.integers(len(cands))]
        d = int(rng.integers(lo, 2 * hi))
        lp, lq = p.latency(b), q.latency(b)
        if (lp < d) != (lq < d):
            result["separated"] += 1
            continue
        result["trials"] += 1
        up, uq = utility(p, b, d), utility(q, b, d)
        both = lp < d and lq < d
        if up < uq or (both and not up > uq):
            result["violations"] += 1
            if result["counterexample"] is None:
                result["counterexample"] = {"p": p.id, "q": q.id, "batch": b, "d_b": d}
        elif both:
            result["strict"] += 1
    result["passed"] = result["violations"] == 0
    return result
