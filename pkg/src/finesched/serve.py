"""Live mode: the router, EDF queue and policy driving threaded mock workers.

Three kinds of threads talk only through message channels:

* a client replays the trace in wall-clock time and sends arrivals (and any
  scheduled kill signals) to the dispatcher;
* one dispatcher owns the EDF queue and the policy, and is the only thread
  that makes scheduling decisions;
* one thread per worker sleeps for the profiled latency of each batch it
  receives, then reports back.

The result is a SimReport with the same schema the simulator produces.
"""
from __future__ import annotations

import gc
import math
import queue as channel
import threading
import time
from dataclasses import dataclass

import numpy as np

from .metrics import DROPPED, HIT, MISS, SimReport
from .policy import Policy, dispatch_latency
from .queue import EdfQueue, Query
from .simcore import SimConfig, build_report
from .tracegen import Trace

DEFAULT_PACING_TOLERANCE_US = 20_000


@dataclass(frozen=True)
class _Arrive:
    query: Query


@dataclass(frozen=True)
class _Done:
    worker: int
    batch: int
    end_us: int


@dataclass(frozen=True)
class _Kill:
    worker: int


@dataclass(frozen=True)
class _ClientDone:
    pass


@dataclass(frozen=True)
class _Run:
    batch: int
    target_s: float


class Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def now_us(self) -> int:
        return int((time.perf_counter() - self.t0) * 1e6)

    def sleep_until(self, t_us: float) -> None:
        delay = self.t0 + t_us / 1e6 - time.perf_counter()
        if delay > 0:
            time.sleep(delay)


class Server:
    """One live serving run.  Call :meth:`run` once."""

    def __init__(
        self,
        trace: Trace,
        config: SimConfig,
        pacing_tolerance_us: int = DEFAULT_PACING_TOLERANCE_US,
    ):
        self.trace = trace
        self.config = config
        self.policy = Policy(config.policy, config.catalog, config.bucket_count)
        self.pacing_tolerance_us = pacing_tolerance_us
        self.inbox: channel.Queue = channel.Queue()
        self.worker_inbox = [channel.Queue() for _ in range(config.worker_count)]
        self.clock: Clock | None = None
        self.max_lag_us = 0
        self.events: list[tuple] = []

    def kill_worker(self, worker: int) -> None:
        """Signal a worker to leave after its in-flight batch (if any)."""
        self.inbox.put(_Kill(worker))

    # -- threads -----------------------------------------------------------

    def _client(self) -> None:
        clock = self.clock
        timeline = [(t, 0, w) for t, w in self.config.fault_schedule]
        timeline += [(a, 1, i) for i, a in enumerate(self.trace.arrival_us.tolist())]
        timeline.sort()
        deadlines = self.trace.deadline_us.tolist()
        for t, kind, x in timeline:
            clock.sleep_until(t)
            lag = clock.now_us() - t
            if lag > self.max_lag_us:
                self.max_lag_us = lag
            if kind == 0:
                self.inbox.put(_Kill(x))
            else:
                self.inbox.put(_Arrive(Query(x, t, deadlines[x])))
        self.inbox.put(_ClientDone())

    def _worker(self, w: int) -> None:
        clock = self.clock
        inbox = self.worker_inbox[w]
        while True:
            msg = inbox.get()
            if msg is None:
                return
            clock.sleep_until(msg.target_s)
            self.inbox.put(_Done(w, msg.batch, clock.now_us()))

    def _dispatch(self) -> dict:
        cfg = self.config
        catalog = cfg.catalog
        clock = self.clock
        n = len(self.trace)
        nw = cfg.worker_count
        q = EdfQueue()
        status = np.full(n, DROPPED, dtype=np.int8)
        completion = np.full(n, -1, dtype=np.int64)
        batch_of = np.full(n, -1, dtype=np.int64)
        members: list[list[int]] = []
        b_start, b_end, b_worker, b_subnet, b_decided = [], [], [], [], []
        busy = [False] * nw
        alive = [True] * nw
        kill_pending = [False] * nw
        current = [-1] * nw
        drops = misses = max_backlog = 0
        state_log: list[tuple[int, int, int]] = [(0, 0, nw)]
        client_done = False
        events = self.events

        def handle(msg) -> None:
            nonlocal drops, misses, client_done
            now = clock.now_us()
            if isinstance(msg, _Arrive):
                q.enqueue(msg.query)
                events.append(("arrive", now, msg.query.id))
            elif isinstance(msg, _Done):
                b = msg.batch
                b_end[b] = msg.end_us
                for i in members[b]:
                    completion[i] = msg.end_us
                    if msg.end_us <= self.trace.deadline_us[i]:
                        status[i] = HIT
                    else:
                        status[i] = MISS
                        misses += 1
                busy[msg.worker] = False
                if kill_pending[msg.worker]:
                    kill_pending[msg.worker] = False
                    alive[msg.worker] = False
                events.append(("free", now, msg.worker))
            elif isinstance(msg, _Kill):
                w = msg.worker
                if alive[w] and not kill_pending[w]:
                    if busy[w]:
                        kill_pending[w] = True
                    else:
                        alive[w] = False
                events.append(("kill", now, w))
            elif isinstance(msg, _ClientDone):
                client_done = True

        while True:
            handle(self.inbox.get())
            while True:
                try:
                    handle(self.inbox.get_nowait())
                except channel.Empty:
                    break
            # scheduler runs only while a worker is idle and the queue is non-empty
            while q:
                idle = [w for w in range(nw) if alive[w] and not busy[w]]
                if not idle:
                    break
                w = idle[0]
                now = clock.now_us()
                theta = q.peek_slack(now) - cfg.dispatch_overhead_us
                d = self.policy.decide(theta, len(q))
                events.append(("decide", now, len(idle), len(q), theta, d))
                if d is None:
                    dropped = q.pop()
                    completion[dropped.id] = now
                    drops += 1
                    continue
                count, lat = dispatch_latency(catalog, d, len(q))
                s = catalog.index(d.subnet_id)
                if current[w] >= 0 and current[w] != s:
                    lat += cfg.actuation_delay_us
                batch = q.take_batch(count)
                b = len(b_start)
                members.append([x.id for x in batch.queries])
                for x in batch.queries:
                    batch_of[x.id] = b
                b_start.append(now)
                b_end.append(now + lat)
                b_worker.append(w)
                b_subnet.append(s)
                b_decided.append(d.batch_size)
                busy[w] = True
                current[w] = s
                self.worker_inbox[w].put(_Run(b, now + lat))
            max_backlog = max(max_backlog, len(q) + drops + misses)
            state_log.append((clock.now_us(), len(q), sum(alive)))
            if client_done and not any(busy) and (not q or not any(alive)):
                break

        end = clock.now_us()
        while q:
            completion[q.pop().id] = end
        for box in self.worker_inbox:
            box.put(None)

        offsets = np.zeros(len(members) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(m) for m in members])
        i64 = np.int64
        q_samples, w_samples = _sample_states(state_log, cfg.sample_period_us, self.trace)
        return {
            "status": status,
            "completion": completion,
            "batch_of": batch_of,
            "b_start": np.array(b_start, dtype=i64),
            "b_end": np.array(b_end, dtype=i64),
            "b_worker": np.array(b_worker, dtype=i64),
            "b_subnet": np.array(b_subnet, dtype=i64),
            "b_decided": np.array(b_decided, dtype=i64),
            "b_off": offsets,
            "members": np.array([i for m in members for i in m], dtype=i64),
            "q_samples": q_samples,
            "w_samples": w_samples,
            "max_backlog": int(max_backlog),
        }

    def run(self) -> SimReport:
        # a full collection over a large inherited heap can stall pacing for
        # tens of ms; move what exists now out of the collector's reach
        gc.collect()
        gc.freeze()
        try:
            return self._run()
        finally:
            gc.unfreeze()

    def _run(self) -> SimReport:
        self.clock = Clock()
        workers = [
            threading.Thread(target=self._worker, args=(w,), name=f"worker-{w}", daemon=True)
            for w in range(self.config.worker_count)
        ]
        client = threading.Thread(target=self._client, name="client", daemon=True)
        for t in workers:
            t.start()
        client.start()
        raw = self._dispatch()
        client.join()
        for t in workers:
            t.join()
        report = build_report(self.trace, self.config, raw, "live")
        report.events = self.events
        report.valid = self.max_lag_us <= self.pacing_tolerance_us
        report.config["max_pacing_lag_us"] = int(self.max_lag_us)
        return report


def _sample_states(log, period: int, trace: Trace) -> tuple[np.ndarray, np.ndarray]:
    """Queue depth and alive workers as last seen strictly before each sample."""
    n_samples = math.ceil(trace.duration_us / period) if trace.duration_us else 0
    times = np.array([e[0] for e in log], dtype=np.int64)
    grid = np.arange(n_samples, dtype=np.int64) * period
    idx = np.maximum(np.searchsorted(times, grid, side="left") - 1, 0)
    qd = np.array([e[1] for e in log], dtype=np.int64)[idx]
    wk = np.array([e[2] for e in log], dtype=np.int64)[idx]
    return qd, wk


def serve(
    trace: Trace, config: SimConfig, pacing_tolerance_us: int = DEFAULT_PACING_TOLERANCE_US
) -> SimReport:
    """Replay `trace` against live threaded workers in real time."""
    return Server(trace, config, pacing_tolerance_us).run()


def check_invocation_contract(events) -> list[str]:
    """Every decision needs an idle worker and a non-empty queue; times are ordered."""
    problems = []
    last = -1
    for e in events:
        if e[1] < last:
            problems.append(f"event out of order: {e}")
        last = e[1]
        if e[0] == "decide":
            _, _, idle, depth, _, _ = e
            if idle < 1 or depth < 1:
                problems.append(f"decision without idle worker and queued work: {e}")
    return problems
