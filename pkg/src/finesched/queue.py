"""Global earliest-deadline-first queue and batch formation."""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class Query:
    id: int
    arrival_us: int
    deadline_us: int

    def __post_init__(self):
        if self.deadline_us <= self.arrival_us:
            raise ValueError(f"query {self.id}: deadline must follow arrival")


@dataclass(frozen=True)
class Batch:
    queries: tuple[Query, ...]

    def __post_init__(self):
        if not self.queries:
            raise ValueError("a batch needs at least one query")

    @property
    def arrival_us(self) -> int:
        return min(q.arrival_us for q in self.queries)

    @property
    def deadline_us(self) -> int:
        return min(q.deadline_us for q in self.queries)

    def __len__(self) -> int:
        return len(self.queries)


class EmptyQueue(LookupError):
    pass


class EdfQueue:
    """Min-heap on deadline; FIFO among equal deadlines.

    Ids of every query ever enqueued are remembered, so a query can be
    batched at most once over the queue's lifetime.
    """

    def __init__(self):
        self._heap: list[tuple[int, int, Query]] = []
        self._seq = itertools.count()
        self._seen: set[int] = set()

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def enqueue(self, q: Query) -> None:
        if q.id in self._seen:
            raise ValueError(f"duplicate query id {q.id}")
        self._seen.add(q.id)
        heapq.heappush(self._heap, (q.deadline_us, next(self._seq), q))

    def peek(self) -> Query | None:
        return self._heap[0][2] if self._heap else None

    def peek_slack(self, now_us: int) -> int | None:
        """Remaining slack of the most urgent query, or None when empty."""
        if not self._heap:
            return None
        return self._heap[0][0] - now_us

    def pop(self) -> Query:
        if not self._heap:
            raise EmptyQueue("pop from empty EDF queue")
        return heapq.heappop(self._heap)[2]

    def take_batch(self, n: int) -> Batch:
        if not self._heap:
            raise EmptyQueue("take_batch on empty EDF queue")
        if n < 1:
            raise ValueError("batch size must be positive")
        k = min(n, len(self._heap))
        return Batch(tuple(heapq.heappop(self._heap)[2] for _ in range(k)))

    def drop_expired(self, now_us: int, min_feasible_latency_us: int) -> list[Query]:
        """Pop front queries whose slack is below the fastest feasible latency."""
        dropped = []
        while self._heap and self._heap[0][0] - now_us < min_feasible_latency_us:
            dropped.append(heapq.heappop(self._heap)[2])
        return dropped
