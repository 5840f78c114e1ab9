"""Pure-Python event loop.  Must stay step-for-step identical to _kernel.pyx."""
import heapq
from bisect import bisect_right

import numpy as np

HIT, MISS, DROPPED = 0, 1, 2


def simulate(
    arrival,
    deadline,
    thr,
    dec_batch,
    dec_subnet,
    depth_class,
    count_lat,
    n_workers,
    actuation_delay,
    overhead,
    fault_t,
    fault_w,
    sample_period,
    n_samples,
):
    arrival = arrival.tolist()
    deadline = deadline.tolist()
    thr_l = thr.tolist()
    dec_batch = dec_batch.tolist()
    dec_subnet = dec_subnet.tolist()
    depth_class = depth_class.tolist()
    count_lat = count_lat.tolist()
    fault_t = fault_t.tolist()
    fault_w = fault_w.tolist()
    n = len(arrival)
    n_faults = len(fault_t)
    max_depth_idx = len(depth_class) - 1

    status = [DROPPED] * n
    completion = [-1] * n
    batch_of = [-1] * n
    members: list[int] = []
    b_off = [0]
    b_start: list[int] = []
    b_end: list[int] = []
    b_worker: list[int] = []
    b_subnet: list[int] = []
    b_decided: list[int] = []
    q_samples = [0] * n_samples
    w_samples = [0] * n_samples

    queue: list[tuple[int, int]] = []
    inflight: list[tuple[int, int, int]] = []
    busy = [False] * n_workers
    alive = [True] * n_workers
    kill_pending = [False] * n_workers
    current = [-1] * n_workers
    n_alive = n_workers
    ai = fi = si = 0
    drops = misses = 0
    max_backlog = 0

    while True:
        t = None
        if ai < n:
            t = arrival[ai]
        if fi < n_faults and (t is None or fault_t[fi] < t):
            t = fault_t[fi]
        if inflight and (t is None or inflight[0][0] < t):
            t = inflight[0][0]
        if t is None:
            break
        while si < n_samples and si * sample_period < t:
            q_samples[si] = len(queue)
            w_samples[si] = n_alive
            si += 1

        while fi < n_faults and fault_t[fi] == t:
            w = fault_w[fi]
            fi += 1
            if not alive[w] or kill_pending[w]:
                continue
            if busy[w]:
                kill_pending[w] = True
            else:
                alive[w] = False
                n_alive -= 1
        while ai < n and arrival[ai] == t:
            heapq.heappush(queue, (deadline[ai], ai))
            ai += 1
        while inflight and inflight[0][0] == t:
            _, w, b = heapq.heappop(inflight)
            for k in range(b_off[b], b_off[b + 1]):
                q = members[k]
                if t <= deadline[q]:
                    status[q] = HIT
                else:
                    status[q] = MISS
                    misses += 1
            busy[w] = False
            if kill_pending[w]:
                kill_pending[w] = False
                alive[w] = False
                n_alive -= 1

        while queue:
            w = -1
            for j in range(n_workers):
                if alive[j] and not busy[j]:
                    w = j
                    break
            if w < 0:
                break
            while queue:
                theta = queue[0][0] - t - overhead
                i = bisect_right(thr_l, theta) - 1
                depth = len(queue)
                c = depth_class[depth if depth < max_depth_idx else max_depth_idx]
                s = dec_subnet[c][i]
                if s >= 0:
                    break
                _, q = heapq.heappop(queue)
                completion[q] = t
                drops += 1
            if not queue:
                break
            decided = dec_batch[c][i]
            count = decided if decided < len(queue) else len(queue)
            end = t + count_lat[s][count]
            if current[w] >= 0 and current[w] != s:
                end += actuation_delay
            b = len(b_start)
            for _ in range(count):
                _, q = heapq.heappop(queue)
                members.append(q)
                batch_of[q] = b
                completion[q] = end
            b_off.append(len(members))
            b_start.append(t)
            b_end.append(end)
            b_worker.append(w)
            b_subnet.append(s)
            b_decided.append(decided)
            busy[w] = True
            current[w] = s
            heapq.heappush(inflight, (end, w, b))

        backlog = len(queue) + drops + misses
        if backlog > max_backlog:
            max_backlog = backlog

    while si < n_samples:
        q_samples[si] = len(queue)
        w_samples[si] = n_alive
        si += 1
    # queries stranded with no live worker count as dropped
    while queue:
        _, q = heapq.heappop(queue)
        completion[q] = t

    i64 = np.int64
    return {
        "status": np.array(status, dtype=np.int8),
        "completion": np.array(completion, dtype=i64),
        "batch_of": np.array(batch_of, dtype=i64),
        "b_start": np.array(b_start, dtype=i64),
        "b_end": np.array(b_end, dtype=i64),
        "b_worker": np.array(b_worker, dtype=i64),
        "b_subnet": np.array(b_subnet, dtype=i64),
        "b_decided": np.array(b_decided, dtype=i64),
        "b_off": np.array(b_off, dtype=i64),
        "members": np.array(members, dtype=i64),
        "q_samples": np.array(q_samples, dtype=i64),
        "w_samples": np.array(w_samples, dtype=i64),
        "max_backlog": int(max_backlog),
    }
