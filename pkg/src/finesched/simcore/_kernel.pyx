# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loop.  Must stay step-for-step identical to _kernel_py.py."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, int32_t, int8_t

cnp.import_array()

cdef enum:
    HIT = 0
    MISS = 1
    DROPPED = 2


cdef inline bint _less(int64_t da, int64_t ia, int64_t db, int64_t ib) nogil:
    return da < db or (da == db and ia < ib)


cdef inline void _push(int64_t[::1] hd, int64_t[::1] hi, Py_ssize_t* size,
                       int64_t d, int64_t i) nogil:
    cdef Py_ssize_t k = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while k > 0:
        parent = (k - 1) >> 1
        if _less(d, i, hd[parent], hi[parent]):
            hd[k] = hd[parent]
            hi[k] = hi[parent]
            k = parent
        else:
            break
    hd[k] = d
    hi[k] = i


cdef inline int64_t _pop(int64_t[::1] hd, int64_t[::1] hi, Py_ssize_t* size) nogil:
    cdef int64_t top = hi[0]
    cdef Py_ssize_t n = size[0] - 1
    cdef int64_t d = hd[n]
    cdef int64_t i = hi[n]
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t c
    size[0] = n
    if n == 0:
        return top
    while True:
        c = 2 * k + 1
        if c >= n:
            break
        if c + 1 < n and _less(hd[c + 1], hi[c + 1], hd[c], hi[c]):
            c += 1
        if _less(hd[c], hi[c], d, i):
            hd[k] = hd[c]
            hi[k] = hi[c]
            k = c
        else:
            break
    hd[k] = d
    hi[k] = i
    return top


cdef inline Py_ssize_t _bisect_right(int64_t[::1] a, int64_t x) nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = a.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if x < a[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def simulate(
    cnp.ndarray arrival_in,
    cnp.ndarray deadline_in,
    cnp.ndarray thr_in,
    cnp.ndarray dec_batch_in,
    cnp.ndarray dec_subnet_in,
    cnp.ndarray depth_class_in,
    cnp.ndarray count_lat_in,
    Py_ssize_t n_workers,
    int64_t actuation_delay,
    int64_t overhead,
    cnp.ndarray fault_t_in,
    cnp.ndarray fault_w_in,
    int64_t sample_period,
    Py_ssize_t n_samples,
):
    cdef int64_t[::1] arrival = np.ascontiguousarray(arrival_in, dtype=np.int64)
    cdef int64_t[::1] deadline = np.ascontiguousarray(deadline_in, dtype=np.int64)
    cdef int64_t[::1] thr = np.ascontiguousarray(thr_in, dtype=np.int64)
    cdef int32_t[:, ::1] dec_batch = np.ascontiguousarray(dec_batch_in, dtype=np.int32)
    cdef int32_t[:, ::1] dec_subnet = np.ascontiguousarray(dec_subnet_in, dtype=np.int32)
    cdef int32_t[::1] depth_class = np.ascontiguousarray(depth_class_in, dtype=np.int32)
    cdef int64_t[:, ::1] count_lat = np.ascontiguousarray(count_lat_in, dtype=np.int64)
    cdef int64_t[::1] fault_t = np.ascontiguousarray(fault_t_in, dtype=np.int64)
    cdef int64_t[::1] fault_w = np.ascontiguousarray(fault_w_in, dtype=np.int64)

    cdef Py_ssize_t n = arrival.shape[0]
    cdef Py_ssize_t n_faults = fault_t.shape[0]
    cdef Py_ssize_t max_depth_idx = depth_class.shape[0] - 1

    status_a = np.full(n, DROPPED, dtype=np.int8)
    completion_a = np.full(n, -1, dtype=np.int64)
    batch_of_a = np.full(n, -1, dtype=np.int64)
    members_a = np.empty(n, dtype=np.int64)
    b_off_a = np.zeros(n + 1, dtype=np.int64)
    b_start_a = np.empty(n, dtype=np.int64)
    b_end_a = np.empty(n, dtype=np.int64)
    b_worker_a = np.empty(n, dtype=np.int64)
    b_subnet_a = np.empty(n, dtype=np.int64)
    b_decided_a = np.empty(n, dtype=np.int64)
    q_samples_a = np.zeros(n_samples, dtype=np.int64)
    w_samples_a = np.zeros(n_samples, dtype=np.int64)
    heap_d_a = np.empty(max(n, 1), dtype=np.int64)
    heap_i_a = np.empty(max(n, 1), dtype=np.int64)
    w_end_a = np.zeros(max(n_workers, 1), dtype=np.int64)
    w_batch_a = np.zeros(max(n_workers, 1), dtype=np.int64)
    w_flags_a = np.zeros((max(n_workers, 1), 3), dtype=np.int8)
    current_a = np.full(max(n_workers, 1), -1, dtype=np.int64)

    cdef int8_t[::1] status = status_a
    cdef int64_t[::1] completion = completion_a
    cdef int64_t[::1] batch_of = batch_of_a
    cdef int64_t[::1] members = members_a
    cdef int64_t[::1] b_off = b_off_a
    cdef int64_t[::1] b_start = b_start_a
    cdef int64_t[::1] b_end = b_end_a
    cdef int64_t[::1] b_worker = b_worker_a
    cdef int64_t[::1] b_subnet = b_subnet_a
    cdef int64_t[::1] b_decided = b_decided_a
    cdef int64_t[::1] q_samples = q_samples_a
    cdef int64_t[::1] w_samples = w_samples_a
    cdef int64_t[::1] heap_d = heap_d_a
    cdef int64_t[::1] heap_i = heap_i_a
    cdef int64_t[::1] w_end = w_end_a
    cdef int64_t[::1] w_batch = w_batch_a
    # flags: busy, alive, kill pending
    cdef int8_t[:, ::1] w_flags = w_flags_a
    cdef int64_t[::1] current = current_a

    cdef Py_ssize_t qsize = 0
    cdef Py_ssize_t n_batches = 0
    cdef Py_ssize_t n_members = 0
    cdef Py_ssize_t ai = 0, fi = 0, si = 0
    cdef Py_ssize_t j, k, w, i, c, depth
    cdef int64_t t = 0, t_next, theta, end, q, b
    cdef int64_t drops = 0, misses = 0, max_backlog = 0, backlog
    cdef int64_t n_alive = n_workers
    cdef int32_t s, decided, count
    cdef bint have_event

    for j in range(n_workers):
        w_flags[j, 1] = 1

    with nogil:
        while True:
            have_event = False
            if ai < n:
                t_next = arrival[ai]
                have_event = True
            if fi < n_faults and (not have_event or fault_t[fi] < t_next):
                t_next = fault_t[fi]
                have_event = True
            for j in range(n_workers):
                if w_flags[j, 0] and (not have_event or w_end[j] < t_next):
                    t_next = w_end[j]
                    have_event = True
            if not have_event:
                break
            t = t_next
            while si < n_samples and si * sample_period < t:
                q_samples[si] = qsize
                w_samples[si] = n_alive
                si += 1

            while fi < n_faults and fault_t[fi] == t:
                w = fault_w[fi]
                fi += 1
                if not w_flags[w, 1] or w_flags[w, 2]:
                    continue
                if w_flags[w, 0]:
                    w_flags[w, 2] = 1
                else:
                    w_flags[w, 1] = 0
                    n_alive -= 1
            while ai < n and arrival[ai] == t:
                _push(heap_d, heap_i, &qsize, deadline[ai], ai)
                ai += 1
            for j in range(n_workers):
                if w_flags[j, 0] and w_end[j] == t:
                    b = w_batch[j]
                    for k in range(b_off[b], b_off[b + 1]):
                        q = members[k]
                        if t <= deadline[q]:
                            status[q] = HIT
                        else:
                            status[q] = MISS
                            misses += 1
                    w_flags[j, 0] = 0
                    if w_flags[j, 2]:
                        w_flags[j, 2] = 0
                        w_flags[j, 1] = 0
                        n_alive -= 1

            while qsize > 0:
                w = -1
                for j in range(n_workers):
                    if w_flags[j, 1] and not w_flags[j, 0]:
                        w = j
                        break
                if w < 0:
                    break
                s = -1
                while qsize > 0:
                    theta = heap_d[0] - t - overhead
                    i = _bisect_right(thr, theta) - 1
                    depth = qsize
                    c = depth_class[depth if depth < max_depth_idx else max_depth_idx]
                    s = dec_subnet[c, i]
                    if s >= 0:
                        break
                    q = _pop(heap_d, heap_i, &qsize)
                    completion[q] = t
                    drops += 1
                if qsize == 0:
                    break
                decided = dec_batch[c, i]
                count = decided if decided < qsize else <int32_t>qsize
                end = t + count_lat[s, count]
                if current[w] >= 0 and current[w] != s:
                    end += actuation_delay
                b = n_batches
                for k in range(count):
                    q = _pop(heap_d, heap_i, &qsize)
                    members[n_members] = q
                    n_members += 1
                    batch_of[q] = b
                    completion[q] = end
                n_batches += 1
                b_off[n_batches] = n_members
                b_start[b] = t
                b_end[b] = end
                b_worker[b] = w
                b_subnet[b] = s
                b_decided[b] = decided
                w_flags[w, 0] = 1
                w_end[w] = end
                w_batch[w] = b
                current[w] = s

            backlog = qsize + drops + misses
            if backlog > max_backlog:
                max_backlog = backlog

        while si < n_samples:
            q_samples[si] = qsize
            w_samples[si] = n_alive
            si += 1
        while qsize > 0:
            q = _pop(heap_d, heap_i, &qsize)
            completion[q] = t

    return {
        "status": status_a,
        "completion": completion_a,
        "batch_of": batch_of_a,
        "b_start": b_start_a[:n_batches].copy(),
        "b_end": b_end_a[:n_batches].copy(),
        "b_worker": b_worker_a[:n_batches].copy(),
        "b_subnet": b_subnet_a[:n_batches].copy(),
        "b_decided": b_decided_a[:n_batches].copy(),
        "b_off": b_off_a[:n_batches + 1].copy(),
        "members": members_a[:n_members].copy(),
        "q_samples": q_samples_a,
        "w_samples": w_samples_a,
        "max_backlog": int(max_backlog),
    }
