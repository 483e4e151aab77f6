"""Weighted sample elimination down to a target count.

Each sample's weight is the sum of (1 - d / (2 r_max))^8 over its neighbors
within 2 r_max.  The heaviest sample (lowest index on ties) is removed and
its neighbors' weights reduced, until ``n_keep`` remain.
"""
import heapq

import numpy as np

from .._accel import njit, pick

ALPHA = 8.0


@njit
def _weights(indptr, indices, dist, two_r):
    n = indptr.shape[0] - 1
    w = np.zeros(n)
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            w[i] += (1.0 - dist[e] / two_r) ** ALPHA
    return w


@njit
def _before(w, a, b):
    return w[a] > w[b] or (w[a] == w[b] and a < b)


@njit
def _sift_up(heap, pos, w, k):
    while k > 0:
        p = (k - 1) // 2
        if _before(w, heap[k], heap[p]):
            heap[k], heap[p] = heap[p], heap[k]
            pos[heap[k]] = k
            pos[heap[p]] = p
            k = p
        else:
            break


@njit
def _sift_down(heap, pos, w, k, size):
    while True:
        l = 2 * k + 1
        r = l + 1
        best = k
        if l < size and _before(w, heap[l], heap[best]):
            best = l
        if r < size and _before(w, heap[r], heap[best]):
            best = r
        if best == k:
            break
        heap[k], heap[best] = heap[best], heap[k]
        pos[heap[k]] = k
        pos[heap[best]] = best
        k = best


@njit
def _eliminate_numba(indptr, indices, dist, two_r, n_keep):
    n = indptr.shape[0] - 1
    w = _weights(indptr, indices, dist, two_r)
    heap = np.arange(n)
    pos = np.arange(n)
    for k in range(n // 2 - 1, -1, -1):
        _sift_down(heap, pos, w, k, n)
    removed = np.zeros(n, dtype=np.bool_)
    size = n
    while size > n_keep:
        top = heap[0]
        size -= 1
        heap[0] = heap[size]
        pos[heap[0]] = 0
        _sift_down(heap, pos, w, 0, size)
        removed[top] = True
        for e in range(indptr[top], indptr[top + 1]):
            j = indices[e]
            if removed[j]:
                continue
            w[j] -= (1.0 - dist[e] / two_r) ** ALPHA
            _sift_down(heap, pos, w, pos[j], size)
    return np.nonzero(~removed)[0]


def _eliminate_numpy(indptr, indices, dist, two_r, n_keep):
    n = indptr.shape[0] - 1
    contrib = (1.0 - dist / two_r) ** ALPHA
    w = np.zeros(n)
    # sequential accumulation so the sums match the compiled path bit-for-bit
    for i in range(n):
        acc = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            acc += contrib[e]
        w[i] = acc
    heap = [(-w[i], i) for i in range(n)]
    heapq.heapify(heap)
    removed = np.zeros(n, dtype=bool)
    alive = n
    while alive > n_keep:
        negw, top = heapq.heappop(heap)
        if removed[top] or -negw != w[top]:
            continue
        removed[top] = True
        alive -= 1
        for e in range(indptr[top], indptr[top + 1]):
            j = indices[e]
            if removed[j]:
                continue
            w[j] -= contrib[e]
            heapq.heappush(heap, (-w[j], j))
    return np.nonzero(~removed)[0]


# indices of the surviving samples, ascending
eliminate_samples = pick(_eliminate_numba, _eliminate_numpy)
