"""DBSCAN labelling over a precomputed radius graph.

Core points are those with at least ``min_pts`` neighbors (self included).
Clusters are the connected components of the core-core graph; a border point
joins the cluster of its nearest core neighbor, ties broken by the lower
coordinate tuple so the result does not depend on input order.
"""
import numpy as np

from .._accel import njit, pick


@njit
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit
def _lex_less(points, i, j):
    for k in range(3):
        if points[i, k] < points[j, k]:
            return True
        if points[i, k] > points[j, k]:
            return False
    return i < j


@njit
def _dbscan_numba(points, indptr, indices, dist, min_pts):
    n = indptr.shape[0] - 1
    core = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        core[i] = (indptr[i + 1] - indptr[i]) >= min_pts
    parent = np.arange(n)
    for i in range(n):
        if not core[i]:
            continue
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if j > i and core[j]:
                ri = _find(parent, i)
                rj = _find(parent, j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    labels = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if core[i]:
            labels[i] = _find(parent, i)
    for i in range(n):
        if core[i]:
            continue
        best = -1
        bd = np.inf
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if not core[j]:
                continue
            if dist[e] < bd or (dist[e] == bd and _lex_less(points, j, best)):
                bd = dist[e]
                best = j
        if best >= 0:
            labels[i] = labels[best]
    return labels


def _dbscan_numpy(points, indptr, indices, dist, min_pts):
    n = indptr.shape[0] - 1
    counts = np.diff(indptr)
    core = counts >= min_pts
    rows = np.repeat(np.arange(n), counts)
    cc = core[rows] & core[indices]
    src, dst = rows[cc], indices[cc]
    # min-label propagation over core-core edges until stable
    labels = np.where(core, np.arange(n), n)
    while True:
        prop = labels.copy()
        np.minimum.at(prop, src, labels[dst])
        if np.array_equal(prop, labels):
            break
        labels = prop
    labels = np.where(core, labels, -1)

    border = ~core[rows] & core[indices]
    b_rows, b_cols, b_d = rows[border], indices[border], dist[border]
    if b_rows.size:
        p = points[b_cols]
        order = np.lexsort((b_cols, p[:, 2], p[:, 1], p[:, 0], b_d, b_rows))
        b_rows, b_cols = b_rows[order], b_cols[order]
        first = np.ones(b_rows.size, dtype=bool)
        first[1:] = b_rows[1:] != b_rows[:-1]
        labels[b_rows[first]] = labels[b_cols[first]]
    return labels


# cluster label per point (-1 = noise); labels are arbitrary representatives
dbscan_labels = pick(_dbscan_numba, _dbscan_numpy)
