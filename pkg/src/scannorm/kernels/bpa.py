"""Ball-pivoting advancing front.

``_bpa_numba`` runs the whole front inside numba with a sorted-cell grid for
neighbor search.  ``_bpa_python`` is the same algorithm driven from Python
with a KD-tree and the per-pivot kernels; both visit candidates in the same
order and produce the same triangles.

Per radius (ascending): re-queue every edge that has one triangle, expand
the front, then try to seed from each unused point in index order, expanding
after every seed.  Pivot candidates are tried by increasing pivot angle (ties,
up to ``ANGLE_TIE``, by point index), at most ``max_tries`` of them; the first that keeps the mesh
edge-manifold and consistently oriented, and whose ball is empty, wins.
"""
from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from .._accel import njit, pick
from .pivot import (ANGLE_TIE, _pivot_numba, _seed_numba, ball_center, ball_is_empty, find_seed,
                    pivot_edge)

# ---------------------------------------------------------------- numba path


@njit
def _grid_build(points, cell):
    lo = np.empty(3)
    for k in range(3):
        lo[k] = points[:, k].min()
    ijk = np.empty((points.shape[0], 3), dtype=np.int64)
    for i in range(points.shape[0]):
        for k in range(3):
            ijk[i, k] = np.int64(np.floor((points[i, k] - lo[k]) / cell))
    dims = np.empty(3, dtype=np.int64)
    for k in range(3):
        dims[k] = ijk[:, k].max() + 3
    keys = np.empty(points.shape[0], dtype=np.int64)
    for i in range(points.shape[0]):
        keys[i] = ((ijk[i, 0] + 1) * dims[1] + (ijk[i, 1] + 1)) * dims[2] + (ijk[i, 2] + 1)
    order = np.argsort(keys, kind="mergesort")
    return lo, dims, keys[order], order


@njit
def _grid_query(points, lo, dims, skeys, order, cell, q, r, out):
    """Fill ``out`` with indices within ``r`` of ``q`` (grid cell >= r); return count."""
    r2 = r * r
    cnt = 0
    ci = np.int64(np.floor((q[0] - lo[0]) / cell)) + 1
    cj = np.int64(np.floor((q[1] - lo[1]) / cell)) + 1
    ck = np.int64(np.floor((q[2] - lo[2]) / cell)) + 1
    for a in range(ci - 1, ci + 2):
        if a < 0 or a >= dims[0]:
            continue
        for b in range(cj - 1, cj + 2):
            if b < 0 or b >= dims[1]:
                continue
            for c in range(ck - 1, ck + 2):
                if c < 0 or c >= dims[2]:
                    continue
                key = (a * dims[1] + b) * dims[2] + c
                s = np.searchsorted(skeys, key)
                while s < skeys.shape[0] and skeys[s] == key:
                    p = order[s]
                    dx = points[p, 0] - q[0]
                    dy = points[p, 1] - q[1]
                    dz = points[p, 2] - q[2]
                    if dx * dx + dy * dy + dz * dz <= r2:
                        out[cnt] = p
                        cnt += 1
                    s += 1
    return cnt


@njit
def _directed_in(tris, t, i, j):
    a = tris[t, 0]
    b = tris[t, 1]
    c = tris[t, 2]
    return (a == i and b == j) or (b == i and c == j) or (c == i and a == j)


@njit
def _sorted_key(a, b, c, n):
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    return (a * n + b) * n + c


@njit
def _can_add(tris, edge_slot, edge_cnt, edge_t0, tri_keys, used, open_edges, a, b, c, n):
    if _sorted_key(a, b, c, n) in tri_keys:
        return False
    for s in range(3):
        if s == 0:
            i, j = a, b
        elif s == 1:
            i, j = b, c
        else:
            i, j = c, a
        key = min(i, j) * n + max(i, j)
        if key in edge_slot:
            e = edge_slot[key]
            if edge_cnt[e] >= 2:
                return False
            if edge_cnt[e] == 1 and not _directed_in(tris, edge_t0[e], j, i):
                return False
    if used[a] and open_edges[a] == 0:
        return False
    if used[b] and open_edges[b] == 0:
        return False
    if used[c] and open_edges[c] == 0:
        return False
    return True


@njit
def _grow1(arr, need):
    if need <= arr.shape[0]:
        return arr
    out = np.empty(max(need, 2 * arr.shape[0]), dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit
def _grow2(arr, need):
    if need <= arr.shape[0]:
        return arr
    out = np.empty((max(need, 2 * arr.shape[0]), arr.shape[1]), dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit
def _bpa_numba(points, normals, radii, seed_candidates, max_tries):
    n = points.shape[0]
    cap_t = 4 * n + 16
    tris = np.empty((cap_t, 3), dtype=np.int64)
    n_tris = 0
    edge_slot = dict()
    edge_slot[np.int64(-1)] = np.int64(-1)
    del edge_slot[np.int64(-1)]
    tri_keys = dict()
    tri_keys[np.int64(-1)] = True
    del tri_keys[np.int64(-1)]
    edge_cnt = np.zeros(3 * cap_t, dtype=np.int64)
    edge_t0 = np.zeros(3 * cap_t, dtype=np.int64)
    edge_i = np.zeros(3 * cap_t, dtype=np.int64)
    edge_j = np.zeros(3 * cap_t, dtype=np.int64)
    n_edges = 0
    open_edges = np.zeros(n, dtype=np.int64)
    used = np.zeros(n, dtype=np.bool_)
    queue = np.empty((16 * n + 64, 3), dtype=np.int64)
    qh = 0
    qt = 0
    buf = np.empty(n, dtype=np.int64)
    buf2 = np.empty(n, dtype=np.int64)

    for ri in range(radii.shape[0]):
        r = radii[ri]
        cell = 2.0 * r
        lo, dims, skeys, order = _grid_build(points, cell)

        # re-queue boundary edges in edge creation order
        for e in range(n_edges):
            if edge_cnt[e] == 1:
                t = edge_t0[e]
                i = edge_i[e]
                j = edge_j[e]
                if not _directed_in(tris, t, i, j):
                    i, j = j, i
                if qt >= queue.shape[0]:
                    queue = _grow2(queue, qt + 1)
                queue[qt, 0] = i
                queue[qt, 1] = j
                queue[qt, 2] = t
                qt += 1

        seed_i = 0
        while True:
            # expand
            while qh < qt:
                i = queue[qh, 0]
                j = queue[qh, 1]
                t = queue[qh, 2]
                qh += 1
                key = min(i, j) * n + max(i, j)
                e = edge_slot[key]
                if edge_cnt[e] != 1:
                    continue
                a_ = tris[t, 0]
                b_ = tris[t, 1]
                c_ = tris[t, 2]
                c = a_
                if c == i or c == j:
                    c = b_
                    if c == i or c == j:
                        c = c_
                ok, c_old = ball_center(points[a_], points[b_], points[c_], r)
                if not ok:
                    continue
                m = 0.5 * (points[i] + points[j])
                cnt = _grid_query(points, lo, dims, skeys, order, cell, m, 2.0 * r, buf)
                cand = buf[:cnt].copy()
                ids, centers, angles = _pivot_numba(points, normals, i, j, c, c_old, cand, r)
                if ids.shape[0] == 0:
                    continue
                o1 = np.argsort(ids, kind="mergesort")
                o2 = np.argsort(np.round(angles[o1] / ANGLE_TIE), kind="mergesort")
                rank = o1[o2]
                tries = min(max_tries, rank.shape[0])
                for q in range(tries):
                    k = rank[q]
                    p = ids[k]
                    if _can_add(tris, edge_slot, edge_cnt, edge_t0, tri_keys, used, open_edges,
                                j, i, p, n) and ball_is_empty(points, cand, centers[k], r, i, j, p):
                        # add triangle (j, i, p)
                        if n_tris >= tris.shape[0]:
                            tris = _grow2(tris, n_tris + 1)
                        tris[n_tris, 0] = j
                        tris[n_tris, 1] = i
                        tris[n_tris, 2] = p
                        tri_keys[_sorted_key(j, i, p, n)] = True
                        for s in range(3):
                            if s == 0:
                                u, v = j, i
                            elif s == 1:
                                u, v = i, p
                            else:
                                u, v = p, j
                            ek = min(u, v) * n + max(u, v)
                            if ek in edge_slot:
                                ee = edge_slot[ek]
                            else:
                                ee = n_edges
                                if ee >= edge_cnt.shape[0]:
                                    edge_cnt = _grow1(edge_cnt, ee + 1)
                                    edge_t0 = _grow1(edge_t0, ee + 1)
                                    edge_i = _grow1(edge_i, ee + 1)
                                    edge_j = _grow1(edge_j, ee + 1)
                                edge_slot[ek] = ee
                                edge_cnt[ee] = 0
                                edge_t0[ee] = n_tris
                                edge_i[ee] = min(u, v)
                                edge_j[ee] = max(u, v)
                                n_edges += 1
                            edge_cnt[ee] += 1
                            if edge_cnt[ee] == 1:
                                open_edges[u] += 1
                                open_edges[v] += 1
                                if qt >= queue.shape[0]:
                                    queue = _grow2(queue, qt + 1)
                                queue[qt, 0] = u
                                queue[qt, 1] = v
                                queue[qt, 2] = n_tris
                                qt += 1
                            else:
                                open_edges[u] -= 1
                                open_edges[v] -= 1
                        used[j] = True
                        used[i] = True
                        used[p] = True
                        n_tris += 1
                        break

            # next seed
            found = False
            while seed_i < n:
                i = seed_i
                seed_i += 1
                if used[i]:
                    continue
                cnt = _grid_query(points, lo, dims, skeys, order, cell, points[i], 2.0 * r, buf)
                neigh = buf[:cnt].copy()
                d2 = np.empty(cnt)
                for s in range(cnt):
                    dx = points[neigh[s], 0] - points[i, 0]
                    dy = points[neigh[s], 1] - points[i, 1]
                    dz = points[neigh[s], 2] - points[i, 2]
                    d2[s] = dx * dx + dy * dy + dz * dz
                o1 = np.argsort(neigh, kind="mergesort")
                o2 = np.argsort(d2[o1], kind="mergesort")
                rank = o1[o2]
                nc = 0
                for s in range(cnt):
                    q = neigh[rank[s]]
                    if q == i or used[q]:
                        continue
                    buf2[nc] = q
                    nc += 1
                    if nc >= seed_candidates:
                        break
                if nc < 2:
                    continue
                sj, sk, _ = _seed_numba(points, normals, i, buf2[:nc].copy(), neigh, r)
                if sj < 0:
                    continue
                # add seed triangle (i, sj, sk)
                if n_tris >= tris.shape[0]:
                    tris = _grow2(tris, n_tris + 1)
                tris[n_tris, 0] = i
                tris[n_tris, 1] = sj
                tris[n_tris, 2] = sk
                tri_keys[_sorted_key(i, sj, sk, n)] = True
                for s in range(3):
                    if s == 0:
                        u, v = i, sj
                    elif s == 1:
                        u, v = sj, sk
                    else:
                        u, v = sk, i
                    ek = min(u, v) * n + max(u, v)
                    ee = n_edges
                    if ee >= edge_cnt.shape[0]:
                        edge_cnt = _grow1(edge_cnt, ee + 1)
                        edge_t0 = _grow1(edge_t0, ee + 1)
                        edge_i = _grow1(edge_i, ee + 1)
                        edge_j = _grow1(edge_j, ee + 1)
                    edge_slot[ek] = ee
                    edge_cnt[ee] = 1
                    edge_t0[ee] = n_tris
                    edge_i[ee] = min(u, v)
                    edge_j[ee] = max(u, v)
                    n_edges += 1
                    open_edges[u] += 1
                    open_edges[v] += 1
                    if qt >= queue.shape[0]:
                        queue = _grow2(queue, qt + 1)
                    queue[qt, 0] = u
                    queue[qt, 1] = v
                    queue[qt, 2] = n_tris
                    qt += 1
                used[i] = True
                used[sj] = True
                used[sk] = True
                n_tris += 1
                found = True
                break
            if not found:
                break
    return tris[:n_tris].copy()


# --------------------------------------------------------------- python path


class _Front:
    """Triangle soup plus edge bookkeeping for the advancing front."""

    def __init__(self, n):
        self.tris: list = []
        self.edge_tris: dict = {}
        self.open_edges = np.zeros(n, dtype=np.int64)
        self.used = np.zeros(n, dtype=bool)
        self.tri_set: set = set()
        self.queue: deque = deque()

    @staticmethod
    def key(i, j):
        return (i, j) if i < j else (j, i)

    def directed_in(self, t, i, j):
        a, b, c = self.tris[t]
        return (a, b) == (i, j) or (b, c) == (i, j) or (c, a) == (i, j)

    def can_add(self, tri):
        a, b, c = tri
        if tuple(sorted(tri)) in self.tri_set:
            return False
        for i, j in ((a, b), (b, c), (c, a)):
            owners = self.edge_tris.get(self.key(i, j), ())
            if len(owners) >= 2:
                return False
            # an existing neighbor must walk the shared edge the other way
            if len(owners) == 1 and not self.directed_in(owners[0], j, i):
                return False
        return not any(self.used[v] and self.open_edges[v] == 0 for v in tri)

    def add(self, tri):
        t = len(self.tris)
        self.tris.append(tri)
        self.tri_set.add(tuple(sorted(tri)))
        a, b, c = tri
        for i, j in ((a, b), (b, c), (c, a)):
            owners = self.edge_tris.setdefault(self.key(i, j), [])
            owners.append(t)
            if len(owners) == 1:
                self.open_edges[i] += 1
                self.open_edges[j] += 1
                self.queue.append((i, j, t))
            else:
                self.open_edges[i] -= 1
                self.open_edges[j] -= 1
        self.used[list(tri)] = True

    def third(self, t, i, j):
        for v in self.tris[t]:
            if v != i and v != j:
                return v
        raise AssertionError("edge not in triangle")


def _within(tree, pts, q, r):
    cand = np.asarray(tree.query_ball_point(q, r * (1 + 1e-9) + 1e-12, return_sorted=False),
                      dtype=np.int64)
    d = pts[cand] - q
    d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
    keep = d2 <= r * r
    return cand[keep], d2[keep]


def _bpa_python(points, normals, radii, seed_candidates, max_tries):
    n = points.shape[0]
    tree = cKDTree(points)
    front = _Front(n)
    for r in radii:
        for k, owners in front.edge_tris.items():
            if len(owners) == 1:
                t = owners[0]
                i, j = k if front.directed_in(t, *k) else (k[1], k[0])
                front.queue.append((i, j, t))
        seed_i = 0
        while True:
            _expand(points, normals, tree, front, r, max_tries)
            found = False
            while seed_i < n:
                i = seed_i
                seed_i += 1
                if front.used[i]:
                    continue
                neigh, d2 = _within(tree, points, points[i], 2.0 * r)
                ranked = neigh[np.lexsort((neigh, d2))]
                cand = ranked[(ranked != i) & ~front.used[ranked]][:seed_candidates]
                if cand.size < 2:
                    continue
                j, k, _ = find_seed(points, normals, i, cand, neigh, r)
                if j < 0:
                    continue
                front.add((i, int(j), int(k)))
                found = True
                break
            if not found:
                break
    return np.asarray(front.tris, dtype=np.int64).reshape(-1, 3)


def _expand(pts, nrm, tree, front, r, max_tries):
    while front.queue:
        i, j, t = front.queue.popleft()
        if len(front.edge_tris.get(front.key(i, j), ())) != 1:
            continue
        c = front.third(t, i, j)
        a_, b_, c_ = front.tris[t]
        ok, c_old = ball_center(pts[a_], pts[b_], pts[c_], r)
        if not ok:
            continue
        cand, _ = _within(tree, pts, 0.5 * (pts[i] + pts[j]), 2.0 * r)
        ids, centers, angles = pivot_edge(pts, nrm, i, j, c, c_old, cand, r)
        # first hit along the pivot; ties (co-circular points) by index
        for q in np.lexsort((ids, np.round(angles / ANGLE_TIE)))[:max_tries]:
            p = int(ids[q])
            tri = (j, i, p)
            if front.can_add(tri) and ball_is_empty(pts, cand, centers[q], r, i, j, p):
                front.add(tri)
                break


# triangle index array (m, 3) for the ball-pivoting mesh
ball_pivot_triangles = pick(_bpa_numba, _bpa_python)
