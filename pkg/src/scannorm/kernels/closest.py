"""Point-to-triangle closest-point distances."""
import numpy as np

from .._accel import njit, pick


@njit
def _closest_sq(px, py, pz, v0, v1, v2, t):
    ax, ay, az = v0[t, 0], v0[t, 1], v0[t, 2]
    bx, by, bz = v1[t, 0], v1[t, 1], v1[t, 2]
    cx, cy, cz = v2[t, 0], v2[t, 1], v2[t, 2]
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az
    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx = px - bx
        bpy = py - by
        bpz = pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        vc = d1 * d4 - d3 * d2
        cpx = px - cx
        cpy = py - cy
        cpz = pz - cz
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            s = d1 / (d1 - d3)
            qx, qy, qz = ax + s * abx, ay + s * aby, az + s * abz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = cx, cy, cz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            s = d2 / (d2 - d6)
            qx, qy, qz = ax + s * acx, ay + s * acy, az + s * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            s = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = bx + s * (cx - bx)
            qy = by + s * (cy - by)
            qz = bz + s * (cz - bz)
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
    dx = px - qx
    dy = py - qy
    dz = pz - qz
    return dx * dx + dy * dy + dz * dz


@njit
def _min_dist_numba(points, v0, v1, v2):
    n = points.shape[0]
    out = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bi = -1
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        for t in range(v0.shape[0]):
            d = _closest_sq(px, py, pz, v0, v1, v2, t)
            if d < best:
                best = d
                bi = t
        out[i] = np.sqrt(best)
        idx[i] = bi
    return out, idx


def closest_points_numpy(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to ``p``; broadcasts over rows."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom

    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [
        a,
        b,
        a + t_ab[..., None] * ab,
        c,
        a + t_ac[..., None] * ac,
        b + t_bc[..., None] * (c - b),
    ]
    q = a + v[..., None] * ab + w[..., None] * ac
    # np.select picks the first true condition, matching the branch order above
    for cond, choice in zip(conds[::-1], choices[::-1]):
        q = np.where(cond[..., None], choice, q)
    return q


def _min_dist_numpy(points, v0, v1, v2, chunk=4096):
    n = points.shape[0]
    out = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    rows = max(1, chunk * 64 // max(v0.shape[0], 1))
    for s in range(0, n, rows):
        p = points[s : s + rows, None, :]
        q = closest_points_numpy(p, v0[None], v1[None], v2[None])
        d2 = np.einsum("...i,...i", p - q, p - q)
        k = np.argmin(d2, axis=1)
        idx[s : s + rows] = k
        out[s : s + rows] = np.sqrt(d2[np.arange(d2.shape[0]), k])
    return out, idx


@njit
def _min_dist_csr_numba(points, v0, v1, v2, indptr, cand):
    n = points.shape[0]
    out = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        bi = -1
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        for e in range(indptr[i], indptr[i + 1]):
            t = cand[e]
            d = _closest_sq(px, py, pz, v0, v1, v2, t)
            if d < best or (d == best and t < bi):
                best = d
                bi = t
        out[i] = np.sqrt(best)
        idx[i] = bi
    return out, idx


def _min_dist_csr_numpy(points, v0, v1, v2, indptr, cand, chunk=1 << 18):
    n = points.shape[0]
    out = np.full(n, np.inf)
    idx = np.full(n, -1, dtype=np.int64)
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(n), counts)
    for s in range(0, rows.size, chunk):
        r, t = rows[s : s + chunk], cand[s : s + chunk]
        p = points[r]
        q = closest_points_numpy(p, v0[t], v1[t], v2[t])
        d2 = np.einsum("ij,ij->i", p - q, p - q)
        # per row: smallest distance, then smallest triangle index
        order = np.lexsort((t, d2, r))
        r, t, d2 = r[order], t[order], d2[order]
        first = np.ones(r.size, dtype=bool)
        first[1:] = r[1:] != r[:-1]
        r, t, d2 = r[first], t[first], np.sqrt(d2[first])
        better = (d2 < out[r]) | ((d2 == out[r]) & (t < idx[r]))
        out[r[better]] = d2[better]
        idx[r[better]] = t[better]
    return out, idx


# (distances, nearest triangle index) for each query point
min_distance_to_triangles = pick(_min_dist_numba, _min_dist_numpy)
# same, restricted to per-point candidate triangles given in CSR form
min_distance_to_candidates = pick(_min_dist_csr_numba, _min_dist_csr_numpy)
