"""Geometric kernels for ball pivoting.

A ball of radius r resting on triangle (a, b, c) is centered on the side of
the oriented normal (b - a) x (c - a).  The driver in ``surface.bpa`` owns the
advancing front; these kernels do the per-candidate arithmetic.
"""
import math

import numpy as np

from .._accel import njit, pick

EMPTY_TOL = 1e-9
MIN_AREA2 = 4e-24  # |cross|^2 below this means area <= 1e-12
ANGLE_TIE = 1e-9  # pivot angles closer than this (rad) tie and fall back to index order


@njit
def ball_center(pa, pb, pc, r):
    """(ok, center) for the ball through three points on the normal side."""
    abx = pb[0] - pa[0]
    aby = pb[1] - pa[1]
    abz = pb[2] - pa[2]
    acx = pc[0] - pa[0]
    acy = pc[1] - pa[1]
    acz = pc[2] - pa[2]
    nx = aby * acz - abz * acy
    ny = abz * acx - abx * acz
    nz = abx * acy - aby * acx
    nn = nx * nx + ny * ny + nz * nz
    out = np.zeros(3)
    if nn <= MIN_AREA2:
        return False, out
    ab2 = abx * abx + aby * aby + abz * abz
    ac2 = acx * acx + acy * acy + acz * acz
    # circumcenter offset: (|ac|^2 (n x ab) + |ab|^2 (ac x n)) / (2 |n|^2)
    n_ab_x = ny * abz - nz * aby
    n_ab_y = nz * abx - nx * abz
    n_ab_z = nx * aby - ny * abx
    ac_n_x = acy * nz - acz * ny
    ac_n_y = acz * nx - acx * nz
    ac_n_z = acx * ny - acy * nx
    s = 0.5 / nn
    ox = (ac2 * n_ab_x + ab2 * ac_n_x) * s
    oy = (ac2 * n_ab_y + ab2 * ac_n_y) * s
    oz = (ac2 * n_ab_z + ab2 * ac_n_z) * s
    rc2 = ox * ox + oy * oy + oz * oz
    h2 = r * r - rc2
    if h2 < 0.0:
        return False, out
    h = math.sqrt(h2) / math.sqrt(nn)
    out[0] = pa[0] + ox + h * nx
    out[1] = pa[1] + oy + h * ny
    out[2] = pa[2] + oz + h * nz
    return True, out


@njit
def normals_agree(pa, pb, pc, na, nb, nc):
    """True when at least two vertex normals face the triangle's normal side."""
    abx = pb[0] - pa[0]
    aby = pb[1] - pa[1]
    abz = pb[2] - pa[2]
    acx = pc[0] - pa[0]
    acy = pc[1] - pa[1]
    acz = pc[2] - pa[2]
    nx = aby * acz - abz * acy
    ny = abz * acx - abx * acz
    nz = abx * acy - aby * acx
    votes = 0
    if nx * na[0] + ny * na[1] + nz * na[2] > 0.0:
        votes += 1
    if nx * nb[0] + ny * nb[1] + nz * nb[2] > 0.0:
        votes += 1
    if nx * nc[0] + ny * nc[1] + nz * nc[2] > 0.0:
        votes += 1
    return votes >= 2


@njit
def ball_is_empty(points, cand, center, r, i, j, k):
    lim = r - EMPTY_TOL
    lim2 = lim * lim
    for t in range(cand.shape[0]):
        q = cand[t]
        if q == i or q == j or q == k:
            continue
        dx = points[q, 0] - center[0]
        dy = points[q, 1] - center[1]
        dz = points[q, 2] - center[2]
        if lim > 0.0 and dx * dx + dy * dy + dz * dz < lim2:
            return False
    return True


@njit
def _pivot_numba(points, normals, a, b, c, c_old, cand, r):
    pa = points[a]
    pb = points[b]
    m = 0.5 * (pa + pb)
    e = pb - pa
    e = e / math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
    u0 = c_old - m
    u0 = u0 - (u0[0] * e[0] + u0[1] * e[1] + u0[2] * e[2]) * e
    vout = m - points[c]
    vout = vout - (vout[0] * e[0] + vout[1] * e[1] + vout[2] * e[2]) * e
    ex_u0 = np.array([e[1] * u0[2] - e[2] * u0[1],
                      e[2] * u0[0] - e[0] * u0[2],
                      e[0] * u0[1] - e[1] * u0[0]])
    sense = 1.0 if (ex_u0[0] * vout[0] + ex_u0[1] * vout[1] + ex_u0[2] * vout[2]) >= 0.0 else -1.0

    nc = cand.shape[0]
    out_id = np.empty(nc, dtype=np.int64)
    out_center = np.empty((nc, 3))
    out_angle = np.empty(nc)
    cnt = 0
    for t in range(nc):
        p = cand[t]
        if p == a or p == b or p == c:
            continue
        pp = points[p]
        # new triangle is (b, a, p) so the shared edge is walked in reverse
        ok, cen = ball_center(pb, pa, pp, r)
        if not ok:
            continue
        if not normals_agree(pb, pa, pp, normals[b], normals[a], normals[p]):
            continue
        up = cen - m
        up = up - (up[0] * e[0] + up[1] * e[1] + up[2] * e[2]) * e
        cx = u0[1] * up[2] - u0[2] * up[1]
        cy = u0[2] * up[0] - u0[0] * up[2]
        cz = u0[0] * up[1] - u0[1] * up[0]
        sn = sense * (cx * e[0] + cy * e[1] + cz * e[2])
        cs = u0[0] * up[0] + u0[1] * up[1] + u0[2] * up[2]
        ang = math.atan2(sn, cs)
        if ang < 0.0:
            ang += 2.0 * math.pi
        out_id[cnt] = p
        out_center[cnt] = cen
        out_angle[cnt] = ang
        cnt += 1
    return out_id[:cnt], out_center[:cnt], out_angle[:cnt]


def _ball_centers_numpy(pa, pb, pc, r):
    ab = pb - pa
    ac = pc - pa
    n = np.cross(ab, ac)
    nn = np.einsum("...i,...i", n, n)
    ok = nn > MIN_AREA2
    nn_safe = np.where(ok, nn, 1.0)
    ab2 = np.einsum("...i,...i", ab, ab)
    ac2 = np.einsum("...i,...i", ac, ac)
    off = (ac2[..., None] * np.cross(n, ab) + ab2[..., None] * np.cross(ac, n)) * (0.5 / nn_safe)[..., None]
    h2 = r * r - np.einsum("...i,...i", off, off)
    ok &= h2 >= 0
    h = np.sqrt(np.where(ok, h2, 0.0)) / np.sqrt(nn_safe)
    return ok, pa + off + h[..., None] * n


def _pivot_numpy(points, normals, a, b, c, c_old, cand, r):
    cand = cand[(cand != a) & (cand != b) & (cand != c)]
    none = (np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros(0))
    if cand.size == 0:
        return none
    pa, pb = points[a], points[b]
    m = 0.5 * (pa + pb)
    e = (pb - pa) / np.linalg.norm(pb - pa)
    u0 = c_old - m
    u0 = u0 - (u0 @ e) * e
    vout = m - points[c]
    vout = vout - (vout @ e) * e
    sense = 1.0 if np.cross(e, u0) @ vout >= 0 else -1.0

    pp = points[cand]
    ok, cen = _ball_centers_numpy(pb[None], pa[None], pp, r)
    tri_n = np.cross(pa - pb, pp - pb)
    votes = (
        (tri_n @ normals[b] > 0).astype(int)
        + (tri_n @ normals[a] > 0).astype(int)
        + (np.einsum("ij,ij->i", tri_n, normals[cand]) > 0).astype(int)
    )
    ok &= votes >= 2
    if not ok.any():
        return none
    cand, cen = cand[ok], cen[ok]
    up = cen - m
    up = up - (up @ e)[:, None] * e
    sn = sense * (np.cross(u0, up) @ e)
    cs = up @ u0
    ang = np.arctan2(sn, cs)
    ang = np.where(ang < 0, ang + 2 * np.pi, ang)
    return cand.astype(np.int64), cen, ang


# (candidate points, ball centers, pivot angles) for rolling the ball over
# edge (a, b) of triangle (a, b, c); only geometrically valid candidates
pivot_edge = pick(_pivot_numba, _pivot_numpy)


@njit
def _seed_numba(points, normals, i, pair_cand, neigh, r):
    """First (j, k) in candidate order forming an empty-ball seed with ``i``."""
    nc = pair_cand.shape[0]
    for s in range(nc):
        j = pair_cand[s]
        for t in range(s + 1, nc):
            k = pair_cand[t]
            if normals_agree(points[i], points[j], points[k], normals[i], normals[j], normals[k]):
                o1, o2 = j, k
            elif normals_agree(points[i], points[k], points[j], normals[i], normals[k], normals[j]):
                o1, o2 = k, j
            else:
                continue
            ok, cen = ball_center(points[i], points[o1], points[o2], r)
            if not ok:
                continue
            if ball_is_empty(points, neigh, cen, r, i, o1, o2):
                return o1, o2, cen
    return -1, -1, np.zeros(3)


def _seed_numpy(points, normals, i, pair_cand, neigh, r):
    nc = pair_cand.shape[0]
    if nc < 2:
        return -1, -1, np.zeros(3)
    s, t = np.triu_indices(nc, 1)
    order = np.lexsort((t, s))
    j, k = pair_cand[s[order]], pair_cand[t[order]]
    pi = points[i]
    nrm = np.cross(points[j] - pi, points[k] - pi)

    fwd = ((nrm @ normals[i] > 0).astype(int)
           + (np.einsum("ij,ij->i", nrm, normals[j]) > 0).astype(int)
           + (np.einsum("ij,ij->i", nrm, normals[k]) > 0).astype(int)) >= 2
    rev = ((nrm @ normals[i] < 0).astype(int)
           + (np.einsum("ij,ij->i", nrm, normals[j]) < 0).astype(int)
           + (np.einsum("ij,ij->i", nrm, normals[k]) < 0).astype(int)) >= 2
    o1 = np.where(fwd, j, k)
    o2 = np.where(fwd, k, j)
    valid = fwd | rev
    ok, cen = _ball_centers_numpy(pi[None], points[o1], points[o2], r)
    ok &= valid
    lim = r - EMPTY_TOL
    for q in np.nonzero(ok)[0]:
        d2 = np.sum((points[neigh] - cen[q]) ** 2, axis=1)
        other = (neigh != i) & (neigh != o1[q]) & (neigh != o2[q])
        if lim <= 0 or not np.any(other & (d2 < lim * lim)):
            return int(o1[q]), int(o2[q]), cen[q]
    return -1, -1, np.zeros(3)


# (j, k, center) of the first valid seed triangle (i, j, k), or (-1, -1, _)
find_seed = pick(_seed_numba, _seed_numpy)
