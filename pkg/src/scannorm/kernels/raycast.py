"""Nearest-hit ray casting against grouped triangle soups.

Triangles are grouped (one group per scene object) and each group carries an
axis-aligned box used to cull rays before the per-triangle test.  Hits use the
Moller-Trumbore test with inclusive edges so a ray through a shared edge still
hits; ties in distance go to the lower triangle index.
"""
import numpy as np

from .._accel import njit, pick

_EPS = 1e-12


@njit
def _slab(ox, oy, oz, dx, dy, dz, lo, hi, tmax):
    t0 = 0.0
    t1 = tmax
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for k in range(3):
        if abs(d[k]) < 1e-300:
            if o[k] < lo[k] or o[k] > hi[k]:
                return False
        else:
            inv = 1.0 / d[k]
            ta = (lo[k] - o[k]) * inv
            tb = (hi[k] - o[k]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit
def _cast_numba(origin, dirs, v0, v1, v2, group_start, box_lo, box_hi, max_range):
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    tri = np.full(n, -1, dtype=np.int64)
    ox, oy, oz = origin[0], origin[1], origin[2]
    ng = group_start.shape[0] - 1
    for r in range(n):
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best = max_range
        bi = -1
        for g in range(ng):
            if not _slab(ox, oy, oz, dx, dy, dz, box_lo[g], box_hi[g], best):
                continue
            for t in range(group_start[g], group_start[g + 1]):
                e1x = v1[t, 0] - v0[t, 0]
                e1y = v1[t, 1] - v0[t, 1]
                e1z = v1[t, 2] - v0[t, 2]
                e2x = v2[t, 0] - v0[t, 0]
                e2y = v2[t, 1] - v0[t, 1]
                e2z = v2[t, 2] - v0[t, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if abs(det) < _EPS:
                    continue
                inv = 1.0 / det
                sx = ox - v0[t, 0]
                sy = oy - v0[t, 1]
                sz = oz - v0[t, 2]
                u = (sx * px + sy * py + sz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = sy * e1z - sz * e1y
                qy = sz * e1x - sx * e1z
                qz = sx * e1y - sy * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                tt = (e2x * qx + e2y * qy + e2z * qz) * inv
                if tt > _EPS and tt < best:
                    best = tt
                    bi = t
        if bi >= 0:
            t_hit[r] = best
            tri[r] = bi
    return t_hit, tri


def _slab_numpy(origin, dirs, lo, hi, tmax):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        ta = (lo - origin) * inv
        tb = (hi - origin) * inv
    tmin = np.minimum(ta, tb)
    tmx = np.maximum(ta, tb)
    # axis-parallel rays: inside the slab -> unbounded, outside -> miss
    flat = np.abs(dirs) < 1e-300
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), tmin)
    tmx = np.where(flat, np.where(inside, np.inf, -np.inf), tmx)
    t0 = np.maximum(tmin.max(axis=1), 0.0)
    t1 = np.minimum(tmx.min(axis=1), tmax)
    return t0 <= t1


def _cast_numpy(origin, dirs, v0, v1, v2, group_start, box_lo, box_hi, max_range,
                chunk=1 << 20):
    n = dirs.shape[0]
    t_hit = np.full(n, np.inf)
    tri = np.full(n, -1, dtype=np.int64)
    best = np.full(n, float(max_range))
    for g in range(group_start.shape[0] - 1):
        lo_t, hi_t = group_start[g], group_start[g + 1]
        if hi_t <= lo_t:
            continue
        cand = np.nonzero(_slab_numpy(origin, dirs, box_lo[g], box_hi[g], best))[0]
        if cand.size == 0:
            continue
        a, b, c = v0[lo_t:hi_t], v1[lo_t:hi_t], v2[lo_t:hi_t]
        e1 = b - a
        e2 = c - a
        rows = max(1, chunk // (hi_t - lo_t))
        for s in range(0, cand.size, rows):
            ids = cand[s : s + rows]
            d = dirs[ids][:, None, :]
            p = np.cross(d, e2[None])
            det = np.einsum("rti,ti->rt", p, e1)
            ok = np.abs(det) >= _EPS
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                sv = origin - a
                u = np.einsum("rti,ti->rt", p, sv) * inv
                q = np.cross(sv, e1)
                v = np.einsum("ri,ti->rt", d[:, 0, :], q) * inv
                tt = np.einsum("ti,ti->t", e2, q)[None, :] * inv
            ok &= (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (tt > _EPS)
            tt = np.where(ok, tt, np.inf)
            k = np.argmin(tt, axis=1)  # first minimum = lowest triangle index
            tk = tt[np.arange(ids.size), k]
            better = tk < best[ids]
            upd = ids[better]
            best[upd] = tk[better]
            t_hit[upd] = tk[better]
            tri[upd] = k[better] + lo_t
    return t_hit, tri


# (hit distance or inf, triangle index or -1) for each ray
cast_rays = pick(_cast_numba, _cast_numpy)
