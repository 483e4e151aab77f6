"""Z-buffered triangle rasterization into an instance-id image.

Pixel (x, y) is sampled at its integer coordinate, which is the pixel that
``round(u), round(v)`` maps a projected point to.
"""
import numpy as np

from .._accel import njit, pick


@njit
def _raster_numba(uv, inv_depth, tris, tri_ids, width, height):
    zbuf = np.zeros((height, width))  # stores 1/depth; larger is nearer
    ids = np.zeros((height, width), dtype=np.int64)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = uv[i0, 0], uv[i0, 1]
        x1, y1 = uv[i1, 0], uv[i1, 1]
        x2, y2 = uv[i2, 0], uv[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        for y in range(ymin, ymax + 1):
            for x in range(xmin, xmax + 1):
                w0 = ((x1 - x) * (y2 - y) - (x2 - x) * (y1 - y)) / area
                w1 = ((x2 - x) * (y0 - y) - (x0 - x) * (y2 - y)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                z = w0 * inv_depth[i0] + w1 * inv_depth[i1] + w2 * inv_depth[i2]
                if z > zbuf[y, x]:
                    zbuf[y, x] = z
                    ids[y, x] = tri_ids[t]
    return ids


def _raster_numpy(uv, inv_depth, tris, tri_ids, width, height):
    zbuf = np.zeros((height, width))
    ids = np.zeros((height, width), dtype=np.int64)
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        (x0, y0), (x1, y1), (x2, y2) = uv[i0], uv[i1], uv[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if xmax < xmin or ymax < ymin:
            continue
        y, x = np.mgrid[ymin : ymax + 1, xmin : xmax + 1].astype(np.float64)
        w0 = ((x1 - x) * (y2 - y) - (x2 - x) * (y1 - y)) / area
        w1 = ((x2 - x) * (y0 - y) - (x0 - x) * (y2 - y)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        z = w0 * inv_depth[i0] + w1 * inv_depth[i1] + w2 * inv_depth[i2]
        win = inside & (z > zbuf[ymin : ymax + 1, xmin : xmax + 1])
        ys, xs = np.nonzero(win)
        zbuf[ys + ymin, xs + xmin] = z[win]
        ids[ys + ymin, xs + xmin] = tri_ids[t]
    return ids


# (height, width) image of the nearest triangle's id, 0 where empty
rasterize_ids = pick(_raster_numba, _raster_numpy)
