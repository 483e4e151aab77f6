"""Fixed-radius and k-nearest neighbor queries.

Backed by ``scipy.spatial.cKDTree``; candidate sets are re-filtered with an
exact distance so results match a linear scan, and ordered by
(distance, insertion index).
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class NeighborIndex:
    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.points = pts
        self._tree = cKDTree(pts) if len(pts) else None

    def __len__(self) -> int:
        return self.points.shape[0]

    def _order(self, q, cand, r=None):
        cand = np.asarray(cand, dtype=np.int64)
        if cand.size == 0:
            return cand, np.zeros(0)
        d = np.sqrt(np.sum((self.points[cand] - q) ** 2, axis=1))
        if r is not None:
            keep = d <= r
            cand, d = cand[keep], d[keep]
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def radius(self, q, r: float, return_distance: bool = False):
        """Indices of all points within ``r`` of ``q`` (inclusive)."""
        q = np.asarray(q, dtype=np.float64).reshape(3)
        if self._tree is None:
            idx, d = np.zeros(0, np.int64), np.zeros(0)
        else:
            slack = 1e-9 * max(1.0, r)
            cand = self._tree.query_ball_point(q, r + slack)
            idx, d = self._order(q, cand, r)
        return (idx, d) if return_distance else idx

    def radius_unordered(self, q, r: float) -> np.ndarray:
        """Like ``radius`` but in arbitrary order; for callers that re-rank."""
        if self._tree is None:
            return np.zeros(0, np.int64)
        cand = np.asarray(self._tree.query_ball_point(q, r + 1e-9 * max(1.0, r),
                                                      return_sorted=False), dtype=np.int64)
        if cand.size:
            d2 = np.sum((self.points[cand] - q) ** 2, axis=1)
            cand = cand[d2 <= r * r]
        return cand

    def knn(self, q, k: int, return_distance: bool = False):
        q = np.asarray(q, dtype=np.float64).reshape(3)
        k = min(k, len(self))
        if k <= 0:
            idx, d = np.zeros(0, np.int64), np.zeros(0)
        else:
            _, cand = self._tree.query(q, k=k)
            cand = np.atleast_1d(cand)
            # widen to the k-th distance so ties at the boundary resolve by index
            idx, d = self._order(q, cand)
            extra = self._tree.query_ball_point(q, d[-1] * (1 + 1e-12) + 1e-15)
            idx, d = self._order(q, extra, d[-1])
            idx, d = idx[:k], d[:k]
        return (idx, d) if return_distance else idx

    def radius_graph(self, r: float):
        """CSR neighbor lists (self included) for every indexed point.

        Returns ``(indptr, indices, distances)``; each row is ordered by
        (distance, index).
        """
        n = len(self)
        if n == 0:
            return np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0)
        slack = 1e-9 * max(1.0, r)
        pairs = self._tree.query_pairs(r + slack, output_type="ndarray")
        if pairs.size:
            d = np.sqrt(np.sum((self.points[pairs[:, 0]] - self.points[pairs[:, 1]]) ** 2, axis=1))
            keep = d <= r
            pairs, d = pairs[keep], d[keep]
        else:
            d = np.zeros(0)
        rows = np.concatenate([np.arange(n), pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([np.arange(n), pairs[:, 1], pairs[:, 0]])
        dist = np.concatenate([np.zeros(n), d, d])
        order = np.lexsort((cols, dist, rows))
        rows, cols, dist = rows[order], cols[order], dist[order]
        indptr = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return indptr, cols.astype(np.int64), dist


def nn_index(points) -> NeighborIndex:
    return NeighborIndex(points)
