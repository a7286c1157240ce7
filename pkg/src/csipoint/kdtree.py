"""k-d tree for exact nearest-neighbour queries in 3-D.

Distances use the same arithmetic as ``metrics.pairwise_sq_dists`` and ties
resolve to the lowest point index, so answers match a linear scan exactly.
"""

from __future__ import annotations

import numpy as np


class KDTree:
    def __init__(self, points, leafsize: int = 16):
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("KDTree needs a non-empty (N, d) array")
        self.leafsize = max(1, int(leafsize))
        # node: (axis, split, left, right) or (-1, indices, None, None)
        self.nodes: list[tuple] = []
        self.root = self._build(np.arange(len(self.points)), 0)

    def _build(self, idx: np.ndarray, depth: int) -> int:
        node_id = len(self.nodes)
        if len(idx) <= self.leafsize:
            self.nodes.append((-1, np.sort(idx), None, None))
            return node_id
        pts = self.points[idx]
        axis = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        order = np.argsort(pts[:, axis], kind="stable")
        half = len(idx) // 2
        split = float(pts[order[half], axis])
        if pts[order[0], axis] == pts[order[-1], axis]:
            self.nodes.append((-1, np.sort(idx), None, None))
            return node_id
        self.nodes.append(None)
        left = self._build(idx[order[:half]], depth + 1)
        right = self._build(idx[order[half:]], depth + 1)
        self.nodes[node_id] = (axis, split, left, right)
        return node_id

    def _sq(self, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
        pts = self.points[idx]
        d = q - pts
        total = d[:, 0] * d[:, 0]
        for a in range(1, d.shape[1]):
            total = total + d[:, a] * d[:, a]
        return total

    def query_one(self, q) -> tuple[int, float]:
        q = np.asarray(q, dtype=np.float64)
        best_i, best_d = -1, np.inf
        stack = [(self.root, 0.0)]
        while stack:
            node_id, bound = stack.pop()
            if bound > best_d:
                continue
            axis, split, left, right = self.nodes[node_id]
            if axis < 0:
                d2 = self._sq(q, split)
                k = int(np.argmin(d2))
                dk = float(d2[k])
                ik = int(split[k])
                if dk < best_d or (dk == best_d and ik < best_i):
                    best_i, best_d = ik, dk
                continue
            diff = float(q[axis]) - split
            near, far = (left, right) if diff < 0 else (right, left)
            # far side first on the stack so the near side is explored first
            stack.append((far, diff * diff))
            stack.append((near, 0.0))
        return best_i, best_d

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        idx = np.empty(len(queries), dtype=np.int64)
        dist = np.empty(len(queries))
        for n, q in enumerate(queries):
            idx[n], dist[n] = self.query_one(q)
        return idx, dist
