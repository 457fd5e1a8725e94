"""Flat kd-tree construction shared by the compiled and pure-Python query kernels.

The tree is stored as parallel arrays so the query kernels can walk it without
touching Python objects. Leaves own a contiguous slice of ``perm``.
"""
import numpy as np


class FlatTree:
    __slots__ = ("data", "perm", "start", "end", "left", "right", "lo", "hi",
                 "leafsize")

    def __init__(self, data, leafsize=16):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValueError("tree data must be a non-empty 2-D array")
        n, d = data.shape
        self.data = data
        self.leafsize = max(1, int(leafsize))
        perm = np.arange(n, dtype=np.int64)

        start, end, left, right, lo, hi = [], [], [], [], [], []

        # explicit stack; children are filled in after allocation
        stack = [(0, n, -1, 0)]
        while stack:
            s, e, parent, side = stack.pop()
            node = len(start)
            pts = data[perm[s:e]]
            start.append(s)
            end.append(e)
            left.append(-1)
            right.append(-1)
            lo.append(pts.min(axis=0))
            hi.append(pts.max(axis=0))
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if e - s <= self.leafsize:
                continue
            spread = hi[-1] - lo[-1]
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                continue  # all points coincide; keep as a leaf
            mid = (e - s) // 2
            order = np.argpartition(pts[:, dim], mid, kind="introselect")
            perm[s:e] = perm[s:e][order]
            stack.append((s + mid, e, node, 1))
            stack.append((s, s + mid, node, 0))

        self.perm = perm
        self.start = np.asarray(start, dtype=np.int64)
        self.end = np.asarray(end, dtype=np.int64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.lo = np.ascontiguousarray(lo, dtype=np.float64).reshape(-1, d)
        self.hi = np.ascontiguousarray(hi, dtype=np.float64).reshape(-1, d)

    @property
    def n_nodes(self):
        return self.start.shape[0]
