"""Pure-Python fallback for the compiled query kernel.

Same traversal and the same floating-point operation order as ``_kdtree.pyx``,
with numpy doing the per-leaf distance work.
"""
import math

import numpy as np


def _metric_code(p):
    if p == 2.0:
        return 0
    if p == 1.0:
        return 1
    if p == math.inf:
        return 2
    return 3


def libm_pow(values, p):
    """Elementwise ``pow`` through libm, bit-identical to the compiled kernel."""
    values = np.asarray(values, dtype=np.float64)
    flat = [math.pow(v, p) for v in values.ravel().tolist()]
    return np.asarray(flat, dtype=np.float64).reshape(values.shape)


def _leaf_distances(points, q, code, p):
    acc = np.zeros(points.shape[0])
    for j in range(points.shape[1]):
        diff = np.abs(points[:, j] - q[j])
        if code == 0:
            acc = acc + diff * diff
        elif code == 1:
            acc = acc + diff
        elif code == 2:
            acc = np.maximum(acc, diff)
        else:
            acc = acc + libm_pow(diff, p)
    if code == 0:
        return np.sqrt(acc)
    if code == 3:
        return libm_pow(acc, 1.0 / p)
    return acc


def _box_bound(q, lo, hi, code, p):
    acc = 0.0
    for qj, lj, hj in zip(q, lo, hi):
        if qj < lj:
            gap = lj - qj
        elif qj > hj:
            gap = qj - hj
        else:
            gap = 0.0
        if code == 0:
            acc += gap * gap
        elif code == 1:
            acc += gap
        elif code == 2:
            acc = max(acc, gap)
        else:
            acc += math.pow(gap, p)
    if code == 0:
        return math.sqrt(acc)
    if code == 3:
        return math.pow(acc, 1.0 / p)
    return acc


def query_batch(tree, queries, k, exclude, p):
    """Return ``(dist, idx)`` arrays of shape (q, k) for every query row."""
    data = tree.data
    perm, start, end = tree.perm, tree.start, tree.end
    left, right = tree.left.tolist(), tree.right.tolist()
    lo, hi = tree.lo.tolist(), tree.hi.tolist()
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    exclude = np.asarray(exclude, dtype=np.int64)
    code = _metric_code(p)
    nq = queries.shape[0]
    out_d = np.empty((nq, k))
    out_i = np.empty((nq, k), dtype=np.int64)

    leaf_idx = {}
    for node in range(tree.n_nodes):
        if left[node] < 0:
            ids = perm[start[node]:end[node]]
            leaf_idx[node] = (ids, data[ids])

    for qi in range(nq):
        q = queries[qi]
        ql = q.tolist()
        skip = int(exclude[qi])
        best_d = np.empty(0)
        best_i = np.empty(0, dtype=np.int64)
        worst = math.inf
        stack = [(0, _box_bound(ql, lo[0], hi[0], code, p))]
        while stack:
            node, bound = stack.pop()
            if best_d.shape[0] == k and bound > worst:
                continue
            if left[node] < 0:
                ids, pts = leaf_idx[node]
                dist = _leaf_distances(pts, q, code, p)
                if skip >= 0:
                    keep = ids != skip
                    ids, dist = ids[keep], dist[keep]
                cand_d = np.concatenate([best_d, dist])
                cand_i = np.concatenate([best_i, ids])
                order = np.lexsort((cand_i, cand_d))[:k]
                best_d, best_i = cand_d[order], cand_i[order]
                if best_d.shape[0] == k:
                    worst = best_d[-1]
                continue
            a, b = left[node], right[node]
            bl = _box_bound(ql, lo[a], hi[a], code, p)
            br = _box_bound(ql, lo[b], hi[b], code, p)
            if bl <= br:
                stack.append((b, br))
                stack.append((a, bl))
            else:
                stack.append((a, bl))
                stack.append((b, br))
        if best_d.shape[0] < k:
            raise ValueError("k exceeds the number of eligible points")
        out_d[qi] = best_d
        out_i[qi] = best_i
    return out_d, out_i
