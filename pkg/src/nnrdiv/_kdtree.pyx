# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled k-nearest-neighbour query over a FlatTree.

Results are ordered by (distance, index); the ordering is total, so the output
does not depend on traversal order and matches the linear-scan oracle exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow, fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64

# metric codes: 0 = euclidean, 1 = manhattan, 2 = chebyshev, 3 = general p
cdef inline int _metric_code(double p):
    if p == 2.0:
        return 0
    if p == 1.0:
        return 1
    if p == INFINITY:
        return 2
    return 3


cdef inline double _finish(double acc, int code, double p) noexcept nogil:
    if code == 0:
        return sqrt(acc)
    if code == 3:
        return pow(acc, 1.0 / p)
    return acc


cdef inline double _accum(double acc, double diff, int code, double p) noexcept nogil:
    diff = fabs(diff)
    if code == 0:
        return acc + diff * diff
    if code == 1:
        return acc + diff
    if code == 2:
        return diff if diff > acc else acc
    return acc + pow(diff, p)


cdef inline void _insert(double dist, i64 idx, double* bd, i64* bi,
                         Py_ssize_t* count, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t j = count[0]
    if j == k:
        if dist > bd[k - 1] or (dist == bd[k - 1] and idx > bi[k - 1]):
            return
        j = k - 1
    else:
        count[0] = j + 1
    while j > 0 and (bd[j - 1] > dist or (bd[j - 1] == dist and bi[j - 1] > idx)):
        bd[j] = bd[j - 1]
        bi[j] = bi[j - 1]
        j -= 1
    bd[j] = dist
    bi[j] = idx


cdef double _box_bound(const f64* q, const f64[:, ::1] lo, const f64[:, ::1] hi,
                       Py_ssize_t node, Py_ssize_t d, int code, double p) noexcept nogil:
    cdef double acc = 0.0, gap
    cdef Py_ssize_t j
    for j in range(d):
        if q[j] < lo[node, j]:
            gap = lo[node, j] - q[j]
        elif q[j] > hi[node, j]:
            gap = q[j] - hi[node, j]
        else:
            gap = 0.0
        acc = _accum(acc, gap, code, p)
    return _finish(acc, code, p)


def query_batch(tree, queries, Py_ssize_t k, exclude, double p):
    """Return ``(dist, idx)`` arrays of shape (q, k) for every query row.

    ``exclude[i]`` is a data index skipped for query ``i`` (``-1`` for none).
    """
    cdef const f64[:, ::1] data = tree.data
    cdef const i64[::1] perm = tree.perm
    cdef const i64[::1] start = tree.start
    cdef const i64[::1] end = tree.end
    cdef const i64[::1] left = tree.left
    cdef const i64[::1] right = tree.right
    cdef const f64[:, ::1] lo = tree.lo
    cdef const f64[:, ::1] hi = tree.hi
    cdef const f64[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const i64[::1] excl = np.ascontiguousarray(exclude, dtype=np.int64)

    cdef Py_ssize_t nq = qs.shape[0], d = data.shape[1]
    cdef Py_ssize_t n_nodes = start.shape[0]
    out_d = np.empty((nq, k), dtype=np.float64)
    out_i = np.empty((nq, k), dtype=np.int64)
    cdef f64[:, ::1] od = out_d
    cdef i64[:, ::1] oi = out_i
    cdef int code = _metric_code(p)

    cdef Py_ssize_t* stack = <Py_ssize_t*> malloc(n_nodes * sizeof(Py_ssize_t))
    cdef double* sbound = <double*> malloc(n_nodes * sizeof(double))
    if stack == NULL or sbound == NULL:
        free(stack)
        free(sbound)
        raise MemoryError()

    cdef Py_ssize_t qi, top, node, a, b, jj, j, count
    cdef i64 idx, skip
    cdef double bound, acc, dist, bl, br
    cdef const f64* q
    try:
        with nogil:
            for qi in range(nq):
                q = &qs[qi, 0]
                skip = excl[qi]
                count = 0
                top = 0
                stack[0] = 0
                sbound[0] = _box_bound(q, lo, hi, 0, d, code, p)
                top = 1
                while top > 0:
                    top -= 1
                    node = stack[top]
                    bound = sbound[top]
                    if count == k and bound > od[qi, k - 1]:
                        continue
                    if left[node] < 0:
                        for jj in range(start[node], end[node]):
                            idx = perm[jj]
                            if idx == skip:
                                continue
                            acc = 0.0
                            for j in range(d):
                                acc = _accum(acc, data[idx, j] - q[j], code, p)
                            dist = _finish(acc, code, p)
                            _insert(dist, idx, &od[qi, 0], &oi[qi, 0], &count, k)
                        continue
                    a = left[node]
                    b = right[node]
                    bl = _box_bound(q, lo, hi, a, d, code, p)
                    br = _box_bound(q, lo, hi, b, d, code, p)
                    # push the farther child first so the nearer one is popped next
                    if bl <= br:
                        stack[top] = b
                        sbound[top] = br
                        stack[top + 1] = a
                        sbound[top + 1] = bl
                    else:
                        stack[top] = a
                        sbound[top] = bl
                        stack[top + 1] = b
                        sbound[top + 1] = br
                    top += 2
                if count < k:
                    with gil:
                        raise ValueError("k exceeds the number of eligible points")
    finally:
        free(stack)
        free(sbound)
    return out_d, out_i
