# cython: language_level=3
"""Compiled versions of the hot kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, rint

cnp.import_array()


def nearest_index(query, matrix, candidates=None, metric="euclidean"):
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef const double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef const cnp.int64_t[::1] cand
    cdef Py_ssize_t n, d = m.shape[1], i, j, row, best_row = -1
    cdef double acc, diff, best = 0.0
    cdef bint use_cand = candidates is not None
    cdef bint euclid

    if metric == "euclidean":
        euclid = True
    elif metric == "cosine":
        euclid = False
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if q.shape[0] != d:
        raise ValueError("query dimension does not match the matrix")
    if use_cand:
        cand = np.ascontiguousarray(candidates, dtype=np.int64)
        n = cand.shape[0]
    else:
        n = m.shape[0]
    if n == 0:
        raise ValueError("nothing to search")

    with nogil:
        for i in range(n):
            row = cand[i] if use_cand else i
            acc = 0.0
            if euclid:
                for j in range(d):
                    diff = m[row, j] - q[j]
                    acc += diff * diff
                if best_row < 0 or acc < best:
                    best = acc
                    best_row = row
            else:
                for j in range(d):
                    acc += m[row, j] * q[j]
                if best_row < 0 or acc > best:
                    best = acc
                    best_row = row
    if euclid:
        best = sqrt(best)
    return int(best_row), float(best)


def circular_box_blur(img, kernel):
    cdef const cnp.uint8_t[:, ::1] src = np.ascontiguousarray(img, dtype=np.uint8)
    cdef Py_ssize_t rows = src.shape[0], cols = src.shape[1], r, c, j, lo, hi
    cdef Py_ssize_t k = kernel, half = k // 2
    cdef long long s
    cdef double dk = <double>k
    out = np.empty((rows, cols), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] dst = out
    with nogil:
        for r in range(rows):
            s = 0
            for j in range(-half, half + 1):
                s += src[r, ((j % cols) + cols) % cols]
            # lo leaves the window and hi enters it as c advances; both wrap
            lo = ((-half % cols) + cols) % cols
            hi = (half + 1) % cols
            for c in range(cols):
                dst[r, c] = <cnp.uint8_t>rint(<double>s / dk)
                s += <long long>src[r, hi] - <long long>src[r, lo]
                lo += 1
                if lo == cols:
                    lo = 0
                hi += 1
                if hi == cols:
                    hi = 0
    return out
