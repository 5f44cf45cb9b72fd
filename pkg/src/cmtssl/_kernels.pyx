# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for gradient-difficulty scoring and confusion counting."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

AGG_AVERAGE = 0
AGG_MAXIMUM = 1
AGG_STD = 2


cdef inline Py_ssize_t _clip(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef void _magnitude(const double[:, :, ::1] cube, double[:, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t H = cube.shape[0], W = cube.shape[1], C = cube.shape[2]
    cdef Py_ssize_t i, j, c, im, ip, jm, jp
    cdef double gx, gy, gz
    for i in range(H):
        im = _clip(i - 1, H)
        ip = _clip(i + 1, H)
        for j in range(W):
            jm = _clip(j - 1, W)
            jp = _clip(j + 1, W)
            for c in range(C):
                gx = (3.0 * (cube[im, jp, c] - cube[im, jm, c])
                      + 10.0 * (cube[i, jp, c] - cube[i, jm, c])
                      + 3.0 * (cube[ip, jp, c] - cube[ip, jm, c]))
                gy = (3.0 * (cube[ip, jm, c] - cube[im, jm, c])
                      + 10.0 * (cube[ip, j, c] - cube[im, j, c])
                      + 3.0 * (cube[ip, jp, c] - cube[im, jp, c]))
                if c + 1 < C:
                    gz = cube[i, j, c + 1] - cube[i, j, c]
                else:
                    gz = 0.0
                out[i, j, c] = sqrt(gx * gx + gy * gy + gz * gz)


def gradient_magnitude(const double[:, :, ::1] cube):
    out = np.empty((cube.shape[0], cube.shape[1], cube.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] view = out
    with nogil:
        _magnitude(cube, view)
    return out


def batch_scores(const double[:, :, :, ::1] cubes, int aggregation):
    """Aggregate gradient magnitude of every cube in an (N, H, W, C) stack."""
    cdef Py_ssize_t N = cubes.shape[0], H = cubes.shape[1], W = cubes.shape[2], C = cubes.shape[3]
    cdef Py_ssize_t n, i, j, c
    cdef double total, best, mean, acc, d
    cdef double count = <double>(H * W * C)
    scores = np.empty(N, dtype=np.float64)
    cdef double[::1] sview = scores
    buf = np.empty((H, W, C), dtype=np.float64)
    cdef double[:, :, ::1] mag = buf
    with nogil:
        for n in range(N):
            _magnitude(cubes[n], mag)
            total = 0.0
            best = 0.0
            for i in range(H):
                for j in range(W):
                    for c in range(C):
                        total = total + mag[i, j, c]
                        if mag[i, j, c] > best:
                            best = mag[i, j, c]
            mean = total / count
            if aggregation == 0:
                sview[n] = mean
            elif aggregation == 1:
                sview[n] = best
            else:
                acc = 0.0
                for i in range(H):
                    for j in range(W):
                        for c in range(C):
                            d = mag[i, j, c] - mean
                            acc = acc + d * d
                sview[n] = sqrt(acc / count)
    return scores


def confusion_counts(const long long[::1] truth, const long long[::1] pred,
                     long long ignore_id, Py_ssize_t num_classes):
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    cdef long long[:, ::1] cview = counts
    cdef Py_ssize_t k, n = truth.shape[0]
    with nogil:
        for k in range(n):
            if truth[k] == ignore_id:
                continue
            cview[truth[k], pred[k]] += 1
    return counts
