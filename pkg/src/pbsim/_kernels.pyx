# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sequence evolution. Mirrors ``_kernels_py.evolve``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def evolve(
    const cnp.int64_t[::1] gates,
    const cnp.int64_t[::1] offsets,
    const cnp.int64_t[::1] channel_of,
    const double[:, :, :, ::1] fused,
    const double[:, ::1] shift,
    const double[::1] init,
):
    cdef Py_ssize_t n_seq = offsets.shape[0] - 1
    cdef Py_ssize_t s, k, c, g
    cdef double a0, a1, a2, b0, b1, b2
    out_arr = np.empty((n_seq, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for s in range(n_seq):
            c = channel_of[s]
            a0 = init[0]
            a1 = init[1]
            a2 = init[2]
            for k in range(offsets[s], offsets[s + 1]):
                g = gates[k]
                b0 = fused[c, g, 0, 0] * a0 + fused[c, g, 0, 1] * a1 + fused[c, g, 0, 2] * a2 + shift[c, 0]
                b1 = fused[c, g, 1, 0] * a0 + fused[c, g, 1, 1] * a1 + fused[c, g, 1, 2] * a2 + shift[c, 1]
                b2 = fused[c, g, 2, 0] * a0 + fused[c, g, 2, 1] * a1 + fused[c, g, 2, 2] * a2 + shift[c, 2]
                a0 = b0
                a1 = b1
                a2 = b2
            out[s, 0] = a0
            out[s, 1] = a1
            out[s, 2] = a2
    return out_arr
