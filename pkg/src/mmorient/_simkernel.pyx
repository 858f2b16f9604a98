# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernel: fused pairwise-cosine thresholding.

Computes the symmetric, irreflexive adjacency in one pass over the strict
upper triangle without materializing the lambda x lambda similarity matrix.
mmorient.cmrl falls back to a numpy implementation when this module is not
built.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def threshold_adjacency(double[:, ::1] normed, double threshold):
    """uint8 adjacency of row-normalized features. Rows with zero norm get no
    edges regardless of the threshold sign; the diagonal stays zero."""
    cdef Py_ssize_t n = normed.shape[0]
    cdef Py_ssize_t d = normed.shape[1]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] adj = np.zeros((n, n), dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] nonzero = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[:, ::1] av = adj
    cdef unsigned char[::1] nz = nonzero
    cdef Py_ssize_t i, j, k
    cdef double acc

    with nogil:
        for i in range(n):
            for k in range(d):
                if normed[i, k] != 0.0:
                    nz[i] = 1
                    break
        for i in range(n):
            if not nz[i]:
                continue
            for j in range(i + 1, n):
                if not nz[j]:
                    continue
                acc = 0.0
                for k in range(d):
                    acc += normed[i, k] * normed[j, k]
                if acc >= threshold:
                    av[i, j] = 1
                    av[j, i] = 1
    return adj
