# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels: the hot inner loop of every GCN forward/backward."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_dense_matmul(const cnp.int64_t[::1] indptr,
                     const cnp.int64_t[::1] indices,
                     const double[::1] data,
                     const double[:, ::1] dense):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = dense.shape[1]
    out_arr = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, c
    cdef cnp.int64_t j
    cdef double v
    for i in range(n_rows):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            v = data[k]
            for c in range(n_cols):
                out[i, c] += v * dense[j, c]
    return out_arr
