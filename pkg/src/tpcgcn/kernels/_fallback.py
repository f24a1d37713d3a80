"""Pure numpy CSR kernels, used when the compiled extension is unavailable."""

import numpy as np


def csr_dense_matmul(indptr, indices, data, dense):
    """Product of a CSR matrix and a dense float64 matrix.

    One vectorized dot per sparse row; deterministic for a fixed build.
    """
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, dense.shape[1]), dtype=np.float64)
    for i in range(n_rows):
        lo, hi = indptr[i], indptr[i + 1]
        if lo != hi:
            out[i] = data[lo:hi] @ dense[indices[lo:hi]]
    return out
