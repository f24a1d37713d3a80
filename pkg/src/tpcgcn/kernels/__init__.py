"""CSR sparse-times-dense kernels with backend selection at import.

The compiled Cython extension is preferred when it was built; otherwise the
numpy fallback is used. Both backends implement the same contract: given a
CSR matrix (indptr, indices, data) and a dense row-major float64 matrix,
return the float64 product. Results of the two backends agree to rounding
(accumulation order may differ), and each backend individually is
deterministic. ``benchmarks/bench_spmm.py`` compares their speed.

Set ``TPCGCN_KERNELS=python`` to force the fallback even when the extension
is available.
"""

import os

from tpcgcn.kernels import _fallback

try:
    from tpcgcn.kernels import _spmm_cy as _compiled
except ImportError:
    _compiled = None

if _compiled is not None and os.environ.get("TPCGCN_KERNELS", "") != "python":
    BACKEND = "cython"
    csr_dense_matmul = _compiled.csr_dense_matmul
else:
    BACKEND = "python"
    csr_dense_matmul = _fallback.csr_dense_matmul

__all__ = ["BACKEND", "csr_dense_matmul", "_fallback", "_compiled"]
