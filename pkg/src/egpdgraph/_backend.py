"""Select the compiled kernels when available, else the pure-Python versions.

Set ``EGPDGRAPH_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("EGPDGRAPH_PURE_PYTHON", "") not in ("", "0"):
    from egpdgraph import _kernels_py as kernels
    BACKEND = "python"
else:
    try:
        from egpdgraph import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # pragma: no cover
        from egpdgraph import _kernels_py as kernels
        BACKEND = "python"

csr_matmat = kernels.csr_matmat
stationary_fill = kernels.stationary_fill

__all__ = ["BACKEND", "csr_matmat", "stationary_fill"]
