"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``PROTOFSL_DISABLE_NUMBA=1``
to force the numpy path; it is also used when numba cannot be imported.
Both implementations are importable directly for testing and benchmarking.
"""

import importlib
import os

from . import numpy_impl

_disabled = os.environ.get("PROTOFSL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

numba_impl = None
if not _disabled:
    try:
        numba_impl = importlib.import_module(__name__ + ".numba_impl")
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_impl = None

_impl = numba_impl if numba_impl is not None else numpy_impl
BACKEND = "numba" if _impl is numba_impl else "numpy"

pairwise_distances = _impl.pairwise_distances
knn_rows = _impl.knn_rows
knn_graph = _impl.knn_graph
neg_exp_normalize = _impl.neg_exp_normalize

__all__ = [
    "BACKEND",
    "knn_graph",
    "knn_rows",
    "neg_exp_normalize",
    "numba_impl",
    "numpy_impl",
    "pairwise_distances",
]
