"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting
``CTCILM_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _kernels_py

if os.environ.get("CTCILM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

ctc_forward = _impl.ctc_forward
prefix_scores = _impl.prefix_scores
posterior_rows = _impl.posterior_rows
softmax_descent = _impl.softmax_descent

__all__ = ["BACKEND", "ctc_forward", "posterior_rows", "prefix_scores", "softmax_descent"]
