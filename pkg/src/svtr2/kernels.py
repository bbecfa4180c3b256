"""Selects the compiled kernels when the extension is built, the numpy twins otherwise.

Set ``SVTR2_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _kernels_py as python

BACKEND = "python"
impl = python

if os.environ.get("SVTR2_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not compiled
        pass

ctc_forward_backward = impl.ctc_forward_backward
layer_norm_forward = impl.layer_norm_forward
layer_norm_backward = impl.layer_norm_backward
