"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``CSDASA_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("CSDASA_BACKEND", "").lower() != "python":
    try:
        from . import _ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
lstm_gates_forward = _impl.lstm_gates_forward
lstm_gates_backward = _impl.lstm_gates_backward
pairwise_sqdist = _impl.pairwise_sqdist

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "lstm_gates_forward",
    "lstm_gates_backward",
    "pairwise_sqdist",
]
