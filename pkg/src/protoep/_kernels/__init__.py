"""Hot-kernel backend selection.

Prefers the compiled Cython extension when it was built; falls back to the
numpy implementations otherwise. Set PROTOEP_PURE_PY=1 to force the fallback
(useful for benchmarking and for verifying backend equivalence).
"""

import os

import numpy as np

from . import _py

if os.environ.get("PROTOEP_PURE_PY"):
    _backend = _py
else:
    try:
        from . import _fast as _backend  # type: ignore[no-redef]
    except ImportError:
        _backend = _py

BACKEND = "compiled" if _backend is not _py else "python"


def window_concat_forward(x, w):
    return _backend.window_concat_forward(np.ascontiguousarray(x), w)


def window_concat_backward(grad_out, w, d):
    return _backend.window_concat_backward(np.ascontiguousarray(grad_out), w, d)


def masked_max_forward(x, lengths):
    return _backend.masked_max_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(lengths, dtype=np.int64)
    )


def masked_max_backward(grad_out, arg, length):
    return _backend.masked_max_backward(
        np.ascontiguousarray(grad_out), np.ascontiguousarray(arg, dtype=np.int64), length
    )
