"""Pure-numpy implementations of the encoder hot kernels.

Selected automatically when the compiled extension is unavailable (or when
PROTOEP_PURE_PY is set). Semantics must stay bit-identical to the compiled
versions in ``_fast.pyx``; ``tests/test_kernels.py`` enforces this when both
backends are importable.
"""

import numpy as np

NEG_LARGE = -1e30


def window_concat_forward(x, w):
    """Concatenate each length-w window of rows (zero padded, stride 1).

    x: (B, L, D) float64. Returns (B, L, w*D) where output position i holds
    [x[i-lpad], ..., x[i+rpad]] with lpad = (w-1)//2.
    """
    b, length, d = x.shape
    lpad = (w - 1) // 2
    padded = np.zeros((b, length + w - 1, d), dtype=np.float64)
    padded[:, lpad:lpad + length, :] = x
    out = np.empty((b, length, w, d), dtype=np.float64)
    for k in range(w):
        out[:, :, k, :] = padded[:, k:k + length, :]
    return out.reshape(b, length, w * d)


def window_concat_backward(grad_out, w, d):
    """Adjoint of window_concat_forward. grad_out: (B, L, w*D) -> (B, L, D)."""
    b, length, _ = grad_out.shape
    lpad = (w - 1) // 2
    g = grad_out.reshape(b, length, w, d)
    gpad = np.zeros((b, length + w - 1, d), dtype=np.float64)
    for k in range(w):
        gpad[:, k:k + length, :] += g[:, :, k, :]
    return np.ascontiguousarray(gpad[:, lpad:lpad + length, :])


def masked_max_forward(x, lengths):
    """Columnwise max over the first lengths[b] positions of each row block.

    x: (B, L, H); lengths: (B,) int64 with all entries >= 1.
    Returns (values (B, H), argmax (B, H) int64). Ties keep the lowest index.
    """
    b, length, h = x.shape
    valid = np.arange(length)[None, :] < np.asarray(lengths)[:, None]
    xm = np.where(valid[:, :, None], x, NEG_LARGE)
    arg = np.argmax(xm, axis=1)
    val = np.take_along_axis(xm, arg[:, None, :], axis=1)[:, 0, :]
    return val, arg.astype(np.int64)


def masked_max_backward(grad_out, arg, length):
    """Route gradients to the argmax positions. Returns (B, L, H)."""
    b, h = grad_out.shape
    gx = np.zeros((b, length, h), dtype=np.float64)
    np.put_along_axis(gx, arg[:, None, :], grad_out[:, None, :], axis=1)
    return gx
