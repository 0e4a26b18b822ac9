"""Forward/backward pairs for the few layer types the networks need.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Images are NHWC throughout.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def glorot(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dout, x, W):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    dW = flat_x.T @ flat_d
    db = flat_d.sum(axis=0)
    dx = dout @ W.T
    return dx, dW, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def set_max_forward(x, axis):
    """Element-wise max over ``axis``; the first maximal element takes the gradient."""
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    return out, (idx, x.shape, axis)


def set_max_backward(dout, cache):
    idx, shape, axis = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(dout, axis), axis=axis)
    return dx


# Images per im2col block; keeps the column matrix small enough to stay in cache.
CONV_CHUNK = 32


def _cols(xp, H, Wd):
    n, C = xp.shape[0], xp.shape[3]
    return sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * H * Wd, C * 9)


def conv3x3_forward(x, W, b):
    """3x3 convolution, stride 1, zero padding 1. ``W`` is (Cout, Cin, 3, 3)."""
    N, H, Wd, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    wmat = W.reshape(W.shape[0], -1).T
    out = np.empty((N, H, Wd, W.shape[0]), dtype=np.result_type(x, W))
    for s in range(0, N, CONV_CHUNK):
        e = min(N, s + CONV_CHUNK)
        out[s:e] = (_cols(xp[s:e], H, Wd) @ wmat + b).reshape(e - s, H, Wd, -1)
    return out, (xp, x.shape)


def conv3x3_backward(dout, cache, W, need_dx=True):
    """Gradients of ``conv3x3_forward``; ``dx`` is ``None`` when ``need_dx`` is false.

    Columns are rebuilt block by block; ``dW`` accumulates in float64 in block order.
    """
    xp, (N, H, Wd, C) = cache
    cout = W.shape[0]
    wm = W.reshape(cout, -1)
    dWt = np.zeros((C * 9, cout), dtype=np.float64)
    dx = np.empty((N, H, Wd, C), dtype=dout.dtype) if need_dx else None
    for s in range(0, N, CONV_CHUNK):
        e = min(N, s + CONV_CHUNK)
        d2 = dout[s:e].reshape(-1, cout)
        dWt += _cols(xp[s:e], H, Wd).T @ d2
        if need_dx:
            dcols = (d2 @ wm).reshape(e - s, H, Wd, C, 3, 3)
            dxp = np.zeros((e - s, H + 2, Wd + 2, C), dtype=dout.dtype)
            for ky in range(3):
                for kx in range(3):
                    dxp[:, ky : ky + H, kx : kx + Wd, :] += dcols[..., ky, kx]
            dx[s:e] = dxp[:, 1:-1, 1:-1, :]
    db = dout.reshape(-1, cout).sum(axis=0)
    return dx, dWt.T.reshape(W.shape).astype(W.dtype), db


def _quadrants(x):
    h2, w2 = x.shape[1] // 2, x.shape[2] // 2
    return [(dy, dx, x[:, dy : 2 * h2 : 2, dx : 2 * w2 : 2, :]) for dy in (0, 1) for dx in (0, 1)]


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    q = [v for _, _, v in _quadrants(x)]
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    return out, (x, out)


def maxpool2_backward(dout, cache):
    """Route each gradient to the first maximal element of its window, in row-major order."""
    x, out = cache
    dx = np.zeros(x.shape, dtype=dout.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for dy, dxx, v in _quadrants(x):
        hit = (v == out) & ~taken
        h2, w2 = out.shape[1], out.shape[2]
        dx[:, dy : 2 * h2 : 2, dxx : 2 * w2 : 2, :] = dout * hit
        taken |= hit
    return dx


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels)
    z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    B = logits.shape[0]
    loss = -logp[np.arange(B), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1.0
    return float(loss), dlogits / B
