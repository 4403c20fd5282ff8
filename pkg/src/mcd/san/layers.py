"""
Layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays are NCHW float64.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    # (N, C, Ho, Wo, k, k) -> (N*Ho*Wo, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(f, -1).T + b
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, w, pad)


def conv2d_backward(dout, cache):
    x_shape, cols, w, pad = cache
    n, c, h, wd = x_shape
    f, _, k, _ = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=1e-5):
    """Per-channel normalisation over (N, H, W).

    Running statistics are not touched here; in train mode the batch
    statistics are returned in the cache for the caller to fold in.
    """
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    m = x.shape[0] * x.shape[2] * x.shape[3]
    return out, (xhat, inv_std, gamma, mu, var, m)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, _, _, m = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


def relu_forward(x, mask=None):
    """``mask`` replays a previous activation pattern instead of ``x > 0``."""
    if mask is None:
        mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x, idx=None):
    """2x2 / stride 2; a trailing odd row or column is dropped. ``idx``
    replays previously selected window positions."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :, :2 * h2, :2 * w2]
    blocks = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    if idx is None:
        idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2_backward(dout, cache):
    x_shape, idx = cache
    n, c, h, w = x_shape
    h2, w2 = dout.shape[2], dout.shape[3]
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :, :2 * h2, :2 * w2] = (
        blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return dx


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def spatial_attention_forward(f, w, b, arg=None):
    """``f * sigmoid(conv([mean_c f; max_c f]))`` with a same-padded kernel."""
    k = w.shape[-1]
    avg = f.mean(axis=1, keepdims=True)
    if arg is None:
        arg = f.argmax(axis=1)[:, None]
    mx = np.take_along_axis(f, arg, axis=1)
    pooled = np.concatenate([avg, mx], axis=1)
    z, conv_cache = conv2d_forward(pooled, w, b, k // 2)
    a = sigmoid(z)
    return f * a, (f, a, arg, conv_cache)


def spatial_attention_backward(dout, cache):
    f, a, arg, conv_cache = cache
    c = f.shape[1]
    df = dout * a
    da = (dout * f).sum(axis=1, keepdims=True)
    dz = da * a * (1.0 - a)
    dpooled, dw, db = conv2d_backward(dz, conv_cache)
    df += dpooled[:, 0:1] / c
    np.put_along_axis(df, arg, np.take_along_axis(df, arg, axis=1) + dpooled[:, 1:2], axis=1)
    return df, dw, db


def linear_forward(x, w, b):
    return x @ w.T + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def dropout_forward(x, rate, rng):
    if rate <= 0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, keep):
    return dout if keep is None else dout * keep


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels) -> float:
    """Mean negative log-probability of the true class (floored at 1e-12)."""
    labels = np.asarray(labels, dtype=int)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-12))))


def softmax_cross_entropy_grad(probs, labels):
    """d loss / d logits = (probs - onehot) / N."""
    labels = np.asarray(labels, dtype=int)
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return d / len(labels)
