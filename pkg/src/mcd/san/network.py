"""
Spatial attention classifier for 10x10 candidate patches.

    conv(1->16) BN ReLU pool   10 -> 5
    conv(16->32) BN ReLU pool   5 -> 2
    spatial attention (7x7)
    conv(32->64) BN ReLU pool   2 -> 1
    fc 64->32 ReLU dropout, fc 32->2, softmax

Parameters live in a flat ``dict[str, ndarray]``. ``bn*.running_*`` entries
are buffers: they have no gradient and change only via
:func:`update_running_stats`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L

CELL, BACKGROUND = 1, 0


@dataclass(frozen=True)
class ArchConfig:
    patch_h: int = 10
    patch_w: int = 10
    channels: tuple = (16, 32, 64)
    kernel: int = 3
    attn_kernel: int = 7
    fc_hidden: int = 32
    dropout: float = 0.5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def flat_dim(self) -> int:
        h, w = self.patch_h, self.patch_w
        for _ in range(3):
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ValueError("patch too small for three 2x2 pooling stages")
        return self.channels[2] * h * w


BUFFERS = ("running_mean", "running_var")


def is_buffer(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in BUFFERS


def init_params(arch: ArchConfig = ArchConfig(), seed: int = 0) -> dict:
    """Kaiming-uniform (fan-in) weights, zero biases, unit/zero BN affine."""
    rng = np.random.default_rng(seed)

    def kaiming(shape):
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    c1, c2, c3 = arch.channels
    k = arch.kernel
    p = {}
    for i, (cin, cout) in enumerate([(1, c1), (c1, c2), (c2, c3)], 1):
        if i == 3:
            p["attn.w"] = kaiming((1, 2, arch.attn_kernel, arch.attn_kernel))
            p["attn.b"] = np.zeros(1)
        p[f"conv{i}.w"] = kaiming((cout, cin, k, k))
        p[f"conv{i}.b"] = np.zeros(cout)
        p[f"bn{i}.gamma"] = np.ones(cout)
        p[f"bn{i}.beta"] = np.zeros(cout)
        p[f"bn{i}.running_mean"] = np.zeros(cout)
        p[f"bn{i}.running_var"] = np.ones(cout)
    p["fc1.w"] = kaiming((arch.fc_hidden, arch.flat_dim))
    p["fc1.b"] = np.zeros(arch.fc_hidden)
    p["fc2.w"] = kaiming((2, arch.fc_hidden))
    p["fc2.b"] = np.zeros(2)
    return p


def trainable(params: dict) -> list[str]:
    return [k for k in params if not is_buffer(k)]


def check_shapes(params: dict, arch: ArchConfig = ArchConfig()) -> None:
    ref = init_params(arch)
    if set(ref) != set(params):
        missing, extra = set(ref) - set(params), set(params) - set(ref)
        raise ValueError(f"parameter names differ (missing {sorted(missing)}, extra {sorted(extra)})")
    for k, v in ref.items():
        if params[k].shape != v.shape:
            raise ValueError(f"{k}: shape {params[k].shape}, expected {v.shape}")


def arch_from_params(params: dict, patch_h: int = 10, patch_w: int = 10) -> ArchConfig:
    return ArchConfig(
        patch_h=patch_h,
        patch_w=patch_w,
        channels=tuple(params[f"conv{i}.w"].shape[0] for i in (1, 2, 3)),
        kernel=params["conv1.w"].shape[-1],
        attn_kernel=params["attn.w"].shape[-1],
        fc_hidden=params["fc1.w"].shape[0],
    )


def spatial_attention(f, w, b):
    """Attention-refined features for one ``C x H x W`` map (or an NCHW batch)."""
    f = np.asarray(f, dtype=float)
    single = f.ndim == 3
    out, _ = L.spatial_attention_forward(f[None] if single else f, w, b)
    return out[0] if single else out


def _block(x, params, i, arch, train, replay=None):
    k = params[f"conv{i}.w"].shape[-1]
    relu_mask = pool_idx = None
    if replay is not None:
        relu_mask, pool_idx = replay[2], replay[3][1]
    z, c_conv = L.conv2d_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"], k // 2)
    y, c_bn = L.batchnorm_forward(z, params[f"bn{i}.gamma"], params[f"bn{i}.beta"],
                                  params[f"bn{i}.running_mean"], params[f"bn{i}.running_var"],
                                  train, arch.bn_eps)
    r, c_relu = L.relu_forward(y, relu_mask)
    out, c_pool = L.maxpool2_forward(r, pool_idx)
    return out, (c_conv, c_bn, c_relu, c_pool)


def _block_backward(dout, cache, i, grads):
    c_conv, c_bn, c_relu, c_pool = cache
    d = L.maxpool2_backward(dout, c_pool)
    d = L.relu_backward(d, c_relu)
    d, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = L.batchnorm_backward(d, c_bn)
    d, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv2d_backward(d, c_conv)
    return d


def forward(params: dict, batch, mode: str = "eval", rng=None, arch: ArchConfig = ArchConfig(),
            dropout: float | None = None, routing=None):
    """Class probabilities ``(N, 2)`` (column 1 = cell) and a backward cache.

    ``mode="train"`` normalises with batch statistics and applies dropout
    when ``rng`` is given; ``mode="eval"`` uses running statistics and no
    dropout. Neither mode mutates ``params``.

    ``routing`` is a cache from an earlier forward; its ReLU patterns and
    max selections are replayed, which makes the output a smooth function of
    the parameters around that earlier point (used by gradient checking).
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(batch, dtype=float)
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (arch.patch_h, arch.patch_w):
        raise ValueError(f"expected batch of shape (N, 1, {arch.patch_h}, {arch.patch_w}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    train = mode == "train"
    rate = arch.dropout if dropout is None else dropout

    rb = routing["blocks"] if routing is not None else (None, None, None)
    h, c1 = _block(x, params, 1, arch, train, rb[0])
    h, c2 = _block(h, params, 2, arch, train, rb[1])
    h, c_att = L.spatial_attention_forward(h, params["attn.w"], params["attn.b"],
                                           None if routing is None else routing["attn"][2])
    h, c3 = _block(h, params, 3, arch, train, rb[2])
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    h, c_fc1 = L.linear_forward(h, params["fc1.w"], params["fc1.b"])
    h, c_relu = L.relu_forward(h, None if routing is None else routing["relu"])
    h, c_drop = L.dropout_forward(h, rate if train else 0.0, rng)
    logits, c_fc2 = L.linear_forward(h, params["fc2.w"], params["fc2.b"])
    probs = L.softmax(logits)
    cache = {
        "blocks": (c1, c2, c3), "attn": c_att, "flat_shape": flat_shape,
        "fc1": c_fc1, "relu": c_relu, "drop": c_drop, "fc2": c_fc2, "probs": probs,
    }
    return probs, cache


def loss(probs, labels) -> float:
    return L.cross_entropy(probs, labels)


def backward(cache, labels) -> dict:
    """Exact gradients of the mean cross-entropy w.r.t. every trainable parameter."""
    grads = {}
    d = L.softmax_cross_entropy_grad(cache["probs"], labels)
    d, grads["fc2.w"], grads["fc2.b"] = L.linear_backward(d, cache["fc2"])
    d = L.dropout_backward(d, cache["drop"])
    d = L.relu_backward(d, cache["relu"])
    d, grads["fc1.w"], grads["fc1.b"] = L.linear_backward(d, cache["fc1"])
    d = d.reshape(cache["flat_shape"])
    c1, c2, c3 = cache["blocks"]
    d = _block_backward(d, c3, 3, grads)
    d, grads["attn.w"], grads["attn.b"] = L.spatial_attention_backward(d, cache["attn"])
    d = _block_backward(d, c2, 2, grads)
    _block_backward(d, c1, 1, grads)
    return grads


def update_running_stats(params: dict, cache, momentum: float = 0.1) -> None:
    """Fold the batch statistics of a train-mode forward into the buffers."""
    for i, blk in enumerate(cache["blocks"], 1):
        _, c_bn, _, _ = blk
        _, _, _, mu, var, m = c_bn
        unbiased = var * m / (m - 1) if m > 1 else var
        params[f"bn{i}.running_mean"] = (1 - momentum) * params[f"bn{i}.running_mean"] + momentum * mu
        params[f"bn{i}.running_var"] = (1 - momentum) * params[f"bn{i}.running_var"] + momentum * unbiased


def predict_proba(params: dict, patches, arch: ArchConfig | None = None, batch_size: int = 512):
    """Eval-mode cell probability for an ``(N, h, w)`` stack of [0, 1] patches."""
    patches = np.asarray(patches, dtype=float)
    if patches.shape[0] == 0:
        return np.zeros(0)
    if arch is None:
        arch = arch_from_params(params, patches.shape[1], patches.shape[2])
    out = []
    for s in range(0, len(patches), batch_size):
        probs, _ = forward(params, patches[s:s + batch_size, None], "eval", arch=arch)
        out.append(probs[:, CELL])
    return np.concatenate(out)
