"""Central finite-difference check of :func:`network.backward`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N


@dataclass
class TensorCheck:
    name: str
    rel_error: float
    checked: int


def _rel(a, b, floor):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def check_gradients(params, batch, labels, arch=N.ArchConfig(), eps=1e-3, max_elements=48,
                    directions=1, floor=1e-6, seed=0, freeze_routing=True) -> list[TensorCheck]:
    """Compare analytic gradients with central differences of the loss.

    Train-mode forward with dropout disabled. Tensors with more than
    ``max_elements`` entries are checked on a seeded subset of entries plus
    ``directions`` random directional derivatives over the whole tensor.

    With ``freeze_routing`` the ReLU patterns and max selections of the
    unperturbed forward are replayed while perturbing, so a step of ``eps``
    does not hop across a kink of the piecewise-linear units; the derivative
    at the base point is the same either way.
    """
    rng = np.random.default_rng(seed)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    _, cache = N.forward(params, batch, "train", arch=arch, dropout=0.0)
    grads = N.backward(cache, labels)
    routing = cache if freeze_routing else None

    def loss_at():
        probs, _ = N.forward(params, batch, "train", arch=arch, dropout=0.0, routing=routing)
        return N.loss(probs, labels)

    def central(name, direction):
        base = params[name].copy()
        params[name] = base + eps * direction
        up = loss_at()
        params[name] = base - eps * direction
        down = loss_at()
        params[name] = base
        return (up - down) / (2 * eps)

    results = []
    for name in N.trainable(params):
        g = grads[name]
        size = g.size
        idx = np.arange(size) if size <= max_elements else np.sort(rng.choice(size, max_elements, replace=False))
        analytic, numeric = [], []
        for i in idx:
            e = np.zeros(size)
            e[i] = 1.0
            analytic.append(g.ravel()[i])
            numeric.append(central(name, e.reshape(g.shape)))
        if size > max_elements:
            for _ in range(directions):
                v = rng.standard_normal(g.shape)
                v /= np.linalg.norm(v)
                analytic.append(float((g * v).sum()))
                numeric.append(central(name, v))
        results.append(TensorCheck(name, _rel(np.array(analytic), np.array(numeric), floor), len(analytic)))
    return results


def random_case(seed: int, arch=N.ArchConfig(), n: int = 4):
    """Random parameters (non-trivial biases and BN affine) plus a batch."""
    rng = np.random.default_rng(seed)
    params = N.init_params(arch, seed)
    for k in N.trainable(params):
        if k.endswith(".b") or k.endswith(".beta"):
            params[k] = rng.normal(0.0, 0.1, params[k].shape)
        elif k.endswith(".gamma"):
            params[k] = 1.0 + rng.normal(0.0, 0.1, params[k].shape)
    batch = rng.random((n, 1, arch.patch_h, arch.patch_w))
    labels = rng.integers(0, 2, n)
    return params, batch, labels
