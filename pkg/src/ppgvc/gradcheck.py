"""Finite-difference verification of the analytic gradients.

Relative error is measured per parameter tensor as
``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)`` over a
random subset of entries, which stays meaningful when individual entries are
near zero.
"""
from __future__ import annotations

import numpy as np

from . import adversarial, neural
from .neural import NetworkConfig

H = 1e-4
FLOOR = 1e-8


def _rel(a, n):
    a, n = np.asarray(a), np.asarray(n)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), FLOOR))


def _entries(shape, k, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def check_loss(params: dict, loss_fn, grads: dict, rng, per_tensor: int = 6) -> dict:
    """Relative error per tensor for an arbitrary ``loss_fn()`` over ``params``."""
    out = {}
    for name, arr in params.items():
        idx = _entries(arr.shape, per_tensor, rng)
        num = neural.numerical_gradient(loss_fn, params, name, idx, H)
        ana = np.array([grads[name][i] for i in idx])
        out[name] = _rel(ana, num)
    return out


def check_network(net: neural.Network, X, Y, rng, per_tensor: int = 6) -> dict:
    """MSE gradients of a generator network (dense or bidirectional LSTM)."""
    grads, _ = neural.backward(net, X, Y)
    return check_loss(net.params, lambda: neural.loss_mse(neural.forward(net, X), Y), grads, rng, per_tensor)


def _bce(d, real, fake):
    z = adversarial.logits(d, np.concatenate([real, fake]))
    label = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    return float(np.mean(label * np.logaddexp(0, -z) + (1 - label) * np.logaddexp(0, z)))


def check_discriminator(d: adversarial.Discriminator, real, fake, rng, per_tensor: int = 6) -> dict:
    """BCE gradients of the discriminator weights plus the generator-side input gradient.

    The discriminator is driven through :func:`adversarial.bce_step` with a
    zero learning-rate optimiser so that the exact gradient the training loop
    applies is the one compared.
    """
    X = np.concatenate([real, fake]).reshape(len(real) + len(fake), -1)
    label = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    z, cache = neural.forward_train(d.network, X)
    dz = (neural._sigmoid(z[:, 0]) - label) / len(label)
    grads, _ = neural.backprop(d.network, cache, dz[:, None])
    out = check_loss(d.network.params, lambda: _bce(d, real, fake), grads, rng, per_tensor)

    # gradient of the non-saturating generator loss -log D(x) w.r.t. the fake window itself
    fake = np.array(fake, dtype=np.float64)
    zf, cf = neural.forward_train(d.network, fake.reshape(len(fake), -1))
    dzf = (neural._sigmoid(zf[:, 0]) - 1.0) / len(fake)
    _, dx = neural.backprop(d.network, cf, dzf[:, None])
    dx = dx.reshape(fake.shape)

    def gen_loss():
        return float(np.mean(np.logaddexp(0, -adversarial.logits(d, fake))))

    idx = _entries(fake.shape, per_tensor, rng)
    num = neural.numerical_gradient(gen_loss, {"x": fake}, "x", idx, H)
    out["input"] = _rel([dx[i] for i in idx], num)
    return out


def random_instance(kind: str, seed: int):
    """A small seeded problem: ``(network, X, Y)`` for ``kind`` in feedforward/birecurrent."""
    rng = np.random.default_rng(seed)
    din, dout = int(rng.integers(3, 9)), int(rng.integers(2, 6))
    hidden = tuple(int(h) for h in rng.integers(3, 8, size=int(rng.integers(1, 3))))
    net = neural.init_network(NetworkConfig(kind, din, dout, hidden, seed=seed))
    for v in net.params.values():
        v += 0.1 * rng.standard_normal(v.shape)   # non-zero biases exercise every term
    T = int(rng.integers(3, 7))
    return net, rng.standard_normal((T, din)), rng.standard_normal((T, dout))


def random_discriminator(seed: int):
    rng = np.random.default_rng(seed)
    W, P = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    d = adversarial.make_discriminator(W, P, tuple(int(h) for h in rng.integers(3, 7, size=2)), seed=seed)
    for v in d.network.params.values():
        v += 0.3 * rng.standard_normal(v.shape)
    n = int(rng.integers(2, 5))
    return d, rng.standard_normal((n, W, P)), rng.standard_normal((n, W, P)) + 0.5


def run_suite(n_instances: int = 8, seed0: int = 0) -> list:
    """Gradient checks over ``n_instances`` seeds for each of dense, BiLSTM and discriminator.

    Returns ``(kind, seed, worst relative error)`` rows.
    """
    rows = []
    for s in range(seed0, seed0 + n_instances):
        rng = np.random.default_rng(10_000 + s)
        for kind in ("feedforward", "birecurrent"):
            net, X, Y = random_instance(kind, s)
            rows.append((kind, s, max(check_network(net, X, Y, rng).values())))
        d, real, fake = random_discriminator(s)
        rows.append(("discriminator", s, max(check_discriminator(d, real, fake, rng).values())))
    return rows
