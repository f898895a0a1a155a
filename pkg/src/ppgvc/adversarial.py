"""Adversarial training of the parameter generator.

The discriminator is a feed-forward classifier over windows of ``W``
consecutive speech-parameter frames (z-normalised with the generator's output
statistics).  Generator updates add ``lambda`` times the non-saturating loss
``-log D(G(x))`` to the frame MSE.  Which corpus supplies the real windows,
original target-speaker speech or converted multilingual speech, is purely a
data choice: the code path is the same.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neural
from .errors import DimensionMismatch, EmptyInput, InvalidConfig
from .features import SpeechParams
from .neural import Adam, FeatureStats, Network, NetworkConfig, TrainHyper


@dataclass(frozen=True)
class GanHyper:
    adversarial_weight: float = 0.1
    window_frames: int = 32
    disc_steps: int = 1
    windows_per_step: int = 16
    disc_hidden: tuple = (128, 64)
    gen: TrainHyper = field(default_factory=TrainHyper)
    disc: TrainHyper = field(default_factory=lambda: TrainHyper(seed=1))

    def __post_init__(self):
        if self.adversarial_weight < 0:
            raise InvalidConfig("adversarial_weight must be >= 0")
        if self.window_frames < 1:
            raise InvalidConfig("window_frames must be >= 1")
        if self.disc_steps < 0 or self.windows_per_step < 1:
            raise InvalidConfig("disc_steps must be >= 0 and windows_per_step >= 1")


@dataclass(eq=False)
class Discriminator:
    network: Network
    window_frames: int
    param_dim: int


def make_discriminator(window_frames: int, param_dim: int, hidden=(128, 64), seed: int = 0) -> Discriminator:
    """Fresh discriminator whose output layer is zero, so every window scores 0.5."""
    cfg = NetworkConfig("feedforward", window_frames * param_dim, 1, tuple(hidden), seed=seed)
    return Discriminator(neural.init_network(cfg, zero_output=True), window_frames, param_dim)


def _flatten(d: Discriminator, windows):
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if w.shape[1:] != (d.window_frames, d.param_dim):
        raise DimensionMismatch(f"window shape {w.shape[1:]}, discriminator expects "
                                f"{(d.window_frames, d.param_dim)}")
    return w.reshape(w.shape[0], -1)


def logits(d: Discriminator, windows) -> np.ndarray:
    return neural.forward(d.network, _flatten(d, windows))[:, 0]


def discriminate(d: Discriminator, window) -> float:
    """Probability that a single ``W x param_dim`` window is real."""
    z = logits(d, window)
    if z.shape[0] != 1:
        raise DimensionMismatch("discriminate() takes one window; use logits() for batches")
    return float(neural._sigmoid(z[0]))


def _softplus(x):
    return np.logaddexp(0.0, x)


def bce_step(d: Discriminator, opt: Adam, real, fake):
    """One Adam step on binary cross-entropy; returns ``(loss, accuracy)`` before the step."""
    X = np.concatenate([_flatten(d, real), _flatten(d, fake)], axis=0)
    label = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    z, cache = neural.forward_train(d.network, X)
    z = z[:, 0]
    loss = float(np.mean(label * _softplus(-z) + (1 - label) * _softplus(z)))
    acc = accuracy(z, label)
    dz = (neural._sigmoid(z) - label) / len(z)
    grads, _ = neural.backprop(d.network, cache, dz[:, None])
    opt.step(d.network.params, grads)
    return loss, acc


def accuracy(z, label) -> float:
    """Real is predicted when the probability reaches 0.5."""
    return float(np.mean((z >= 0.0) == (label > 0.5)))


def train_discriminator(d: Discriminator, real, fake, hyper: TrainHyper = TrainHyper(), batch: int = 32):
    """Plain classifier training on fixed window sets; returns the per-epoch history."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if len(real) == 0 or len(fake) == 0:
        raise EmptyInput("need real and fake windows")
    opt = Adam(d.network.params, hyper)
    rng = np.random.default_rng(hyper.seed)
    history = []
    for epoch in range(hyper.epochs):
        ir, jf = rng.permutation(len(real)), rng.permutation(len(fake))
        stats = []
        for s in range(0, max(len(real), len(fake)), batch):
            r, f = real[ir[s:s + batch]], fake[jf[s:s + batch]]
            if len(r) and len(f):
                stats.append(bce_step(d, opt, r, f))
        history.append({"epoch": epoch, "loss": float(np.mean([s[0] for s in stats])),
                        "accuracy": float(np.mean([s[1] for s in stats]))})
    return history


# ---------------------------------------------------------------------------
# window sampling

def window_positions(lengths, W: int, n: int, rng):
    """``n`` (utterance, offset) pairs drawn uniformly over all valid placements."""
    lengths = np.asarray(lengths, dtype=np.int64)
    counts = np.maximum(lengths - W + 1, 0)
    total = int(counts.sum())
    if total == 0:
        raise EmptyInput(f"no utterance has at least {W} frames")
    flat = rng.integers(0, total, size=n)
    cum = np.cumsum(counts)
    utt = np.searchsorted(cum, flat, side="right")
    off = flat - (cum[utt] - counts[utt])
    return utt, off


def _as_matrix(item):
    return neural.params_to_targets(item) if isinstance(item, SpeechParams) else np.asarray(item, dtype=np.float64)


def sample_windows(corpus, W: int, n: int, seed=0) -> np.ndarray:
    """``n`` windows of ``W`` frames; utterances shorter than ``W`` are skipped."""
    mats = [_as_matrix(c) for c in corpus]
    if not mats:
        raise EmptyInput("empty corpus")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    utt, off = window_positions([m.shape[0] for m in mats], W, n, rng)
    return np.stack([mats[u][o:o + W] for u, o in zip(utt, off)]) if n else np.zeros((0, W, mats[0].shape[1]))


# ---------------------------------------------------------------------------
# GAN training

class _AdversarialHook:
    """Called once per generator batch by :func:`neural.fit`."""

    def __init__(self, disc: Discriminator, real_mats, hyper: GanHyper):
        self.d = disc
        self.real = real_mats
        self.h = hyper
        self.opt = Adam(disc.network.params, hyper.disc)
        self.rng = np.random.default_rng(hyper.disc.seed)

    def __call__(self, epoch, X, pred):
        h, W, n = self.h, self.h.window_frames, self.h.windows_per_step
        if pred.shape[0] < W:
            return None, {}
        metrics = {}
        fake_utt, fake_off = window_positions([pred.shape[0]], W, n, self.rng)
        fake = np.stack([pred[o:o + W] for o in fake_off])
        real = sample_windows(self.real, W, n, self.rng)
        if h.disc_steps == 0:
            label = np.concatenate([np.ones(n), np.zeros(n)])
            z = logits(self.d, np.concatenate([real, fake]))
            metrics["disc_accuracy"] = accuracy(z, label)
        for step in range(h.disc_steps):
            if step:
                real = sample_windows(self.real, W, n, self.rng)
            loss, acc = bce_step(self.d, self.opt, real, fake)
            if step == 0:
                metrics["disc_loss"], metrics["disc_accuracy"] = loss, acc
        if h.adversarial_weight == 0.0:
            return None, metrics
        z, cache = neural.forward_train(self.d.network, _flatten(self.d, fake))
        z = z[:, 0]
        metrics["adv_loss"] = float(np.mean(_softplus(-z)))
        dz = (neural._sigmoid(z) - 1.0) / n
        _, dx = neural.backprop(self.d.network, cache, dz[:, None])
        dx = dx.reshape(n, W, -1)
        g = np.zeros_like(pred)
        for k, o in enumerate(fake_off):
            g[o:o + W] += dx[k]
        return h.adversarial_weight * g, metrics

    def valid_term(self, net, pairs):
        """``lambda * -log D(G(x))`` averaged over every window of the validation outputs."""
        W = self.h.window_frames
        wins = []
        for X, _ in pairs:
            Y = neural.forward(net, X)
            wins += [Y[o:o + W] for o in range(0, Y.shape[0] - W + 1, max(1, W // 2))]
        if not wins:
            return 0.0
        z = logits(self.d, np.stack(wins))
        return self.h.adversarial_weight * float(np.mean(_softplus(-z)))


def gan_train(generator: Network, gen_corpus, target_corpus, hyper: GanHyper = GanHyper(),
              stats: FeatureStats | None = None, valid=None):
    """Alternate discriminator and generator updates.

    ``gen_corpus`` holds raw ``(input, target)`` pairs exactly as for
    :func:`neural.train`; ``target_corpus`` holds :class:`SpeechParams` or raw
    target matrices whose windows count as real.  With
    ``adversarial_weight == 0`` the generator trajectory is bit-identical to
    :func:`neural.train` under the same generator hyper-parameters.  For
    ``adversarial_weight > 0`` the checkpoint is selected on validation MSE
    plus the weighted adversarial loss under the discriminator of that epoch.

    Returns ``(generator, discriminator, history, stats)``.
    """
    gen_corpus = list(gen_corpus)
    target_corpus = list(target_corpus)
    if not gen_corpus:
        raise EmptyInput("empty generator corpus")
    if not target_corpus:
        raise EmptyInput("empty discriminator target corpus")
    if valid is None:
        train_set, valid_set = neural.split_dataset(gen_corpus, hyper.gen.valid_fraction)
    else:
        train_set, valid_set = gen_corpus, list(valid)
    if stats is None:
        stats = FeatureStats.from_data([x for x, _ in train_set], [y for _, y in train_set])
    raw = [_as_matrix(c) for c in target_corpus]
    if any(m.ndim != 2 or m.shape[1] != generator.config.output_dim for m in raw):
        raise DimensionMismatch("target corpus parameter width differs from generator output")
    real = [stats.normalize_out(m) for m in raw]
    window_positions([m.shape[0] for m in real], hyper.window_frames, 0, np.random.default_rng(0))
    disc = make_discriminator(hyper.window_frames, generator.config.output_dim,
                              hyper.disc_hidden, seed=hyper.disc.seed)
    hook = _AdversarialHook(disc, real, hyper)
    extra_valid = hook.valid_term if hyper.adversarial_weight > 0 else None
    best, history = neural.fit(generator, neural.normalize_pairs(train_set, stats),
                               neural.normalize_pairs(valid_set, stats), hyper.gen,
                               extra_grad=hook, extra_valid=extra_valid)
    return best, disc, history, stats
