"""Frame-wise regression networks from PPG frames to speech-parameter frames.

Two architectures share one parameter container:

* ``feedforward``: tanh hidden layers, linear output, every frame independent.
* ``birecurrent``: stacked bidirectional LSTM layers (gates i, f, o, g), the
  two directions concatenated before the next layer and the linear output.

Parameters live in an ordered ``dict`` whose key order is the declaration
order used by checkpoints.  All arithmetic is float64.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch, DivergenceDetected, EmptyInput, InvalidConfig, ParseError, IoError
from .features import SpeechParams

DEFAULT_HIDDEN = {"feedforward": (1024,) * 6, "birecurrent": (256,) * 4}


@dataclass(frozen=True)
class NetworkConfig:
    kind: str
    input_dim: int
    output_dim: int
    hidden: tuple = ()
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULT_HIDDEN:
            raise InvalidConfig(f"unknown network kind {self.kind!r}")
        hidden = tuple(int(h) for h in (self.hidden if self.hidden is not None else ()))
        object.__setattr__(self, "hidden", hidden)
        if not hidden:
            raise InvalidConfig("hidden layer list is empty")
        if self.input_dim <= 0 or self.output_dim <= 0 or min(hidden) <= 0:
            raise InvalidConfig("all layer dimensions must be positive")
        if self.activation != "tanh":
            raise InvalidConfig("only tanh hidden activations are supported")

    @classmethod
    def full_size(cls, kind, input_dim, output_dim, seed=0):
        return cls(kind, input_dim, output_dim, DEFAULT_HIDDEN[kind], seed=seed)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", ()))
        return cls(**d)


def param_shapes(cfg: NetworkConfig):
    """Ordered ``(name, shape)`` pairs of every parameter tensor."""
    shapes = []
    if cfg.kind == "feedforward":
        fan_in = cfg.input_dim
        for i, h in enumerate(cfg.hidden):
            shapes += [(f"l{i}.W", (fan_in, h)), (f"l{i}.b", (h,))]
            fan_in = h
    else:
        fan_in = cfg.input_dim
        for i, h in enumerate(cfg.hidden):
            for d in ("fw", "bw"):
                shapes += [(f"l{i}.{d}.Wx", (fan_in, 4 * h)), (f"l{i}.{d}.Wh", (h, 4 * h)),
                           (f"l{i}.{d}.b", (4 * h,))]
            fan_in = 2 * h
    shapes += [("out.W", (fan_in, cfg.output_dim)), ("out.b", (cfg.output_dim,))]
    return shapes


def param_count(cfg: NetworkConfig) -> int:
    return int(sum(np.prod(s) for _, s in param_shapes(cfg)))


@dataclass(eq=False)
class Network:
    config: NetworkConfig
    params: dict

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def init_network(cfg: NetworkConfig, zero_output: bool = False) -> Network:
    """Seeded Glorot-uniform weights, zero biases.

    ``zero_output`` zeroes the output layer (used for discriminators so that
    every window starts at probability 0.5).
    """
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, shape)
    if zero_output:
        params["out.W"][:] = 0.0
    return Network(cfg, params)


# ---------------------------------------------------------------------------
# forward / backward

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_forward(X, Wx, Wh, b):
    T, H = X.shape[0], Wh.shape[0]
    pre = X @ Wx + b
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.zeros((T, 4 * H))
    for t in range(T):
        a = pre[t] + hs[t] @ Wh
        i = _sigmoid(a[:H])
        f = _sigmoid(a[H:2 * H])
        o = _sigmoid(a[2 * H:3 * H])
        g = np.tanh(a[3 * H:])
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, o, g])
    return hs[1:], (X, hs, cs, gates)


def _lstm_backward(dH, cache, Wx, Wh):
    X, hs, cs, gates = cache
    T, H = dH.shape
    dA = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i, f, o, g = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dA[t, :H] = dc * g * i * (1.0 - i)
        dA[t, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dA[t, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dA[t, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dA[t] @ Wh.T
    grads = {"Wx": X.T @ dA, "Wh": hs[:-1].T @ dA, "b": dA.sum(axis=0)}
    return grads, dA @ Wx.T


def _check_input(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.input_dim:
        raise DimensionMismatch(f"input has shape {X.shape}, network expects width {net.config.input_dim}")
    return X


def forward_train(net: Network, X):
    """Forward pass keeping what :func:`backprop` needs."""
    X = _check_input(net, X)
    p, cfg = net.params, net.config
    layers = []
    h = X
    for i in range(len(cfg.hidden)):
        if cfg.kind == "feedforward":
            out = np.tanh(h @ p[f"l{i}.W"] + p[f"l{i}.b"])
            layers.append((h, out))
        else:
            hf, cf = _lstm_forward(h, p[f"l{i}.fw.Wx"], p[f"l{i}.fw.Wh"], p[f"l{i}.fw.b"])
            hb, cb = _lstm_forward(h[::-1], p[f"l{i}.bw.Wx"], p[f"l{i}.bw.Wh"], p[f"l{i}.bw.b"])
            out = np.concatenate([hf, hb[::-1]], axis=1)
            layers.append((cf, cb))
        h = out
    Y = h @ p["out.W"] + p["out.b"]
    return Y, (layers, h)


def forward(net: Network, X) -> np.ndarray:
    return forward_train(net, X)[0]


def backprop(net: Network, cache, dY):
    """Gradients of a scalar loss given ``dY = dL/dY``; returns ``(grads, dL/dX)``."""
    layers, top = cache
    p, cfg = net.params, net.config
    grads = {"out.W": top.T @ dY, "out.b": dY.sum(axis=0)}
    dh = dY @ p["out.W"].T
    for i in range(len(cfg.hidden) - 1, -1, -1):
        if cfg.kind == "feedforward":
            inp, out = layers[i]
            da = dh * (1.0 - out * out)
            grads[f"l{i}.W"] = inp.T @ da
            grads[f"l{i}.b"] = da.sum(axis=0)
            dh = da @ p[f"l{i}.W"].T
        else:
            cf, cb = layers[i]
            H = cfg.hidden[i]
            gf, dxf = _lstm_backward(dh[:, :H], cf, p[f"l{i}.fw.Wx"], p[f"l{i}.fw.Wh"])
            gb, dxb = _lstm_backward(dh[::-1, H:], cb, p[f"l{i}.bw.Wx"], p[f"l{i}.bw.Wh"])
            for k in ("Wx", "Wh", "b"):
                grads[f"l{i}.fw.{k}"] = gf[k]
                grads[f"l{i}.bw.{k}"] = gb[k]
            dh = dxf + dxb[::-1]
    return {k: grads[k] for k in p}, dh


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        return 0.0
    return float(np.mean((pred - target) ** 2))


def backward(net: Network, X, target):
    """Exact gradients of :func:`loss_mse`; returns ``(grads, loss)``."""
    Y, cache = forward_train(net, X)
    target = np.asarray(target, dtype=np.float64)
    loss = loss_mse(Y, target)
    dY = 2.0 * (Y - target) / max(Y.size, 1)
    grads, _ = backprop(net, cache, dY)
    return grads, loss


def numerical_gradient(loss_fn, params: dict, name: str, indices, h: float = 1e-4):
    """Central differences of ``loss_fn()`` w.r.t. selected entries of ``params[name]``."""
    arr = params[name]
    out = np.zeros(len(indices))
    for j, idx in enumerate(indices):
        old = arr[idx]
        arr[idx] = old + h
        up = loss_fn()
        arr[idx] = old - h
        down = loss_fn()
        arr[idx] = old
        out[j] = (up - down) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# normalisation

@dataclass(eq=False)
class FeatureStats:
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    STD_FLOOR = 1e-8

    @classmethod
    def from_data(cls, inputs, targets):
        X = np.concatenate([np.asarray(x, dtype=np.float64) for x in inputs], axis=0)
        Y = np.concatenate([np.asarray(y, dtype=np.float64) for y in targets], axis=0)
        if X.shape[0] == 0:
            raise EmptyInput("no frames to compute statistics from")
        return cls(X.mean(0), np.maximum(X.std(0), cls.STD_FLOOR),
                   Y.mean(0), np.maximum(Y.std(0), cls.STD_FLOOR))

    @classmethod
    def identity(cls, in_dim, out_dim):
        return cls(np.zeros(in_dim), np.ones(in_dim), np.zeros(out_dim), np.ones(out_dim))

    def normalize_in(self, x):
        return (np.asarray(x, dtype=np.float64) - self.in_mean) / self.in_std

    def normalize_out(self, y):
        return (np.asarray(y, dtype=np.float64) - self.out_mean) / self.out_std

    def denormalize_out(self, y):
        return np.asarray(y, dtype=np.float64) * self.out_std + self.out_mean


# ---------------------------------------------------------------------------
# output layout

@dataclass(frozen=True)
class OutputLayout:
    """Column layout of the joint target vector: ``mcep | lf0 | vuv-logit | bap``."""

    mcep_dim: int = 40
    bap_dim: int = 1

    @property
    def dim(self) -> int:
        return self.mcep_dim + 2 + self.bap_dim

    @property
    def lf0_col(self) -> int:
        return self.mcep_dim

    @property
    def vuv_col(self) -> int:
        return self.mcep_dim + 1

    def to_dict(self):
        return {"mcep_dim": self.mcep_dim, "bap_dim": self.bap_dim}


def params_to_targets(p: SpeechParams) -> np.ndarray:
    """Joint frame matrix with voicing encoded as -1 / +1."""
    vuv = np.where(p.vuv, 1.0, -1.0)[:, None]
    return np.concatenate([p.mcep, p.lf0[:, None], vuv, p.bap], axis=1)


def moving_average3(x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        return x.copy()
    pad = np.concatenate([x[:1], x, x[-1:]], axis=0)
    return (pad[:-2] + pad[1:-1] + pad[2:]) / 3.0


def targets_to_params(Y, layout: OutputLayout, f0_floor=60.0, f0_ceil=500.0,
                      post_filter=False, frame_shift_ms=10.0) -> SpeechParams:
    """Split de-normalised network output into :class:`SpeechParams`.

    The voicing logit is voiced when strictly positive; aperiodicity is clamped
    to ``<= 0`` dB and voiced log-F0 into ``[log f0_floor, log f0_ceil]``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != layout.dim:
        raise DimensionMismatch(f"output width {Y.shape[-1]} does not match layout width {layout.dim}")
    mcep = Y[:, :layout.mcep_dim]
    lf0 = Y[:, layout.lf0_col]
    vuv = Y[:, layout.vuv_col] > 0.0
    bap = np.minimum(Y[:, layout.vuv_col + 1:], 0.0)
    if post_filter:
        mcep = moving_average3(mcep)
        lf0 = moving_average3(lf0)
    lf0 = np.where(vuv, np.clip(lf0, np.log(f0_floor), np.log(f0_ceil)), lf0)
    return SpeechParams(mcep, lf0, vuv, bap, frame_shift_ms)


def predict_params(net: Network, inputs, stats: FeatureStats, layout: OutputLayout,
                   f0_floor=60.0, f0_ceil=500.0, post_filter=False) -> SpeechParams:
    """Run the network on already context-stacked inputs and decode the output."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.input_dim:
        raise DimensionMismatch(f"input width {X.shape[-1]}, network expects {net.config.input_dim}")
    if net.config.output_dim != layout.dim:
        raise DimensionMismatch("network output width does not match the layout")
    if X.shape[0] == 0:
        Y = np.zeros((0, layout.dim))
    else:
        Y = stats.denormalize_out(forward(net, stats.normalize_in(X)))
    return targets_to_params(Y, layout, f0_floor, f0_ceil, post_filter)


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-3
    batch_frames: int = 256
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 0  # 0 disables early stopping
    seed: int = 0
    valid_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_frames < 1:
            raise InvalidConfig("batch_frames must be >= 1")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise InvalidConfig("valid_fraction must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params: dict, hyper: TrainHyper):
        self.h = hyper
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        h = self.h
        c1 = 1.0 - h.beta1 ** self.t
        c2 = 1.0 - h.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= h.beta1
            m += (1.0 - h.beta1) * g
            v *= h.beta2
            v += (1.0 - h.beta2) * g * g
            params[k] -= h.learning_rate * (m / c1) / (np.sqrt(v / c2) + h.eps)


def split_dataset(dataset, valid_fraction):
    """Hold out the trailing utterances for validation (at least one when possible)."""
    n = len(dataset)
    n_valid = 0
    if n >= 2 and valid_fraction > 0:
        n_valid = min(n - 1, max(1, int(round(n * valid_fraction))))
    return list(dataset[:n - n_valid]), list(dataset[n - n_valid:])


def _batches(net, pairs, order, batch_frames):
    if net.config.kind == "birecurrent":
        for i in order:
            yield pairs[i]
        return
    X = np.concatenate([pairs[i][0] for i in order], axis=0)
    Y = np.concatenate([pairs[i][1] for i in order], axis=0)
    for s in range(0, X.shape[0], batch_frames):
        yield X[s:s + batch_frames], Y[s:s + batch_frames]


def evaluate_loss(net, pairs) -> float:
    """Frame-weighted MSE over normalised pairs."""
    total, count = 0.0, 0
    for X, Y in pairs:
        if X.shape[0] == 0:
            continue
        total += loss_mse(forward(net, X), Y) * Y.size
        count += Y.size
    return total / count if count else 0.0


def fit(net: Network, train_pairs, valid_pairs, hyper: TrainHyper, extra_grad=None, extra_valid=None):
    """Adam training on normalised pairs with best-validation checkpointing.

    ``extra_grad(epoch, X, Y_pred)`` may return an additional ``dL/dY_pred``
    to be added to the MSE gradient (adversarial training uses this) and may
    update its own state; its returned metrics dict is merged into the epoch
    record.  ``extra_valid(net, pairs)`` adds a term to the validation
    criterion used for checkpoint selection.
    """
    if not train_pairs:
        raise EmptyInput("empty training set")
    work = net.copy()
    opt = Adam(work.params, hyper)
    rng = np.random.default_rng(hyper.seed)
    history = []
    best_loss, best_params, since_best = np.inf, None, 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train_pairs))
        train_sum, train_n = 0.0, 0
        extra_metrics = {}
        for X, Y in _batches(work, train_pairs, order, hyper.batch_frames):
            if X.shape[0] == 0:
                continue
            pred, cache = forward_train(work, X)
            loss = loss_mse(pred, Y)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss in epoch {epoch}", history)
            dY = 2.0 * (pred - Y) / pred.size
            if extra_grad is not None:
                g, metrics = extra_grad(epoch, X, pred)
                if g is not None:
                    dY = dY + g
                for k, v in metrics.items():
                    extra_metrics.setdefault(k, []).append(v)
            grads, _ = backprop(work, cache, dY)
            opt.step(work.params, grads)
            train_sum += loss * Y.size
            train_n += Y.size
        if not work.all_finite():
            raise DivergenceDetected(f"non-finite weights after epoch {epoch}", history)
        train_loss = train_sum / max(train_n, 1)
        valid_loss = evaluate_loss(work, valid_pairs) if valid_pairs else train_loss
        criterion = valid_loss
        if extra_valid is not None:
            criterion = valid_loss + extra_valid(work, valid_pairs or train_pairs)
        if not np.isfinite(criterion):
            raise DivergenceDetected(f"non-finite validation loss in epoch {epoch}", history)
        if criterion < best_loss:
            best_loss, since_best = criterion, 0
            best_params = {k: v.copy() for k, v in work.params.items()}
        else:
            since_best += 1
        record = {"epoch": epoch, "train_mse": train_loss, "valid_mse": valid_loss, "best_valid": best_loss}
        if extra_valid is not None:
            record["valid_objective"] = criterion
        record.update({k: float(np.mean(v)) for k, v in extra_metrics.items()})
        history.append(record)
        if hyper.patience and since_best >= hyper.patience:
            break
    return Network(net.config, best_params), history


def normalize_pairs(dataset, stats: FeatureStats):
    return [(stats.normalize_in(x), stats.normalize_out(y)) for x, y in dataset]


def train(net: Network, dataset, hyper: TrainHyper = TrainHyper(), stats: FeatureStats | None = None,
          valid=None, extra_grad=None):
    """Train on raw ``(input, target)`` matrices.

    Without an explicit ``valid`` list the trailing ``valid_fraction`` of the
    utterances is held out; statistics default to the training split.
    Returns ``(best_network, history, stats)``.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("empty dataset")
    for x, y in dataset:
        if np.asarray(x).shape[0] != np.asarray(y).shape[0]:
            raise DimensionMismatch("input and target frame counts differ")
    if valid is None:
        train_set, valid_set = split_dataset(dataset, hyper.valid_fraction)
    else:
        train_set, valid_set = dataset, list(valid)
    if stats is None:
        stats = FeatureStats.from_data([x for x, _ in train_set], [y for _, y in train_set])
    best, history = fit(net, normalize_pairs(train_set, stats), normalize_pairs(valid_set, stats),
                        hyper, extra_grad)
    return best, history, stats


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"PPGVCNET"
CKPT_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    network: Network
    stats: FeatureStats | None = None
    layout: OutputLayout | None = None
    meta: dict = field(default_factory=dict)
    kind: str = "net"


def _blob(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def dump_checkpoint(ck: Checkpoint) -> bytes:
    """Serialise: magic, u32 version, u32 header length, JSON header, float64 stats, float32 weights."""
    net = ck.network
    header = {
        "kind": ck.kind,
        "config": net.config.to_dict(),
        "layout": ck.layout.to_dict() if ck.layout else None,
        "has_stats": ck.stats is not None,
        "meta": ck.meta,
        "params": [[k, list(v.shape)] for k, v in net.params.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(head)), head]
    if ck.stats is not None:
        for arr in (ck.stats.in_mean, ck.stats.in_std, ck.stats.out_mean, ck.stats.out_std):
            parts.append(_blob(arr, "<f8"))
    for v in net.params.values():
        parts.append(_blob(v, "<f4"))
    return b"".join(parts)


def parse_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:8] != CKPT_MAGIC:
        raise ParseError("not a ppgvc network checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", buf, 8)
        if version != CKPT_VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise ParseError("corrupt checkpoint header") from exc
    cfg = NetworkConfig.from_dict(header["config"])
    off = 16 + hlen

    def take(n, dtype):
        nonlocal off
        size = np.dtype(dtype).itemsize * n
        if off + size > len(buf):
            raise ParseError("checkpoint truncated")
        arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).astype(np.float64)
        off += size
        return arr

    stats = None
    if header["has_stats"]:
        stats = FeatureStats(take(cfg.input_dim, "<f8"), take(cfg.input_dim, "<f8"),
                             take(cfg.output_dim, "<f8"), take(cfg.output_dim, "<f8"))
    expected = param_shapes(cfg)
    if [(k, list(s)) for k, s in expected] != [(k, s) for k, s in header["params"]]:
        raise ParseError("parameter table does not match the network config")
    params = {k: take(int(np.prod(s)), "<f4").reshape(s) for k, s in expected}
    if off != len(buf):
        raise ParseError("trailing bytes after checkpoint payload")
    layout = OutputLayout(**header["layout"]) if header["layout"] else None
    return Checkpoint(Network(cfg, params), stats, layout, header["meta"], header["kind"])


def save_checkpoint(path, ck: Checkpoint) -> None:
    try:
        with open(path, "wb") as f:
            f.write(dump_checkpoint(ck))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            return parse_checkpoint(f.read())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
