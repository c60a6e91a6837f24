"""Fully connected feature extractor with nested-dropout training.

The network maps a (scaled) configuration to ``d`` ordered basis functions.
Offline training fits the trunk jointly with one linear head per task by
mean squared error and SGD with momentum; with nested dropout enabled every
sample in a mini-batch draws its own truncation ``b ~ Uniform{1..d}`` and
only its leading ``b`` features reach the head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream

ACTIVATIONS = ("tanh", "linear")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, learning_rate, trace=()):
        super().__init__(f"training diverged at epoch {epoch} (learning rate {learning_rate:g})")
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.trace = list(trace)


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureNetConfig:
    input_dim: int
    hidden_layers: tuple = (50, 50)
    output_dim: int = 20
    hidden_activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be >= 1")
        if self.hidden_activation != "tanh" or self.output_activation != "linear":
            raise ValueError("only tanh hidden / linear output activations are supported")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden_layers, self.output_dim)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-2
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 500
    nested_dropout: bool = True
    seed: int = 0
    lr_halving_epochs: int = 200

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class FeatureNet:
    """Weights are stored as ``(fan_in, fan_out)`` so that a layer is
    ``act(h @ W + c)``."""

    config: FeatureNetConfig
    weights: list
    biases: list
    x_lo: np.ndarray = None
    x_hi: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = self.config.widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match config")
        for k, (w, c) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[k], widths[k + 1]) or c.shape != (widths[k + 1],):
                raise ValueError(f"layer {k} has shape {w.shape}/{c.shape}, expected {(widths[k], widths[k + 1])}")
        if self.x_lo is None:
            self.x_lo = -np.ones(self.config.input_dim)
        if self.x_hi is None:
            self.x_hi = np.ones(self.config.input_dim)
        self.x_lo = np.asarray(self.x_lo, dtype=float)
        self.x_hi = np.asarray(self.x_hi, dtype=float)

    @classmethod
    def initialize(cls, config, seed=0, x_lo=None, x_hi=None):
        rng = RngStream(seed)
        widths = config.widths
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(config, weights, biases, x_lo, x_hi)

    @property
    def input_dim(self):
        return self.config.input_dim

    @property
    def output_dim(self):
        return self.config.output_dim

    def copy(self):
        return FeatureNet(self.config, [w.copy() for w in self.weights], [c.copy() for c in self.biases],
                          self.x_lo.copy(), self.x_hi.copy(), dict(self.meta))

    def scale_inputs(self, X):
        """Min-max map from configuration-space bounds to [-1, 1]."""
        X = np.asarray(X, dtype=float)
        return 2.0 * (X - self.x_lo) / (self.x_hi - self.x_lo) - 1.0

    def parameters(self):
        return [*self.weights, *self.biases]

    def features(self, X):
        """Features of raw (unscaled) configurations."""
        return forward(self, self.scale_inputs(X))


def _forward_cache(net, X):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for k, (w, c) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + c
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(net, x):
    """Features for one scaled input (length D) or a batch (N x D)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"expected input dimension {net.input_dim}, got shape {x.shape}")
    out = _forward_cache(net, X)[-1]
    return out[0] if single else out


def truncate(features, b):
    """Zero every feature after the first ``b``; ``b == d`` is the identity."""
    features = np.asarray(features, dtype=float)
    d = features.shape[-1]
    if not 1 <= b <= d:
        raise ValueError(f"truncation b={b} outside 1..{d}")
    out = features.copy()
    out[..., b:] = 0.0
    return out


def truncation_mask(bs, d):
    """Row i keeps the leading bs[i] features."""
    return (np.arange(d)[None, :] < np.asarray(bs)[:, None]).astype(float)


def _batch_gradients(net, X, targets, head_rows, mask):
    """Mean squared error over the batch and its gradients.

    ``head_rows[i]`` is the head weight vector used for sample i. Returns
    ``(loss, grad_weights, grad_biases, grad_head_rows)``.
    """
    acts = _forward_cache(net, X)
    phi = acts[-1] * mask
    pred = np.einsum("ij,ij->i", phi, head_rows)
    resid = pred - targets
    n = len(targets)
    loss = float(resid @ resid) / n
    dpred = (2.0 / n) * resid
    g_head = dpred[:, None] * phi
    delta = dpred[:, None] * head_rows * mask
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k].T) * (1.0 - acts[k] ** 2)
    return loss, gw, gb, g_head


def backward_mse(net, x, target, head_weights, b=None):
    """Squared error of ``<truncate(forward(x), b), head_weights>`` against
    ``target`` and its gradient for every net parameter and the head.

    Returns ``(loss, {"weights": [...], "biases": [...], "head": ...})``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"expected input dimension {net.input_dim}, got shape {x.shape}")
    d = net.output_dim
    b = d if b is None else b
    if not 1 <= b <= d:
        raise ValueError(f"truncation b={b} outside 1..{d}")
    head = np.asarray(head_weights, dtype=float).reshape(1, d)
    loss, gw, gb, gh = _batch_gradients(net, x[None, :], np.array([float(target)]), head, truncation_mask([b], d))
    return loss, {"weights": gw, "biases": gb, "head": gh[0]}


def _standardize(y):
    mu = float(np.mean(y))
    sd = float(np.std(y))
    return (y - mu) / (sd if sd > 0 else 1.0)


def task_mse(net, heads, scaled_tasks, b=None):
    """Per-task mean squared error of the truncated predictor on standardized
    targets."""
    out = []
    for t, (Xs, ys) in enumerate(scaled_tasks):
        phi = forward(net, Xs)
        if b is not None:
            phi = truncate(phi, b)
        r = phi @ heads[t] - ys
        out.append(float(r @ r) / len(r))
    return np.array(out)


@dataclass
class TrainResult:
    net: FeatureNet
    heads: np.ndarray
    trace: list
    scaled_tasks: list


def train_offline(net, tasks, cfg, bounds=None):
    """Fit the shared trunk and per-task linear heads by SGD with momentum.

    ``bounds`` is an optional ``(lower, upper)`` pair of configuration-space
    bounds used for input scaling; by default the net's stored bounds are
    used. Returns a :class:`TrainResult` with a new net; ``trace[e]`` is the
    full-truncation training MSE (averaged over tasks) after epoch ``e``.
    """
    if not tasks:
        raise ValueError("need at least one task")
    if any(t.n == 0 for t in tasks):
        raise ValueError("every task must contain at least one evaluation")
    if any(t.dim != net.input_dim for t in tasks):
        raise ValueError("task input dimension does not match the network")
    net = net.copy()
    if bounds is not None:
        net.x_lo = np.asarray(bounds[0], dtype=float) * np.ones(net.input_dim)
        net.x_hi = np.asarray(bounds[1], dtype=float) * np.ones(net.input_dim)
    net.meta["nested_dropout"] = bool(cfg.nested_dropout)

    d = net.output_dim
    rng = RngStream(cfg.seed)
    scaled = [(net.scale_inputs(t.X), _standardize(t.y)) for t in tasks]
    X = np.vstack([s[0] for s in scaled])
    y = np.concatenate([s[1] for s in scaled])
    task_idx = np.concatenate([np.full(len(s[1]), i) for i, s in enumerate(scaled)])
    heads = rng.normal(0.0, 1.0 / math.sqrt(d), size=(len(tasks), d))

    params = net.parameters()
    vel = [np.zeros_like(p) for p in params]
    vel_head = np.zeros_like(heads)
    n_layers = len(net.weights)
    out_w, out_b = n_layers - 1, 2 * n_layers - 1
    n = len(y)
    trace = []
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        if epoch > 0 and cfg.lr_halving_epochs and epoch % cfg.lr_halving_epochs == 0:
            lr *= 0.5
        order = rng.generator.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.nested_dropout:
                bs = rng.uniform_int(1, d, size=len(idx))
            else:
                bs = np.full(len(idx), d)
            mask = truncation_mask(bs, d)
            tid = task_idx[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb, gh_rows = _batch_gradients(net, X[idx], y[idx], heads[tid], mask)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, lr, trace)
            g_head = np.zeros_like(heads)
            np.add.at(g_head, tid, gh_rows)
            grads = [*gw, *gb]
            # units above the largest sampled truncation are left untouched,
            # momentum included
            active = int(bs.max())
            for k, (p, g, v) in enumerate(zip(params, grads, vel)):
                if k in (out_w, out_b):
                    v[..., :active] = cfg.momentum * v[..., :active] - lr * g[..., :active]
                    p[..., :active] += v[..., :active]
                else:
                    v *= cfg.momentum
                    v -= lr * g
                    p += v
            vel_head[:, :active] = cfg.momentum * vel_head[:, :active] - lr * g_head[:, :active]
            heads[:, :active] += vel_head[:, :active]
        mse = float(np.mean(task_mse(net, heads, scaled)))
        if not math.isfinite(mse):
            raise TrainingDiverged(epoch, lr, trace)
        trace.append(mse)
    return TrainResult(net, heads, trace, scaled)


def _fmt(v):
    return format(float(v), ".17g")


def _num_list(values):
    return "[" + ", ".join(_fmt(v) for v in np.ravel(values)) + "]"


def save(net):
    """Serialize to the JSON model format (UTF-8 bytes)."""
    layers = []
    last = len(net.weights) - 1
    for k, (w, c) in enumerate(zip(net.weights, net.biases)):
        act = "linear" if k == last else net.config.hidden_activation
        layers.append(
            '    {"rows": %d, "cols": %d, "activation": "%s",\n     "weights": %s,\n     "bias": %s}'
            % (w.shape[0], w.shape[1], act, _num_list(w), _num_list(c))
        )
    text = (
        "{\n"
        f'  "input_dim": {net.input_dim},\n'
        f'  "output_dim": {net.output_dim},\n'
        f'  "x_scale": {{"lo": {_num_list(net.x_lo)}, "hi": {_num_list(net.x_hi)}}},\n'
        f'  "meta": {json.dumps(net.meta, sort_keys=True)},\n'
        '  "layers": [\n' + ",\n".join(layers) + "\n  ]\n}\n"
    )
    return text.encode("utf-8")


def load(data):
    """Parse the JSON model format; raises ModelFormatError on bad input."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError(f"model is not valid UTF-8 (byte {exc.start})") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model JSON must be an object")
    for key in ("input_dim", "output_dim", "x_scale", "layers"):
        if key not in doc:
            raise ModelFormatError(f"missing key '{key}'")
    layers = doc["layers"]
    if not isinstance(layers, list) or not layers:
        raise ModelFormatError("'layers' must be a nonempty list")
    weights, biases, widths = [], [], [int(doc["input_dim"])]
    for k, layer in enumerate(layers):
        try:
            rows, cols = int(layer["rows"]), int(layer["cols"])
            w = np.asarray(layer["weights"], dtype=float)
            c = np.asarray(layer["bias"], dtype=float)
            act = layer["activation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layer {k}: {exc!r}") from exc
        if rows != widths[-1]:
            raise ModelFormatError(f"layer {k}: declared rows={rows} but previous width is {widths[-1]}")
        if w.size != rows * cols or c.size != cols:
            raise ModelFormatError(f"layer {k}: weights/bias sizes do not match declared {rows}x{cols}")
        expected = "linear" if k == len(layers) - 1 else "tanh"
        if act != expected:
            raise ModelFormatError(f"layer {k}: activation '{act}', expected '{expected}'")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(c))):
            raise ModelFormatError(f"layer {k}: non-finite parameters")
        weights.append(w.reshape(rows, cols))
        biases.append(c)
        widths.append(cols)
    if widths[-1] != int(doc["output_dim"]):
        raise ModelFormatError(f"declared output_dim={doc['output_dim']} but last layer has {widths[-1]} units")
    lo = np.asarray(doc["x_scale"]["lo"], dtype=float)
    hi = np.asarray(doc["x_scale"]["hi"], dtype=float)
    if lo.size != widths[0] or hi.size != widths[0]:
        raise ModelFormatError("x_scale length does not match input_dim")
    config = FeatureNetConfig(widths[0], tuple(widths[1:-1]), widths[-1])
    return FeatureNet(config, weights, biases, lo, hi, dict(doc.get("meta", {})))
