"""Dense networks with explicit reverse-mode gradients.

Everything runs in float64 on plain numpy arrays. Initialization, batch
order, and reduction order are all fixed by the seed, so two runs with the
same seed produce bit-identical parameters on a single thread.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeError, TrainingError, UsageError, ValidationError

ACTIVATIONS = ("relu", "tanh", "identity")

CHECKPOINT_VERSION = 1


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


class DenseNet:
    """Fully connected network with one activation name per affine layer.

    ``activations`` covers every layer including the last; the default is
    relu on hidden layers and identity on the output. Weights use uniform
    He scaling for relu layers and Xavier otherwise; biases start at zero.
    """

    def __init__(self, layer_sizes, activations=None, seed: int = 0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValidationError(f"layer_sizes must be >=2 positive ints, got {layer_sizes!r}")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        activations = [str(a) for a in activations]
        if len(activations) != n_layers:
            raise ValidationError(
                f"need {n_layers} activations (one per layer), got {len(activations)}"
            )
        for name in activations:
            if name not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {name!r}")

        self.layer_sizes = sizes
        self.activations = activations
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if act == "relu":
                bound = math.sqrt(6.0 / fan_in)
            else:
                bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim == 0 or x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"layer 0 expects inputs of length {self.in_dim}, got shape {x.shape}"
            )

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on a vector or a (batch, in_dim) matrix."""
        a = np.asarray(x, dtype=np.float64)
        self._check_input(a)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            a = _activate(act, a @ w + b)
        return a

    def forward_cached(self, x) -> np.ndarray:
        """Forward pass on a batch that records activations for backward()."""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"forward_cached expects a 2-d batch, got shape {a.shape}")
        self._check_input(a)
        pre: list[np.ndarray] = []
        post: list[np.ndarray] = [a]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            a = _activate(act, z)
            pre.append(z)
            post.append(a)
        self._cache = (post[0], pre, post)
        return a

    def backward(self, x, grad_output):
        """Backpropagate d(loss)/d(output) through the cached batch.

        Returns (gradients aligned with parameters(), gradient w.r.t. the
        input batch). Requires a preceding forward_cached() on ``x``.
        """
        x = np.asarray(x, dtype=np.float64)
        if self._cache is None:
            raise UsageError("backward() called without a preceding forward_cached()")
        cached_x, pre, post = self._cache
        if cached_x is not x and not (
            cached_x.shape == x.shape and np.array_equal(cached_x, x)
        ):
            raise UsageError("activation cache is stale: forward_cached() ran on a different batch")
        g = np.asarray(grad_output, dtype=np.float64)
        if g.shape != post[-1].shape:
            raise ShapeError(
                f"grad_output shape {g.shape} does not match output shape {post[-1].shape}"
            )
        n = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * n)  # type: ignore[list-item]
        for i in range(n - 1, -1, -1):
            gz = g * _activate_grad(self.activations[i], pre[i])
            grads[2 * i] = post[i].T @ gz
            grads[2 * i + 1] = gz.sum(axis=0)
            g = gz @ self.weights[i].T
        return grads, g

    def parameters(self) -> list[np.ndarray]:
        """Live references, ordered [W0, b0, W1, b1, ...]."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class OptimizerState:
    """First-order optimizer state over a flat list of parameter arrays."""

    method: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list | None = None
    v: list | None = None

    @classmethod
    def for_params(cls, method: str, learning_rate: float, params) -> "OptimizerState":
        if method not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {method!r}")
        if learning_rate <= 0.0:
            raise ValidationError(f"learning_rate must be positive, got {learning_rate}")
        state = cls(method=method, learning_rate=float(learning_rate))
        if method == "adam":
            state.m = [np.zeros_like(p) for p in params]
            state.v = [np.zeros_like(p) for p in params]
        return state

    def apply(self, params, grads) -> None:
        """One in-place update. Rejects non-finite gradients and shape drift."""
        if len(params) != len(grads):
            raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
        for i, (p, g) in enumerate(zip(params, grads)):
            g = np.asarray(g)
            if p.shape != g.shape:
                raise ShapeError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {i}")
        self.step_count += 1
        if self.method == "sgd":
            for p, g in zip(params, grads):
                p -= self.learning_rate * g
            return
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def step(net: DenseNet, grads, opt: OptimizerState) -> None:
    """Apply one optimizer update to the network parameters in place."""
    opt.apply(net.parameters(), grads)


def mse_loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over samples of the squared Euclidean residual."""
    resid = outputs - targets
    return float(np.mean(np.sum(resid * resid, axis=-1)))


def fit_mse(
    net: DenseNet,
    inputs,
    targets,
    *,
    epochs: int,
    learning_rate: float,
    batch_size: int | None = None,
    method: str = "adam",
    seed: int = 0,
) -> list[float]:
    """Train ``net`` as a least-squares regressor; returns the loss curve.

    Entry 0 of the curve is the pre-training loss on the full set; each
    later entry is the mean minibatch loss of one epoch. Batch order is
    drawn from ``seed``, so training is reproducible.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"inputs {x.shape} and targets {y.shape} must be matching 2-d batches")
    if x.shape[0] == 0:
        raise ValidationError("cannot fit on an empty batch")
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    n = x.shape[0]
    bs = n if batch_size is None else min(int(batch_size), n)
    opt = OptimizerState.for_params(method, learning_rate, net.parameters())
    rng = np.random.default_rng(seed)
    curve = [mse_loss(net.forward(x), y)]
    for epoch in range(epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = x[idx], y[idx]
            out = net.forward_cached(xb)
            loss = mse_loss(out, yb)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads, _ = net.backward(xb, (2.0 / xb.shape[0]) * (out - yb))
            step(net, grads, opt)
            batch_losses.append(loss)
        curve.append(float(np.mean(batch_losses)))
    return curve


def net_to_dict(net: DenseNet) -> dict:
    return {
        "kind": "dense_net",
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "seed": net.seed,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(data: dict) -> DenseNet:
    if data.get("kind") != "dense_net":
        raise ParseError(f"not a dense_net checkpoint: kind={data.get('kind')!r}")
    if data.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {data.get('format_version')!r}")
    net = DenseNet(data["layer_sizes"], data["activations"], seed=data.get("seed", 0))
    weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
            raise ParseError(f"checkpoint arrays for layer {i} do not match layer_sizes")
    net.weights = weights
    net.biases = biases
    return net


def save_net(net: DenseNet, path) -> None:
    with open(path, "w") as fh:
        json.dump(net_to_dict(net), fh, sort_keys=True)


def load_net(path) -> DenseNet:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed checkpoint {path}: {exc}") from exc
    return net_from_dict(data)


def fd_max_relative_error(
    loss_fn,
    params,
    grads,
    *,
    rng: np.random.Generator,
    n_coords: int = 32,
    eps: float = 1e-5,
) -> float:
    """Worst relative disagreement between analytic and central-difference grads.

    ``loss_fn()`` re-evaluates the scalar loss at the current parameter
    values; ``grads`` are the analytic gradients aligned with ``params``.
    Probes ``n_coords`` randomly chosen parameter coordinates.
    """
    sizes = np.array([p.size for p in params])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    worst = 0.0
    for _ in range(n_coords):
        flat = int(rng.integers(total))
        pi = int(np.searchsorted(cum, flat, side="right"))
        ci = flat - (int(cum[pi - 1]) if pi > 0 else 0)
        p = params[pi]
        orig = p.flat[ci]
        p.flat[ci] = orig + eps
        lp = loss_fn()
        p.flat[ci] = orig - eps
        lm = loss_fn()
        p.flat[ci] = orig
        fd = (lp - lm) / (2.0 * eps)
        an = np.asarray(grads[pi]).flat[ci]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-3)
        worst = max(worst, rel)
    return worst
