"""Small dense networks in numpy: init, forward, MSE training, gradient check, JSON I/O.

Inputs and outputs are z-scored with statistics frozen into the network, so
callers always work in physical units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

NET_FORMAT = "agc-net"
NET_VERSION = 1
ACTIVATIONS = ("tanh", "linear")


class NetError(ValueError):
    pass


class NetFormatError(NetError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Net:
    sizes: list[int]
    weights: list[np.ndarray]  # weights[i] has shape (sizes[i], sizes[i + 1])
    biases: list[np.ndarray]
    activations: list[str]
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise NetError("layer count does not match sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise NetError(f"layer {i} has shapes {W.shape}/{b.shape}, expected ({self.sizes[i]}, {self.sizes[i + 1]})")
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise NetError("normalization std must be > 0")

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Net":
        return Net(
            list(self.sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.in_mean.copy(),
            self.in_std.copy(),
            self.out_mean.copy(),
            self.out_std.copy(),
        )

    def set_normalization(self, inputs: np.ndarray, targets: np.ndarray) -> None:
        """Freeze per-feature z-score statistics; constant features get std 1."""
        self.in_mean, self.in_std = _stats(inputs)
        self.out_mean, self.out_std = _stats(targets)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)


def _stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return mean, std


def net_init(sizes: Sequence[int], seed: int, hidden: str = "tanh", output: str = "linear") -> Net:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, identity normalization."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise NetError("need at least input and output sizes")
    if any(s <= 0 for s in sizes):
        raise NetError(f"layer widths must be positive: {sizes}")
    if hidden not in ACTIVATIONS or output not in ACTIVATIONS:
        raise NetError(f"activations must be in {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    acts = [hidden] * (len(sizes) - 2) + [output]
    return Net(sizes, weights, biases, acts, np.zeros(sizes[0]), np.ones(sizes[0]), np.zeros(sizes[-1]), np.ones(sizes[-1]))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else z


def _forward_norm(net: Net, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward in normalized space, keeping layer activations for backprop."""
    cache = [z]
    for W, b, act in zip(net.weights, net.biases, net.activations):
        z = _act(act, z @ W + b)
        cache.append(z)
    return z, cache


def forward(net: Net, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_in:
        raise NetError(f"expected {net.n_in} inputs, got {x.shape[-1]}")
    z, _ = _forward_norm(net, (x - net.in_mean) / net.in_std)
    return z * net.out_std + net.out_mean


def _backward(net: Net, cache: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    delta = dout
    for i in range(len(net.weights) - 1, -1, -1):
        if net.activations[i] == "tanh":
            delta = delta * (1.0 - cache[i + 1] ** 2)
        grads[2 * i] = cache[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = delta @ net.weights[i].T
    return grads


def mse_and_grads(net: Net, x: np.ndarray, target: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss is the mean squared error in normalized output space."""
    xn = (np.atleast_2d(x) - net.in_mean) / net.in_std
    tn = (np.atleast_2d(target) - net.out_mean) / net.out_std
    pred, cache = _forward_norm(net, xn)
    diff = pred - tn
    loss = float(np.mean(diff**2))
    grads = _backward(net, cache, 2.0 * diff / diff.size)
    return loss, grads


def mse(net: Net, x: np.ndarray, target: np.ndarray, chunk: int = 65536) -> float:
    x = np.atleast_2d(x)
    target = np.atleast_2d(target)
    total = 0.0
    for lo in range(0, len(x), chunk):
        xn = (x[lo : lo + chunk] - net.in_mean) / net.in_std
        tn = (target[lo : lo + chunk] - net.out_mean) / net.out_std
        pred, _ = _forward_norm(net, xn)
        total += float(np.sum((pred - tn) ** 2))
    return total / target.size


@dataclass
class TrainReport:
    epochs: int
    train_loss: float
    val_loss: float | None
    curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)


def train_mse(
    net: Net,
    inputs: np.ndarray,
    targets: np.ndarray,
    lr: float = 0.01,
    epochs: int = 20,
    batch: int = 256,
    seed: int = 0,
    momentum: float = 0.9,
    fit_normalization: bool = True,
    val_inputs: np.ndarray | None = None,
    val_targets: np.ndarray | None = None,
    lr_decay: float = 1.0,
    divergence_factor: float = 10.0,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Mini-batch SGD with momentum on the normalized MSE, in place.

    The per-epoch loss curve is the mean of the mini-batch losses. Training
    aborts with :class:`TrainingDiverged` on a non-finite loss or when the
    running average of epoch losses (EMA, weight 0.1 on the newest epoch)
    grows by more than ``divergence_factor`` in one epoch.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if len(inputs) < 1 or len(inputs) != len(targets):
        raise NetError("inputs and targets must be non-empty and of equal length")
    targets = targets.reshape(len(inputs), -1)
    if inputs.shape[1] != net.n_in or targets.shape[1] != net.n_out:
        raise NetError(f"data shapes {inputs.shape}/{targets.shape} do not fit net {net.sizes}")
    if fit_normalization:
        net.set_normalization(inputs, targets)
    xn = (inputs - net.in_mean) / net.in_std
    tn = (targets - net.out_mean) / net.out_std
    rng = np.random.default_rng(seed)
    velocity = [np.zeros_like(p) for p in net.params()]
    n = len(xn)
    curve: list[float] = []
    val_curve: list[float] = []
    step_lr = lr
    running = None
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            pred, cache = _forward_norm(net, xn[idx])
            diff = pred - tn[idx]
            total += float(np.sum(diff**2))
            count += diff.size
            grads = _backward(net, cache, 2.0 * diff / diff.size)
            for p, v, g in zip(net.params(), velocity, grads):
                v *= momentum
                v -= step_lr * g
                p += v
        loss = total / count
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={lr}, batch={batch})")
        prev_running = running
        running = loss if running is None else 0.9 * running + 0.1 * loss
        if prev_running is not None and running > divergence_factor * prev_running and running > 1e-12:
            raise TrainingDiverged(
                f"running loss jumped {prev_running:.3g} -> {running:.3g} at epoch {epoch}; lower lr (now {step_lr})"
            )
        curve.append(loss)
        if val_inputs is not None and val_targets is not None and len(val_inputs):
            val_curve.append(mse(net, val_inputs, val_targets))
        if on_epoch is not None:
            on_epoch(epoch, loss)
        step_lr *= lr_decay
    if epochs == 0:
        curve_loss = mse(net, inputs, targets)
    else:
        curve_loss = curve[-1]
    val_loss = val_curve[-1] if val_curve else (
        mse(net, val_inputs, val_targets) if val_inputs is not None and val_targets is not None and len(val_inputs) else None
    )
    return TrainReport(epochs, curve_loss, val_loss, curve, val_curve)


def gradient_check(net: Net, x: np.ndarray, target: np.ndarray, eps: float = 1e-4) -> float:
    """Max over all parameters of |analytic - central difference| / max(1, |a|, |f|)."""
    if eps <= 0:
        raise NetError("eps must be > 0")
    _, grads = mse_and_grads(net, x, target)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + eps
            up, _ = mse_and_grads(net, x, target)
            flat[k] = keep - eps
            down, _ = mse_and_grads(net, x, target)
            flat[k] = keep
            numeric = (up - down) / (2 * eps)
            err = abs(gflat[k] - numeric) / max(1.0, abs(gflat[k]), abs(numeric))
            worst = max(worst, err)
    return worst


# -------------------------------------------------------------------------- I/O


def net_to_json(net: Net) -> dict:
    return {
        "format": NET_FORMAT,
        "version": NET_VERSION,
        "sizes": net.sizes,
        "activations": net.activations,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "normalization": {
            "in_mean": net.in_mean.tolist(),
            "in_std": net.in_std.tolist(),
            "out_mean": net.out_mean.tolist(),
            "out_std": net.out_std.tolist(),
        },
    }


def net_from_json(doc: dict) -> Net:
    if not isinstance(doc, dict) or doc.get("format") != NET_FORMAT:
        raise NetFormatError("not a network file (missing format tag)")
    if doc.get("version") != NET_VERSION:
        raise NetFormatError(f"unsupported network version {doc.get('version')!r}, expected {NET_VERSION}")
    try:
        norm = doc["normalization"]
        return Net(
            sizes=[int(s) for s in doc["sizes"]],
            weights=[np.asarray(W, dtype=float) for W in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
            activations=list(doc["activations"]),
            in_mean=np.asarray(norm["in_mean"], dtype=float),
            in_std=np.asarray(norm["in_std"], dtype=float),
            out_mean=np.asarray(norm["out_mean"], dtype=float),
            out_std=np.asarray(norm["out_std"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise NetFormatError(f"malformed network file: {exc}") from exc


def save_net(net: Net, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(net_to_json(net)))
    return path


def load_net(path: str | Path) -> Net:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetFormatError(f"{path}: truncated or invalid JSON ({exc.msg})") from exc
    return net_from_json(doc)
