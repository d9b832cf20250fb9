"""Feed-forward tanh networks, Adam training and checkpoint serialization."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import InputShapeError, TrainingDivergenceError

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10_000
    learning_rate: float = 1e-3
    scheduler_step: float = 1.0
    weight_decay: float = 2e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.scheduler_step <= 1:
            raise ValueError("scheduler_step must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.scheduler_step**epoch

    def replace(self, **kw) -> "TrainConfig":
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)


class MlpNet:
    """Dense network: tanh on hidden layers, identity on the output layer.

    Parameters live in one flat vector ``theta``; ``weights[i]`` (fan_in x fan_out)
    and ``biases[i]`` are views into it.
    """

    def __init__(self, layer_sizes: Sequence[int], theta: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {layer_sizes!r}")
        self.layer_sizes = sizes
        self._shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self._shapes.append(((fan_in, fan_out), (fan_out,)))
        n = sum(a * b + b for (a, b), _ in self._shapes)
        if theta is None:
            theta = self._glorot(rng if rng is not None else np.random.default_rng(0))
        theta = np.array(theta, dtype=float)
        if theta.shape != (n,):
            raise InputShapeError(f"expected {n} parameters, got {theta.shape}")
        self.theta = theta

    def _glorot(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for (fan_in, fan_out), _ in self._shapes:
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-lim, lim, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value: np.ndarray) -> None:
        self._theta = value
        self.weights, self.biases = [], []
        k = 0
        for (wshape, bshape) in self._shapes:
            nw = wshape[0] * wshape[1]
            self.weights.append(value[k:k + nw].reshape(wshape))
            k += nw
            self.biases.append(value[k:k + bshape[0]])
            k += bshape[0]

    @property
    def n_params(self) -> int:
        return self._theta.size

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpNet":
        return MlpNet(self.layer_sizes, self._theta.copy())

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise InputShapeError(
                f"network expects inputs of dimension {self.n_in}, got {x.shape[-1]}"
            )
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        single = x.ndim == 1
        h = x[None, :] if single else x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
        return h[0] if single else h

    __call__ = forward

    def bind(self, tape: ad.Tape) -> list[ad.Var]:
        """Register parameters on ``tape``; returns [W0, b0, W1, b1, ...]."""
        return [tape.var(p) for p in self.param_arrays()]

    def apply(self, x, pvars: Sequence[ad.Var]) -> ad.Var:
        """Taped forward pass of a batch ``x`` of shape (n, n_in)."""
        if not isinstance(x, ad.Var):
            x = self._check(x)
        h = x
        nl = len(pvars) // 2
        for i in range(nl):
            h = ad.affine(h, pvars[2 * i], pvars[2 * i + 1])
            if i < nl - 1:
                h = ad.tanh(h)
        return h

    def flatten_grads(self, pvars: Sequence[ad.Var]) -> np.ndarray:
        return np.concatenate([
            (np.zeros(v.value.size) if v.grad is None else np.asarray(v.grad).ravel())
            for v in pvars
        ])

    def to_dict(self) -> dict:
        return {"layer_sizes": self.layer_sizes, "activation": "tanh",
                "theta": format_floats(self._theta)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpNet":
        return cls(d["layer_sizes"], parse_floats(d["theta"]))


def mlp_sizes(n_in: int, n_out: int, hidden_layers: int, width: int) -> list[int]:
    return [n_in] + [width] * hidden_layers + [n_out]


def gradient(net: MlpNet, loss_fn: Callable[[ad.Var, np.ndarray], ad.Var],
             batch: tuple[np.ndarray, np.ndarray]) -> list[np.ndarray]:
    """Reverse-mode gradient of ``loss_fn(net(x), y)`` w.r.t. every parameter.

    The returned list is ordered [W0, b0, W1, b1, ...] with matching shapes.
    """
    x, y = batch
    tape = ad.Tape()
    pv = net.bind(tape)
    loss = loss_fn(net.apply(np.atleast_2d(x), pv), y)
    if not isinstance(loss, ad.Var):
        return [np.zeros_like(p) for p in net.param_arrays()]
    tape.backward(loss)
    return [np.zeros_like(p) if v.grad is None else np.asarray(v.grad, dtype=float)
            for p, v in zip(net.param_arrays(), pv)]


def mse_loss(pred: ad.Var, target: np.ndarray) -> ad.Var:
    return ad.mean(ad.sum(ad.square(pred - target), axis=1))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: TrainConfig,
              epoch: int) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update with decoupled weight decay."""
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergenceError("non-finite gradient", epoch)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    mhat = m / (1.0 - cfg.beta1**t)
    vhat = v / (1.0 - cfg.beta2**t)
    lr = cfg.lr_at(epoch)
    new = params - lr * mhat / (np.sqrt(vhat) + cfg.eps)
    if cfg.weight_decay:
        new = new - lr * cfg.weight_decay * params
    return new, AdamState(m, v, t)


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)


def fit(theta: np.ndarray, loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
        cfg: TrainConfig, every: int = 0,
        monitor: Optional[Callable[[np.ndarray], float]] = None) -> tuple[np.ndarray, TrainHistory]:
    """Full-batch Adam on a flat parameter vector.

    ``monitor`` (if given) is evaluated every ``every`` epochs and stored in the
    history keyed by epoch.
    """
    state = AdamState.zeros(theta.size)
    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        if every and monitor is not None and epoch % every == 0:
            hist.checkpoints[epoch] = monitor(theta)
        loss, g = loss_and_grad(theta)
        if not math.isfinite(loss):
            raise TrainingDivergenceError("non-finite loss", epoch)
        hist.loss.append(loss)
        theta, state = adam_step(theta, g, state, cfg, epoch)
    if every and monitor is not None:
        hist.checkpoints[cfg.epochs] = monitor(theta)
    return theta, hist


# serialization ------------------------------------------------------------------

def format_floats(a) -> str:
    return " ".join(FLOAT_FMT % v for v in np.asarray(a, dtype=float).ravel())


def parse_floats(s: str) -> np.ndarray:
    if not s:
        return np.zeros(0)
    return np.array([float(t) for t in s.split()], dtype=float)


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
