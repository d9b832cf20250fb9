"""Dense and NeurAM surrogates, scaled surrogates and the optimal scaling factor.

Direct surrogates learn the high-fidelity output; discrepancy surrogates learn
``hf - lf`` and only ever return the discrepancy, callers add the LF model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import STD_FLOOR, Dataset, Standardizer
from .errors import ConfigurationError, DegenerateSurrogateError, InputShapeError
from .nn import MlpNet, TrainConfig, fit, mlp_sizes, parse_floats, format_floats

TARGETS = ("direct", "discrepancy")


@dataclass(frozen=True)
class Architecture:
    """Hidden-layer spec for a surrogate; encoder/decoder fields are NeurAM only."""

    surrogate_layers: int
    surrogate_width: int
    autoencoder_layers: int = 0
    autoencoder_width: int = 0


def _check_target(target: str, data: Dataset) -> None:
    if target not in TARGETS:
        raise ConfigurationError(f"unknown surrogate target {target!r}")
    if target == "discrepancy" and data.lf_outputs is None:
        raise ConfigurationError("discrepancy target needs low-fidelity outputs")


def _as_batch(x, dim: int):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[-1] != dim:
        raise InputShapeError(f"expected inputs of dimension {dim}, got {xb.shape[-1]}")
    return xb, single


@dataclass
class DenseSurrogate:
    net: MlpNet
    target: str
    x_scaler: Standardizer
    y_scaler: Standardizer
    train_mse: float = float("nan")
    test_mse: float = float("nan")

    kind = "dense"

    @property
    def dim(self) -> int:
        return self.net.n_in

    @property
    def n_outputs(self) -> int:
        return self.net.n_out

    def predict(self, x) -> np.ndarray:
        xb, single = _as_batch(x, self.dim)
        out = self.y_scaler.inverse(self.net.forward(self.x_scaler.forward(xb)))
        return out[0] if single else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "net": self.net.to_dict(),
                "x_scaler": self.x_scaler.to_dict(), "y_scaler": self.y_scaler.to_dict(),
                "train_mse": self.train_mse, "test_mse": self.test_mse}

    @classmethod
    def from_dict(cls, d: dict) -> "DenseSurrogate":
        return cls(MlpNet.from_dict(d["net"]), d["target"], Standardizer.from_dict(d["x_scaler"]),
                   Standardizer.from_dict(d["y_scaler"]), d["train_mse"], d["test_mse"])


def _pin_constant_outputs(net: MlpNet, y_train: np.ndarray) -> None:
    """Constant label columns standardize to zero; make the net return exactly that."""
    const = np.asarray(y_train).std(axis=0) < STD_FLOOR
    net.weights[-1][:, const] = 0.0
    net.biases[-1][const] = 0.0


def _mse(pred, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.sum((pred - y) ** 2, axis=1)))


def train_dense(data: Dataset, target: str, cfg: TrainConfig, arch: Architecture) -> DenseSurrogate:
    _check_target(target, data)
    x_tr, y_tr = data.split("train", target)
    xs, ys = Standardizer.fit(x_tr), Standardizer.fit(y_tr)
    X, Y = xs.forward(x_tr), ys.forward(y_tr)
    rng = np.random.default_rng(cfg.seed)
    net = MlpNet(mlp_sizes(data.dim, data.n_outputs, arch.surrogate_layers, arch.surrogate_width), rng=rng)

    def loss_and_grad(theta):
        net.theta = theta
        tape = ad.Tape()
        pv = net.bind(tape)
        loss = ad.mean(ad.sum(ad.square(net.apply(X, pv) - Y), axis=1))
        tape.backward(loss)
        return float(loss.value), net.flatten_grads(pv)

    theta, _ = fit(net.theta.copy(), loss_and_grad, cfg)
    net.theta = theta
    _pin_constant_outputs(net, y_tr)
    sur = DenseSurrogate(net, target, xs, ys)
    sur.train_mse = _mse(sur.predict(x_tr), y_tr)
    x_te, y_te = data.split("test", target)
    if len(x_te):
        sur.test_mse = _mse(sur.predict(x_te), y_te)
    return sur


@dataclass
class NeurAmModel:
    """Encoder ``E: R^d -> R^r``, decoder ``D: R^r -> R^d``, latent surrogate ``S: R^r -> R^m``.

    All three nets act on standardized coordinates.  ``loss_terms`` holds the
    three loss components on the training split at the final parameters.
    """

    encoder: MlpNet
    decoder: MlpNet
    surrogate: MlpNet
    target: str
    x_scaler: Standardizer
    y_scaler: Standardizer
    loss_terms: tuple = (float("nan"),) * 3
    test_loss_terms: tuple = (float("nan"),) * 3
    train_mse: float = float("nan")
    test_mse: float = float("nan")

    kind = "neuram"

    @property
    def latent_dim(self) -> int:
        return self.encoder.n_out

    @property
    def dim(self) -> int:
        return self.encoder.n_in

    @property
    def n_outputs(self) -> int:
        return self.surrogate.n_out

    def predict(self, x) -> np.ndarray:
        xb, single = _as_batch(x, self.dim)
        z = self.encoder.forward(self.x_scaler.forward(xb))
        out = self.y_scaler.inverse(self.surrogate.forward(z))
        return out[0] if single else out

    __call__ = predict

    def encode(self, x) -> np.ndarray:
        xb, _ = _as_batch(x, self.dim)
        return self.encoder.forward(self.x_scaler.forward(xb))

    def project(self, x) -> np.ndarray:
        """Map inputs onto the learned manifold, ``D(E(x))`` in raw coordinates."""
        xb, single = _as_batch(x, self.dim)
        out = self.x_scaler.inverse(self.decoder.forward(self.encode(xb)))
        return out[0] if single else out

    def evaluate_loss(self, x, y) -> tuple[float, float, float]:
        """The three loss terms on raw data ``(x, y)`` with all nets frozen."""
        X = self.x_scaler.forward(np.atleast_2d(x))
        Y = self.y_scaler.forward(np.asarray(y, dtype=float).reshape(len(X), -1))
        return _neuram_terms_np(self.encoder, self.decoder, self.surrogate, X, Y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, "encoder": self.encoder.to_dict(),
                "decoder": self.decoder.to_dict(), "surrogate": self.surrogate.to_dict(),
                "x_scaler": self.x_scaler.to_dict(), "y_scaler": self.y_scaler.to_dict(),
                "loss_terms": format_floats(self.loss_terms),
                "test_loss_terms": format_floats(self.test_loss_terms),
                "train_mse": self.train_mse, "test_mse": self.test_mse}

    @classmethod
    def from_dict(cls, d: dict) -> "NeurAmModel":
        return cls(MlpNet.from_dict(d["encoder"]), MlpNet.from_dict(d["decoder"]),
                   MlpNet.from_dict(d["surrogate"]), d["target"],
                   Standardizer.from_dict(d["x_scaler"]), Standardizer.from_dict(d["y_scaler"]),
                   tuple(parse_floats(d["loss_terms"])), tuple(parse_floats(d["test_loss_terms"])),
                   d["train_mse"], d["test_mse"])


def _neuram_terms_np(E: MlpNet, D: MlpNet, S: MlpNet, X, Y):
    z = E.forward(X)
    xr = D.forward(z)
    z2 = E.forward(xr)
    t1 = np.mean(np.sum((Y - S.forward(z)) ** 2, axis=1))
    t2 = np.mean(np.sum((Y - S.forward(z2)) ** 2, axis=1))
    t3 = np.mean(np.sum((xr - D.forward(z2)) ** 2, axis=1))
    return float(t1), float(t2), float(t3)


def train_neuram(data: Dataset, target: str, cfg: TrainConfig, arch: Architecture) -> NeurAmModel:
    _check_target(target, data)
    d, m = data.dim, data.n_outputs
    r = m
    x_tr, y_tr = data.split("train", target)
    xs, ys = Standardizer.fit(x_tr), Standardizer.fit(y_tr)
    X, Y = xs.forward(x_tr), ys.forward(y_tr)
    rng = np.random.default_rng(cfg.seed)
    E = MlpNet(mlp_sizes(d, r, arch.autoencoder_layers, arch.autoencoder_width), rng=rng)
    D = MlpNet(mlp_sizes(r, d, arch.autoencoder_layers, arch.autoencoder_width), rng=rng)
    S = MlpNet(mlp_sizes(r, m, arch.surrogate_layers, arch.surrogate_width), rng=rng)
    nE, nD = E.n_params, D.n_params

    def unpack(theta):
        E.theta, D.theta, S.theta = theta[:nE], theta[nE:nE + nD], theta[nE + nD:]

    def loss_and_grad(theta):
        unpack(theta)
        tape = ad.Tape()
        pe, pd, ps = E.bind(tape), D.bind(tape), S.bind(tape)
        z = E.apply(X, pe)
        xr = D.apply(z, pd)
        z2 = E.apply(xr, pe)
        t1 = ad.mean(ad.sum(ad.square(S.apply(z, ps) - Y), axis=1))
        t2 = ad.mean(ad.sum(ad.square(S.apply(z2, ps) - Y), axis=1))
        t3 = ad.mean(ad.sum(ad.square(xr - D.apply(z2, pd)), axis=1))
        loss = t1 + t2 + t3
        tape.backward(loss)
        g = np.concatenate([E.flatten_grads(pe), D.flatten_grads(pd), S.flatten_grads(ps)])
        return float(loss.value), g

    theta0 = np.concatenate([E.theta, D.theta, S.theta])
    theta, _ = fit(theta0, loss_and_grad, cfg)
    unpack(theta.copy())
    _pin_constant_outputs(S, y_tr)
    model = NeurAmModel(E.copy(), D.copy(), S.copy(), target, xs, ys)
    model.loss_terms = _neuram_terms_np(model.encoder, model.decoder, model.surrogate, X, Y)
    model.train_mse = _mse(model.predict(x_tr), y_tr)
    x_te, y_te = data.split("test", target)
    if len(x_te):
        model.test_loss_terms = model.evaluate_loss(x_te, y_te)
        model.test_mse = _mse(model.predict(x_te), y_te)
    return model


def predict(surrogate, x) -> np.ndarray:
    """Evaluate any trained surrogate; discrepancy surrogates return only the discrepancy."""
    return surrogate.predict(x)


def surrogate_from_dict(d: dict):
    return {"dense": DenseSurrogate, "neuram": NeurAmModel}[d["kind"]].from_dict(d)


@dataclass
class ScaledSurrogate:
    """``alpha * Q_dagger(x)``; ``base`` maps (n, d) inputs to (n, m) outputs."""

    base: Callable[[np.ndarray], np.ndarray]
    alpha: np.ndarray

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.alpha) * self.base(x)

    __call__ = predict


def fit_alpha_opt(hf_vals, qdagger_vals):
    """Sample ``Cov(hf, q) / Var(q)``; per column when given (N, m) arrays."""
    hf = np.asarray(hf_vals, dtype=float)
    q = np.asarray(qdagger_vals, dtype=float)
    if hf.shape != q.shape:
        raise InputShapeError("hf and surrogate values must have the same shape")
    if hf.shape[0] < 2:
        raise ConfigurationError("need at least two samples")
    qc = q - q.mean(axis=0)
    hc = hf - hf.mean(axis=0)
    var = np.sum(qc * qc, axis=0) / (len(q) - 1)
    scale = np.maximum(np.abs(q).max(axis=0), 1.0)
    if np.any(var <= (1e-14 * scale) ** 2):
        raise DegenerateSurrogateError("surrogate values have zero sample variance")
    cov = np.sum(hc * qc, axis=0) / (len(q) - 1)
    alpha = cov / var
    return float(alpha) if np.ndim(alpha) == 0 else alpha


def inflated_variance(alpha, hf_vals, qdagger_vals) -> float:
    """Sample variance of ``hf - alpha * q`` (ddof=1)."""
    r = np.asarray(hf_vals, dtype=float) - np.asarray(alpha) * np.asarray(qdagger_vals, dtype=float)
    return np.var(r, axis=0, ddof=1)
