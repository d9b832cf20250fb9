"""Normalizing-flow density estimation.

``FlowModel`` represents a bijection ``G`` pushing a standard normal forward to
the data distribution.  Layers are stored in the normalizing direction
(data -> latent), which is what maximum-likelihood training differentiates;
the generative direction is evaluated in closed form for sampling.

* dimension >= 2: RealNVP affine couplings with alternating binary masks, each
  block transforms both halves, followed by an elementwise affine layer;
* dimension 1: alternating scalar affine maps and monotone rational-quadratic
  splines with identity tails.

Data are standardized with training-split statistics before entering the
layers; the Jacobian of that map is included in every density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .data import STD_FLOOR
from .errors import InputShapeError, TrainingDivergenceError
from .nn import MlpNet, TrainConfig, fit, format_floats, mlp_sizes, parse_floats

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FlowArchitecture:
    layers: int = 4  # hidden layers of coupling nets (RealNVP) / spline layers (1-D)
    width: int = 8  # neurons per hidden layer of coupling nets
    blocks: int = 2  # coupling blocks (RealNVP)
    bins: int = 8  # spline bins (1-D)
    bound: float = 5.0  # spline support [-bound, bound] in standardized units


# ---------------------------------------------------------------------------
# layers

class Affine1D:
    """``y = exp(a) x + b``."""

    n_params = 2

    def init_params(self, rng):
        return np.zeros(2)

    def shapes(self):
        return [(1,), (1,)]

    def normalize_tape(self, x: ad.Var, p):
        a, b = p
        y = x * ad.exp(a) + b
        return y, a * np.ones(x.shape[0])

    def normalize(self, x, p):
        a, b = p[0], p[1]
        return x * math.exp(a) + b, np.full(x.shape[0], a)

    def generate(self, y, p):
        a, b = p[0], p[1]
        return (y - b) * math.exp(-a), np.full(y.shape[0], -a)


class RQSpline1D:
    """Monotone rational-quadratic spline on [-B, B], identity outside."""

    min_width = 1e-3
    min_height = 1e-3
    min_deriv = 1e-3

    def __init__(self, bins: int = 8, bound: float = 5.0):
        self.K = int(bins)
        self.B = float(bound)
        K = self.K
        self.n_params = 3 * K - 1
        # cumulative-sum matrix: knots = -B + 2B * cum @ widths
        self._cum = np.tril(np.ones((K + 1, K)), -1)
        self._embed = np.zeros((K + 1, K - 1))
        self._embed[1:K, :] = np.eye(K - 1)
        self._ends = np.zeros(K + 1)
        self._ends[[0, K]] = 1.0

    def shapes(self):
        return [(self.K,), (self.K,), (self.K - 1,)]

    def init_params(self, rng):
        # identity: equal bins, unit interior slopes
        dr = math.log(math.expm1(1.0 - self.min_deriv))
        return np.concatenate([np.zeros(self.K), np.zeros(self.K), np.full(self.K - 1, dr)])

    # knot construction -----------------------------------------------------
    def _knots_np(self, p):
        K, B = self.K, self.B
        wr, hr, dr = p[:K], p[K:2 * K], p[2 * K:]
        kx = -B + 2 * B * self._cum @ _softmax_np(wr, self.min_width)
        ky = -B + 2 * B * self._cum @ _softmax_np(hr, self.min_height)
        d = self._embed @ (self.min_deriv + np.logaddexp(0.0, dr)) + self._ends
        return kx, ky, d

    def _knots_tape(self, wr, hr, dr):
        B = self.B
        kx = ad.matmul(self._cum, _softmax_tape(wr, self.min_width, self.K)) * (2 * B) - B
        ky = ad.matmul(self._cum, _softmax_tape(hr, self.min_height, self.K)) * (2 * B) - B
        d = ad.matmul(self._embed, ad.softplus(dr) + self.min_deriv) + self._ends
        return kx, ky, d

    def _onehots(self, knots, x):
        k = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, self.K - 1)
        n = x.shape[0]
        lo = np.zeros((n, self.K + 1))
        lo[np.arange(n), k] = 1.0
        hi = np.zeros((n, self.K + 1))
        hi[np.arange(n), k + 1] = 1.0
        return lo, hi

    # transforms ------------------------------------------------------------
    def normalize_tape(self, x: ad.Var, p):
        wr, hr, dr = p
        kx, ky, d = self._knots_tape(wr, hr, dr)
        inside = np.abs(x.value) < self.B
        xin = ad.where(inside, x, 0.0)
        lo, hi = self._onehots(kx.value, xin.value)
        xk, xk1 = ad.matmul(lo, kx), ad.matmul(hi, kx)
        yk, yk1 = ad.matmul(lo, ky), ad.matmul(hi, ky)
        dk, dk1 = ad.matmul(lo, d), ad.matmul(hi, d)
        wk = xk1 - xk
        hk = yk1 - yk
        sk = hk / wk
        xi = (xin - xk) / wk
        xi1m = xi * (1.0 - xi)
        den = sk + (dk1 + dk - 2.0 * sk) * xi1m
        y = yk + hk * (sk * ad.square(xi) + dk * xi1m) / den
        dnum = ad.square(sk) * (dk1 * ad.square(xi) + 2.0 * sk * xi1m + dk * ad.square(1.0 - xi))
        ld = ad.log(dnum) - 2.0 * ad.log(den)
        return ad.where(inside, y, x), ad.where(inside, ld, 0.0)

    def normalize(self, x, p):
        kx, ky, d = self._knots_np(p)
        inside = np.abs(x) < self.B
        xin = np.where(inside, x, 0.0)
        k = np.clip(np.searchsorted(kx, xin, side="right") - 1, 0, self.K - 1)
        xk, wk = kx[k], kx[k + 1] - kx[k]
        yk, hk = ky[k], ky[k + 1] - ky[k]
        dk, dk1 = d[k], d[k + 1]
        sk = hk / wk
        xi = (xin - xk) / wk
        xi1m = xi * (1.0 - xi)
        den = sk + (dk1 + dk - 2.0 * sk) * xi1m
        y = yk + hk * (sk * xi**2 + dk * xi1m) / den
        dnum = sk**2 * (dk1 * xi**2 + 2.0 * sk * xi1m + dk * (1.0 - xi) ** 2)
        ld = np.log(dnum) - 2.0 * np.log(den)
        return np.where(inside, y, x), np.where(inside, ld, 0.0)

    def generate(self, y, p):
        kx, ky, d = self._knots_np(p)
        inside = np.abs(y) < self.B
        yin = np.where(inside, y, 0.0)
        k = np.clip(np.searchsorted(ky, yin, side="right") - 1, 0, self.K - 1)
        xk, wk = kx[k], kx[k + 1] - kx[k]
        yk, hk = ky[k], ky[k + 1] - ky[k]
        dk, dk1 = d[k], d[k + 1]
        sk = hk / wk
        dy = yin - yk
        c2 = dk1 + dk - 2.0 * sk
        a = hk * (sk - dk) + dy * c2
        b = hk * dk - dy * c2
        c = -sk * dy
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        xi = (2.0 * c) / (-b - np.sqrt(disc))
        x = xk + xi * wk
        xi1m = xi * (1.0 - xi)
        den = sk + c2 * xi1m
        dnum = sk**2 * (dk1 * xi**2 + 2.0 * sk * xi1m + dk * (1.0 - xi) ** 2)
        ld = -(np.log(dnum) - 2.0 * np.log(den))
        return np.where(inside, x, y), np.where(inside, ld, 0.0)


def _softmax_np(r, floor):
    e = np.exp(r - r.max())
    return floor + (1.0 - len(r) * floor) * e / e.sum()


def _softmax_tape(r: ad.Var, floor, K):
    e = ad.exp(r - float(r.value.max()))
    return (e / ad.sum(e)) * (1.0 - K * floor) + floor


class AffineCoupling:
    """RealNVP coupling; coordinates with ``mask == 1`` condition the others."""

    def __init__(self, mask: np.ndarray, layers: int, width: int):
        self.mask = np.asarray(mask, dtype=float)
        D = len(self.mask)
        self.sizes = mlp_sizes(D, D, layers, width)
        self._s = MlpNet(self.sizes, np.zeros(MlpNet(self.sizes).n_params))
        self._t = MlpNet(self.sizes, np.zeros(self._s.n_params))
        self.n_net = self._s.n_params
        self.n_params = 2 * self.n_net

    def shapes(self):
        return [a.shape for a in self._s.param_arrays()] * 2

    def init_params(self, rng):
        # Glorot hidden layers, zero output layer -> identity coupling
        parts = []
        for _ in range(2):
            net = MlpNet(self.sizes, rng=rng)
            net.weights[-1][:] = 0.0
            net.biases[-1][:] = 0.0
            parts.append(net.theta)
        return np.concatenate(parts)

    def _nets(self, p):
        self._s.theta = p[:self.n_net]
        self._t.theta = p[self.n_net:]
        return self._s, self._t

    def normalize_tape(self, x: ad.Var, p):
        nl = len(p) // 2
        m, mc = self.mask, 1.0 - self.mask
        h = x * m
        s = self._s.apply(h, p[:nl]) * mc
        t = self._t.apply(h, p[nl:]) * mc
        z = h + (x - t) * ad.exp(-s) * mc
        return z, -ad.sum(s, axis=1)

    def normalize(self, x, p):
        S, T = self._nets(p)
        m, mc = self.mask, 1.0 - self.mask
        h = x * m
        s = S.forward(h) * mc
        t = T.forward(h) * mc
        return h + (x - t) * np.exp(-s) * mc, -s.sum(axis=1)

    def generate(self, z, p):
        S, T = self._nets(p)
        m, mc = self.mask, 1.0 - self.mask
        h = z * m
        s = S.forward(h) * mc
        t = T.forward(h) * mc
        return h + (z * np.exp(s) + t) * mc, s.sum(axis=1)


class ElementwiseAffine:
    def __init__(self, dim: int):
        self.dim = dim
        self.n_params = 2 * dim

    def shapes(self):
        return [(self.dim,), (self.dim,)]

    def init_params(self, rng):
        return np.zeros(2 * self.dim)

    def normalize_tape(self, x, p):
        a, b = p
        return x * ad.exp(a) + b, ad.sum(a) * np.ones(x.shape[0])

    def normalize(self, x, p):
        a, b = p[:self.dim], p[self.dim:]
        return x * np.exp(a) + b, np.full(x.shape[0], a.sum())

    def generate(self, y, p):
        a, b = p[:self.dim], p[self.dim:]
        return (y - b) * np.exp(-a), np.full(y.shape[0], -a.sum())


def _split(p: np.ndarray, shapes):
    out, k = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(p[k:k + n].reshape(s))
        k += n
    return out


# ---------------------------------------------------------------------------
# the flow

class FlowModel:
    def __init__(self, dim: int, arch: FlowArchitecture = FlowArchitecture(),
                 theta: Optional[np.ndarray] = None, mean=None, std=None,
                 rng: Optional[np.random.Generator] = None):
        if dim < 1:
            raise ValueError("flow dimension must be >= 1")
        self.dim = int(dim)
        self.arch = arch
        if self.dim == 1:
            self.layers = []
            for _ in range(arch.layers):
                self.layers += [Affine1D(), RQSpline1D(arch.bins, arch.bound)]
        else:
            even = (np.arange(self.dim) % 2 == 0).astype(float)
            self.layers = []
            for _ in range(arch.blocks):
                self.layers += [AffineCoupling(even, arch.layers, arch.width),
                                AffineCoupling(1.0 - even, arch.layers, arch.width)]
            self.layers.append(ElementwiseAffine(self.dim))
        self._offsets = np.cumsum([0] + [L.n_params for L in self.layers])
        if theta is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            theta = np.concatenate([L.init_params(rng) for L in self.layers])
        self.theta = np.asarray(theta, dtype=float)
        if self.theta.shape != (self._offsets[-1],):
            raise InputShapeError("flow parameter vector has the wrong length")
        self.mean = np.zeros(self.dim) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(self.dim) if std is None else np.asarray(std, dtype=float)
        self.train_loglik = float("nan")
        self.test_loglik = float("nan")
        self.history: dict = {}

    @classmethod
    def identity(cls, dim: int, arch: FlowArchitecture = FlowArchitecture(), mean=None, std=None):
        flow = cls(dim, arch, mean=mean, std=std)
        flow.theta = np.concatenate([
            L.init_params(None) if not isinstance(L, AffineCoupling) else np.zeros(L.n_params)
            for L in flow.layers
        ])
        return flow

    def _layer_params(self, theta=None):
        theta = self.theta if theta is None else theta
        return [theta[a:b] for a, b in zip(self._offsets[:-1], self._offsets[1:])]

    def _check(self, a):
        a = np.asarray(a, dtype=float)
        if self.dim == 1 and a.ndim <= 1:
            a = a.reshape(-1, 1)
        a = np.atleast_2d(a)
        if a.shape[-1] != self.dim:
            raise InputShapeError(f"flow expects dimension {self.dim}, got {a.shape[-1]}")
        return a

    # internal standardized-space maps ------------------------------------------
    def _normalize_std(self, u, theta=None):
        ld = np.zeros(u.shape[0])
        h = u[:, 0] if self.dim == 1 else u
        for L, p in zip(self.layers, self._layer_params(theta)):
            h, l = L.normalize(h, p)
            ld = ld + l
        return (h[:, None] if self.dim == 1 else h), ld

    def _generate_std(self, z):
        ld = np.zeros(z.shape[0])
        h = z[:, 0] if self.dim == 1 else z
        for L, p in reversed(list(zip(self.layers, self._layer_params()))):
            h, l = L.generate(h, p)
            ld = ld + l
        return (h[:, None] if self.dim == 1 else h), ld

    # public maps ---------------------------------------------------------------
    def inverse(self, delta):
        """``G^{-1}``: data -> latent; returns (z, log|det dz/ddelta|)."""
        d = self._check(delta)
        u = (d - self.mean) / self.std
        z, ld = self._normalize_std(u)
        return z, ld - np.sum(np.log(self.std))

    def forward(self, z):
        """``G``: latent -> data; returns (delta, log|det ddelta/dz|)."""
        z = self._check(z)
        u, ld = self._generate_std(z)
        return u * self.std + self.mean, ld + np.sum(np.log(self.std))

    def log_density(self, delta) -> np.ndarray:
        z, ld = self.inverse(delta)
        out = -0.5 * np.sum(z * z, axis=1) - 0.5 * self.dim * LOG_2PI + ld
        return out

    def sample(self, n: int, seed=None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.forward(z)[0]

    # training support ----------------------------------------------------------
    def _nll_and_grad(self, U: np.ndarray, theta: np.ndarray):
        tape = ad.Tape()
        pvars = []
        h = tape.constant(U[:, 0] if self.dim == 1 else U)
        ld = None
        for L, p in zip(self.layers, self._layer_params(theta)):
            pv = [tape.var(a) for a in _split(p, L.shapes())]
            pvars.append(pv)
            h, l = L.normalize_tape(h, pv)
            ld = l if ld is None else ld + l
        sq = ad.square(h) if self.dim == 1 else ad.sum(ad.square(h), axis=1)
        nll = ad.mean(sq * 0.5 - ld) + 0.5 * self.dim * LOG_2PI
        tape.backward(nll)
        g = np.concatenate([
            (np.zeros(v.value.size) if v.grad is None else np.asarray(v.grad).ravel())
            for pv in pvars for v in pv
        ])
        return float(nll.value), g

    def mean_loglik(self, delta) -> float:
        return float(np.mean(self.log_density(delta)))

    # serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        a = self.arch
        return {
            "kind": "spline1d" if self.dim == 1 else "realnvp",
            "dim": self.dim,
            "arch": {"layers": a.layers, "width": a.width, "blocks": a.blocks,
                     "bins": a.bins, "bound": a.bound},
            "masks": [L.mask.tolist() for L in self.layers if isinstance(L, AffineCoupling)],
            "theta": format_floats(self.theta),
            "mean": format_floats(self.mean),
            "std": format_floats(self.std),
            "train_loglik": self.train_loglik,
            "test_loglik": self.test_loglik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowModel":
        flow = cls(d["dim"], FlowArchitecture(**d["arch"]), parse_floats(d["theta"]),
                   parse_floats(d["mean"]), parse_floats(d["std"]))
        flow.train_loglik = d.get("train_loglik", float("nan"))
        flow.test_loglik = d.get("test_loglik", float("nan"))
        return flow


@dataclass
class NoiseSampleSet:
    """Inflated-noise residuals ``hf - alpha * q_dagger + eta`` with provenance."""

    deltas: np.ndarray
    alpha: object = 1.0
    surrogate_id: str = ""

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        self.deltas = d[:, None] if d.ndim == 1 else d

    @property
    def dim(self) -> int:
        return self.deltas.shape[1]

    @classmethod
    def from_residuals(cls, hf_vals, qdagger_vals, alpha, noise_cov_diag, rng,
                       surrogate_id: str = "") -> "NoiseSampleSet":
        hf = np.asarray(hf_vals, dtype=float)
        hf = hf[:, None] if hf.ndim == 1 else hf
        q = np.asarray(qdagger_vals, dtype=float).reshape(hf.shape)
        eta = rng.standard_normal(hf.shape) * np.sqrt(np.asarray(noise_cov_diag, dtype=float))
        return cls(hf - np.asarray(alpha) * q + eta, alpha, surrogate_id)


def train_flow(samples, cfg: TrainConfig, arch: FlowArchitecture = FlowArchitecture(),
               train_fraction: float = 0.75, monitor_every: int = 100) -> FlowModel:
    """Maximum-likelihood fit on a seeded 75/25 split of the samples."""
    deltas = samples.deltas if isinstance(samples, NoiseSampleSet) else np.asarray(samples, dtype=float)
    if deltas.ndim == 1:
        deltas = deltas[:, None]
    n, dim = deltas.shape
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_tr = max(1, int(round(train_fraction * n)))
    tr, te = deltas[perm[:n_tr]], deltas[perm[n_tr:]]
    mean = tr.mean(axis=0)
    raw_std = tr.std(axis=0)
    std = np.maximum(raw_std, STD_FLOOR)
    if np.all(raw_std <= STD_FLOOR):
        # all residuals identical: nothing to learn beyond the floored scale
        flow = FlowModel.identity(dim, arch, mean=mean, std=std)
    else:
        flow = FlowModel(dim, arch, mean=mean, std=std, rng=rng)
        U = (tr - mean) / std

        def monitor(theta):
            z, ld = flow._normalize_std(U, theta)
            return float(np.mean(-0.5 * np.sum(z * z, axis=1) - 0.5 * dim * LOG_2PI + ld)
                         - np.sum(np.log(std)))

        try:
            theta, hist = fit(flow.theta.copy(), lambda th: flow._nll_and_grad(U, th), cfg,
                              every=monitor_every, monitor=monitor)
        except FloatingPointError as exc:  # pragma: no cover - numpy configured to raise
            raise TrainingDivergenceError(str(exc), -1) from exc
        flow.theta = theta
        flow.history = hist.checkpoints
    flow.train_loglik = flow.mean_loglik(tr)
    if len(te):
        flow.test_loglik = flow.mean_loglik(te)
    if not np.isfinite(flow.train_loglik):
        raise TrainingDivergenceError("non-finite log-likelihood after training", cfg.epochs)
    return flow


def log_density(flow: FlowModel, delta) -> np.ndarray:
    return flow.log_density(delta)


def sample_flow(flow: FlowModel, n: int, seed=None) -> np.ndarray:
    return flow.sample(n, seed)
