"""Priors, the six likelihood constructions and unnormalized log-posteriors.

Likelihood methods, all with Gaussian noise ``N(0, diag(noise_var))`` except F:

    A  Q_HF(x)
    B  dense direct surrogate
    C  Q_LF(x) + dense discrepancy surrogate
    D  NeurAM direct surrogate
    E  Q_LF(x) + NeurAM discrepancy surrogate
    F  learned density of  y - alpha * (Q_LF(x) + NeurAM discrepancy)

Every evaluator is vectorized: ``x`` of shape (d,) gives a float, (n, d) gives
an (n,) array.  Model handles are callables mapping (n, d) to (n, m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import truncnorm

from .errors import ConfigurationError, DomainError, InputShapeError

METHODS = ("A", "B", "C", "D", "E", "F")
PRIOR_KINDS = ("uniform_box", "log_uniform_box", "truncated_normal")
LOG_2PI = math.log(2.0 * math.pi)

Handle = Callable[[np.ndarray], np.ndarray]


def _batch(x, dim: int):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise InputShapeError(f"expected points of dimension {dim}, got shape {x.shape}")
    return xb, single


# ---------------------------------------------------------------------------
# priors

@dataclass(frozen=True)
class PriorSpec:
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    log10: bool = True

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}")
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(~(hi > lo)):
            raise ConfigurationError("prior bounds need lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.kind == "log_uniform_box" and np.any(lo <= 0):
            raise ConfigurationError("log-uniform prior needs positive bounds")
        if self.kind == "truncated_normal":
            if self.mean is None or self.std is None:
                raise ConfigurationError("truncated normal prior needs mean and std")
            m = np.broadcast_to(np.asarray(self.mean, dtype=float), lo.shape).copy()
            s = np.broadcast_to(np.asarray(self.std, dtype=float), lo.shape).copy()
            if np.any(s <= 0):
                raise ConfigurationError("truncated normal std must be positive")
            if self.log10 and (np.any(lo <= 0) or np.any(m <= 0)):
                raise ConfigurationError("log10-space prior needs positive bounds and mean")
            object.__setattr__(self, "mean", m)
            object.__setattr__(self, "std", s)

    @classmethod
    def uniform_box(cls, bounds) -> "PriorSpec":
        b = np.asarray(bounds, dtype=float)
        return cls("uniform_box", b[:, 0], b[:, 1])

    @classmethod
    def log_uniform_box(cls, bounds) -> "PriorSpec":
        b = np.asarray(bounds, dtype=float)
        return cls("log_uniform_box", b[:, 0], b[:, 1])

    @classmethod
    def truncated_normal(cls, bounds, mean, std, log10: bool = True) -> "PriorSpec":
        b = np.asarray(bounds, dtype=float)
        return cls("truncated_normal", b[:, 0], b[:, 1], mean, std, log10)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounds(self) -> np.ndarray:
        return np.column_stack([self.lower, self.upper])

    def in_box(self, x) -> np.ndarray:
        xb, single = _batch(x, self.dim)
        inside = np.all((xb >= self.lower) & (xb <= self.upper), axis=1)
        return inside[0] if single else inside

    def log_prior(self, x):
        xb, single = _batch(x, self.dim)
        if not np.all(np.isfinite(xb)):
            raise DomainError("prior evaluated at a non-finite point")
        inside = np.all((xb >= self.lower) & (xb <= self.upper), axis=1)
        out = np.full(len(xb), -np.inf)
        xi = xb[inside]
        if self.kind == "uniform_box":
            out[inside] = 0.0
        elif self.kind == "log_uniform_box":
            out[inside] = -np.sum(np.log(xi), axis=1)
        else:
            if self.log10:
                u = (np.log10(xi) - np.log10(self.mean)) / self.std
            else:
                u = (xi - self.mean) / self.std
            out[inside] = -0.5 * np.sum(u * u, axis=1)
        return float(out[0]) if single else out

    __call__ = log_prior

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the prior."""
        d = self.dim
        if self.kind == "uniform_box":
            return self.lower + rng.random((n, d)) * (self.upper - self.lower)
        if self.kind == "log_uniform_box":
            a, b = np.log(self.lower), np.log(self.upper)
            return np.exp(a + rng.random((n, d)) * (b - a))
        # the density factorizes, so each coordinate is an exact 1-D truncated normal
        tr = (lambda v: np.log10(v)) if self.log10 else (lambda v: v)
        center = tr(self.mean)
        a, b = (tr(self.lower) - center) / self.std, (tr(self.upper) - center) / self.std
        u = center + self.std * truncnorm.rvs(a, b, size=(n, d), random_state=rng)
        x = 10.0 ** u if self.log10 else u
        return np.clip(x, self.lower, self.upper)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "bounds": self.bounds.tolist()}
        if self.kind == "truncated_normal":
            d.update(mean=self.mean.tolist(), std=self.std.tolist(), log10=self.log10)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        b = np.asarray(d["bounds"], dtype=float)
        if b.ndim != 2 or b.shape[1] != 2:
            raise ConfigurationError("prior bounds must be a list of [lower, upper] pairs")
        return cls(d["kind"], b[:, 0], b[:, 1], d.get("mean"), d.get("std"), d.get("log10", True))


def log_prior(prior: PriorSpec, x):
    return prior.log_prior(x)


# ---------------------------------------------------------------------------
# noise and likelihoods

@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal Gaussian noise; ``variance`` has one entry per output."""

    variance: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 0:
            obs = obs.reshape(1, 1)
        elif obs.ndim == 1:
            # a 1-D list is K scalar observations unless it matches the output width
            obs = obs[None, :] if (len(var) > 1 and len(obs) == len(var)) else obs[:, None]
        if obs.shape[1] != len(var):
            raise InputShapeError("observation width must match the noise diagonal")
        if len(obs) < 1:
            raise ConfigurationError("need at least one observation")
        if np.any(~(var > 0)):
            raise ConfigurationError("noise variances must be strictly positive")
        object.__setattr__(self, "variance", var)
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_std(cls, std, observations) -> "NoiseSpec":
        return cls(np.asarray(std, dtype=float) ** 2, observations)

    @property
    def n_outputs(self) -> int:
        return len(self.variance)

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    def gaussian_loglik(self, mean: np.ndarray) -> np.ndarray:
        """Sum over observations of the Gaussian log-density around ``mean`` (n, m)."""
        mean = np.asarray(mean, dtype=float).reshape(-1, self.n_outputs)
        r = self.observations[None, :, :] - mean[:, None, :]
        quad = np.sum(r * r / self.variance, axis=(1, 2))
        const = self.n_obs * np.sum(np.log(self.variance) + LOG_2PI)
        return -0.5 * (quad + const)

    def to_dict(self) -> dict:
        return {"variance": self.variance.tolist(), "observations": self.observations.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        if "variance" in d:
            return cls(d["variance"], d["observations"])
        return cls.from_std(d["std"], d["observations"])


def _as_handle(obj) -> Optional[Handle]:
    if obj is None:
        return None
    return obj.predict if hasattr(obj, "predict") else obj


@dataclass(frozen=True)
class LikelihoodSpec:
    method: str
    noise: NoiseSpec
    dim: int
    hf: Optional[Handle] = None
    surrogate: Optional[Handle] = None
    lf: Optional[Handle] = None
    flow: object = None
    alpha: object = 1.0

    _needs = {"A": ("hf",), "B": ("surrogate",), "C": ("lf", "surrogate"),
              "D": ("surrogate",), "E": ("lf", "surrogate"), "F": ("lf", "surrogate", "flow")}

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown likelihood method {self.method!r}")
        for name in self._needs[self.method]:
            if getattr(self, name) is None:
                raise ConfigurationError(f"method {self.method} needs a {name} handle")
        for name in ("hf", "surrogate", "lf"):
            object.__setattr__(self, name, _as_handle(getattr(self, name)))
        if self.method == "F" and self.flow.dim != self.noise.n_outputs:
            raise InputShapeError(f"flow dimension {self.flow.dim} does not match "
                                  f"{self.noise.n_outputs} outputs")

    @property
    def handles_used(self) -> tuple:
        return self._needs[self.method]

    def _eval(self, fn: Handle, xb: np.ndarray) -> np.ndarray:
        out = np.asarray(fn(xb), dtype=float)
        out = out.reshape(len(xb), -1) if out.ndim <= 1 else out
        if out.shape != (len(xb), self.noise.n_outputs):
            raise InputShapeError(f"model returned shape {out.shape}, expected "
                                  f"({len(xb)}, {self.noise.n_outputs})")
        return out

    def mean(self, x) -> np.ndarray:
        """The model prediction the likelihood is centred on (Q_dagger for F)."""
        xb, _ = _batch(x, self.dim)
        if self.method == "A":
            return self._eval(self.hf, xb)
        if self.method in ("B", "D"):
            return self._eval(self.surrogate, xb)
        return self._eval(self.lf, xb) + self._eval(self.surrogate, xb)

    def log_likelihood(self, x):
        xb, single = _batch(x, self.dim)
        if len(xb) == 0:
            return np.zeros(0)
        mu = self.mean(xb)
        if self.method != "F":
            out = self.noise.gaussian_loglik(mu)
        else:
            y = self.noise.observations
            shifted = np.asarray(self.alpha, dtype=float) * mu
            resid = y[None, :, :] - shifted[:, None, :]
            n, K, m = resid.shape
            out = self.flow.log_density(resid.reshape(n * K, m)).reshape(n, K).sum(axis=1)
        return float(out[0]) if single else out

    __call__ = log_likelihood


def log_likelihood(lik: LikelihoodSpec, x):
    return lik.log_likelihood(x)


@dataclass(frozen=True)
class PosteriorSpec:
    prior: PriorSpec
    likelihood: LikelihoodSpec

    def __post_init__(self):
        if self.prior.dim != self.likelihood.dim:
            raise InputShapeError("prior and likelihood dimensions differ")

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def bounds(self) -> np.ndarray:
        return self.prior.bounds

    def log_posterior(self, x):
        xb, single = _batch(x, self.dim)
        lp = np.asarray(self.prior.log_prior(xb), dtype=float)
        ok = np.isfinite(lp)
        if np.any(ok):
            # no model calls for points outside the prior support
            lp[ok] = lp[ok] + self.likelihood.log_likelihood(xb[ok])
        return float(lp[0]) if single else lp

    __call__ = log_posterior


def log_posterior(spec: PosteriorSpec, x):
    return spec.log_posterior(x)
