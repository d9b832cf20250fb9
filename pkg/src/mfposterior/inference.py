"""Grid posteriors, DREAM sampling, convergence diagnostics and comparison metrics."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree

from .errors import (ConfigurationError, DegenerateDataError, GridMismatchError,
                     InputShapeError, InsufficientHistoryError, NumericalError, SamplerError)
from .sampling import tensor_grid

MAX_GRID_DIM = 3


# ---------------------------------------------------------------------------
# grids

def _trapezoid_weights(axes) -> np.ndarray:
    ws = []
    for a in axes:
        h = np.diff(a)
        w = np.zeros(len(a))
        w[:-1] += h / 2
        w[1:] += h / 2
        ws.append(w)
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    return W


@dataclass
class PosteriorGrid:
    axes: list
    log_values: np.ndarray  # unnormalized, shape = tuple(len(a) for a in axes)

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.log_values = np.asarray(self.log_values, dtype=float)
        if self.log_values.shape != tuple(len(a) for a in self.axes):
            raise InputShapeError("log-value tensor does not match the axes")
        self.weights = _trapezoid_weights(self.axes)
        finite = np.isfinite(self.log_values)
        if not np.any(finite):
            raise NumericalError("posterior is zero (or undefined) at every grid node")
        self.log_max = float(self.log_values[finite].max())
        unnorm = np.where(finite, np.exp(self.log_values - self.log_max), 0.0)
        z = float(np.sum(self.weights * unnorm))
        if not z > 0:
            raise NumericalError("posterior integrates to zero on the grid")
        self.log_normalizer = self.log_max + np.log(z)
        self.density = unnorm / z

    @property
    def dim(self) -> int:
        return len(self.axes)

    def integral(self) -> float:
        return float(np.sum(self.weights * self.density))

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def mean(self) -> np.ndarray:
        wp = (self.weights * self.density).ravel()
        return wp @ self.nodes()

    def covariance(self) -> np.ndarray:
        wp = (self.weights * self.density).ravel()
        X = self.nodes() - self.mean()
        return (X * wp[:, None]).T @ X

    def argmax(self) -> np.ndarray:
        idx = np.unravel_index(np.argmax(np.where(np.isfinite(self.log_values), self.log_values, -np.inf)),
                               self.log_values.shape)
        return np.array([a[i] for a, i in zip(self.axes, idx)])

    def marginal(self, axis: int) -> np.ndarray:
        """1-D marginal density along ``axis`` (trapezoid over the others)."""
        p = self.density
        for ax in reversed(range(self.dim)):
            if ax != axis:
                p = trapezoid(p, self.axes[ax], axis=ax)
        return p

    def save(self, path) -> None:
        kw = {f"axis_{i}": a for i, a in enumerate(self.axes)}
        np.savez(path, log_values=self.log_values, density=self.density, **kw)

    @classmethod
    def load(cls, path) -> "PosteriorGrid":
        with np.load(path) as z:
            n = sum(1 for k in z.files if k.startswith("axis_"))
            return cls([z[f"axis_{i}"] for i in range(n)], z["log_values"])


def grid_posterior(log_post: Callable, resolution, bounds=None, batch: int = 20000) -> PosteriorGrid:
    """Evaluate a (vectorized) log-posterior on a tensor grid spanning ``bounds``.

    ``log_post`` may be a PosteriorSpec, whose prior box is used when ``bounds``
    is omitted.
    """
    if bounds is None:
        bounds = getattr(log_post, "bounds", None)
        if bounds is None:
            raise ConfigurationError("grid bounds are required")
    bounds = np.asarray(bounds, dtype=float)
    d = len(bounds)
    if d > MAX_GRID_DIM:
        raise ConfigurationError(f"grids are limited to {MAX_GRID_DIM} dimensions (got {d})")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if np.any(res < 2):
        raise ConfigurationError("grid resolution must be at least 2 per dimension")
    axes, nodes = tensor_grid(bounds, res)
    vals = np.concatenate([np.atleast_1d(log_post(nodes[i:i + batch]))
                           for i in range(0, len(nodes), batch)])
    return PosteriorGrid(axes, vals.reshape(tuple(res)))


def hellinger(a: PosteriorGrid, b: PosteriorGrid) -> float:
    if a.dim != b.dim or any(x.shape != y.shape or not np.array_equal(x, y)
                             for x, y in zip(a.axes, b.axes)):
        raise GridMismatchError("Hellinger distance needs identical grid axes")
    diff = np.sqrt(a.density) - np.sqrt(b.density)
    h2 = 0.5 * float(np.sum(a.weights * diff * diff))
    return float(np.sqrt(min(max(h2, 0.0), 1.0)))


# ---------------------------------------------------------------------------
# sample-based metrics

def pearson(values_a, values_b):
    """Sample correlation; per column for (N, m) inputs."""
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    if a.shape != b.shape:
        raise InputShapeError("inputs must have the same shape")
    if a.shape[0] < 2:
        raise ConfigurationError("need at least two values")
    ac, bc = a - a.mean(axis=0), b - b.mean(axis=0)
    sa, sb = np.sqrt(np.sum(ac * ac, axis=0)), np.sqrt(np.sum(bc * bc, axis=0))
    if np.any(sa == 0) or np.any(sb == 0):
        raise DegenerateDataError("correlation undefined for zero-variance input")
    r = np.clip(np.sum(ac * bc, axis=0) / (sa * sb), -1.0, 1.0)
    return float(r) if np.ndim(r) == 0 else r


def knn_kl_divergence(samples_p, samples_q, k: int = 5, standardize: bool = True,
                      seed: int = 0) -> float:
    """k-nearest-neighbour estimate of KL(p || q) from samples.

    Coordinates are divided by the pooled standard deviation first so that
    parameters on very different scales contribute comparably.
    """
    P = np.asarray(samples_p, dtype=float)
    Q = np.asarray(samples_q, dtype=float)
    P = P[:, None] if P.ndim == 1 else P
    Q = Q[:, None] if Q.ndim == 1 else Q
    if P.shape[1] != Q.shape[1]:
        raise InputShapeError("sample sets must have the same dimension")
    n, d = P.shape
    m = Q.shape[0]
    if k < 1 or n <= k or m <= k:
        raise ConfigurationError("need N, M > k >= 1")
    if standardize:
        sd = np.concatenate([P, Q]).std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        P, Q = P / sd, Q / sd
    rho, nu = _knn_radii(P, Q, k)
    if np.any(rho == 0) or np.any(nu == 0):
        warnings.warn("duplicate samples give zero k-NN radii; breaking ties with jitter",
                      RuntimeWarning, stacklevel=2)
        rng = np.random.default_rng(seed)
        scale = 1e-10 * max(np.abs(P).max(), np.abs(Q).max(), 1.0)
        P = P + scale * rng.standard_normal(P.shape)
        Q = Q + scale * rng.standard_normal(Q.shape)
        rho, nu = _knn_radii(P, Q, k)
    return float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))


def _knn_radii(P, Q, k):
    rho = cKDTree(P).query(P, k=k + 1)[0][:, k]
    nu = cKDTree(Q).query(P, k=k)[0]
    nu = nu if nu.ndim == 1 else nu[:, k - 1]
    return rho, nu


# ---------------------------------------------------------------------------
# DREAM

@dataclass
class ChainEnsemble:
    """State and retained history of a DREAM run.

    ``history`` has shape (n_iter + 1, n_chains, d) and includes the initial
    states at index 0.
    """

    history: np.ndarray
    logp_history: np.ndarray
    crossover_values: np.ndarray
    crossover_probs: np.ndarray
    acceptance_rate: float
    burn_in: int
    outlier_resets: int = 0

    @property
    def n_chains(self) -> int:
        return self.history.shape[1]

    @property
    def dim(self) -> int:
        return self.history.shape[2]

    @property
    def iteration(self) -> int:
        return self.history.shape[0] - 1

    @property
    def states(self) -> np.ndarray:
        return self.history[-1]

    def chains(self, burned: bool = True) -> np.ndarray:
        """(n_chains, kept, d) view of the retained history."""
        h = self.history[1 + self.burn_in:] if burned else self.history
        return np.swapaxes(h, 0, 1)

    def samples(self, n: Optional[int] = None) -> np.ndarray:
        """Pooled post-burn-in samples, evenly thinned to ``n`` if given."""
        c = self.chains()
        if n is not None and n < c.shape[0] * c.shape[1]:
            per_chain = int(np.ceil(n / c.shape[0]))
            idx = np.linspace(0, c.shape[1] - 1, per_chain).round().astype(int)
            c = c[:, idx]
            return c.reshape(-1, self.dim)[:n]
        return c.reshape(-1, self.dim)

    def log_posterior_samples(self) -> np.ndarray:
        return self.logp_history[1 + self.burn_in:].T.ravel()

    def write_csv(self, path, burned: bool = True) -> None:
        start = 1 + self.burn_in if burned else 0
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration"] + [f"x{j + 1}" for j in range(self.dim)] + ["log_posterior"])
            for c in range(self.n_chains):
                for t in range(start, self.history.shape[0]):
                    w.writerow([c, t] + [repr(float(v)) for v in self.history[t, c]]
                               + [repr(float(self.logp_history[t, c]))])


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (chain ids, samples, log-posterior values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 2:-1], data[:, -1]


def _reflect(x, lo, hi, rng):
    x = np.where(x < lo, 2 * lo - x, x)
    x = np.where(x > hi, 2 * hi - x, x)
    bad = (x < lo) | (x > hi)
    if np.any(bad):
        # jumps longer than the box width: redraw those coordinates
        u = lo + rng.random(x.shape) * (hi - lo)
        x = np.where(bad, u, x)
    return x


def dream_sample(log_post: Callable, bounds, n_chains: int = 5, n_iter: int = 10000,
                 seed=0, init: Optional[np.ndarray] = None, prior=None,
                 delta_max: int = 3, n_crossover: int = 3, jump_every: int = 5,
                 e_scale: float = 0.1, eps_scale: float = 1e-6,
                 burn_fraction: float = 0.5, outlier_check: bool = True,
                 stagnation_window: int = 1000) -> ChainEnsemble:
    """DREAM with reflective box boundaries.

    ``log_post`` is vectorized: it receives an (n_chains, d) array of proposals
    per generation.  Chains advance in lockstep; differences are drawn from a
    snapshot of the states at the start of each generation.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(bounds)
    N = int(n_chains)
    if N < 3:
        raise ConfigurationError("DREAM needs at least 3 chains")
    if n_iter < 1:
        raise ConfigurationError("n_iter must be >= 1")
    burn = int(burn_fraction * n_iter)
    # with few chains there are not enough distinct pairs for large delta
    dmax = max(1, min(delta_max, (N - 1) // 2))

    if init is None:
        init = prior.sample(N, rng) if prior is not None else lo + rng.random((N, d)) * (hi - lo)
    X = np.array(init, dtype=float).reshape(N, d)
    lp = np.asarray(log_post(X), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise SamplerError("initial chain states must have finite log-posterior")

    hist = np.empty((n_iter + 1, N, d))
    lph = np.empty((n_iter + 1, N))
    hist[0], lph[0] = X, lp

    cr_values = np.arange(1, n_crossover + 1) / n_crossover
    cr_probs = np.full(n_crossover, 1.0 / n_crossover)
    cr_jump = np.zeros(n_crossover)
    cr_count = np.zeros(n_crossover)
    eps = eps_scale * (hi - lo)
    accepted_total = 0
    last_accept = 0
    resets = 0
    others = [np.array([j for j in range(N) if j != i]) for i in range(N)]

    for t in range(1, n_iter + 1):
        snap = X.copy()
        prop = np.empty_like(X)
        cr_idx = rng.choice(n_crossover, size=N, p=cr_probs)
        for i in range(N):
            delta = int(rng.integers(1, dmax + 1))
            pick = rng.choice(others[i], size=2 * delta, replace=False)
            diff = snap[pick[:delta]].sum(axis=0) - snap[pick[delta:]].sum(axis=0)
            z = rng.random(d) < cr_values[cr_idx[i]]
            if not z.any():
                z[rng.integers(d)] = True
            dprime = int(z.sum())
            gamma = 1.0 if t % jump_every == 0 else 2.38 / np.sqrt(2 * delta * dprime)
            e = rng.uniform(-e_scale, e_scale, d)
            jitter = eps * rng.standard_normal(d)
            step = np.where(z, (1 + e) * gamma * diff + jitter, 0.0)
            prop[i] = snap[i] + step
        prop = _reflect(prop, lo, hi, rng)
        lp_prop = np.asarray(log_post(prop), dtype=float)
        lp_prop = np.where(np.isnan(lp_prop), -np.inf, lp_prop)
        with np.errstate(over="ignore", invalid="ignore"):
            accept = np.log(rng.random(N)) < (lp_prop - lp)
        X = np.where(accept[:, None], prop, X)
        lp = np.where(accept, lp_prop, lp)
        n_acc = int(accept.sum())
        accepted_total += n_acc
        if n_acc:
            last_accept = t
        elif t - last_accept >= stagnation_window:
            raise SamplerError(f"no proposal accepted in {stagnation_window} iterations "
                               f"(stopped at iteration {t})")

        if t <= burn:
            # crossover adaptation: reward jump distance normalized by chain spread
            sd = X.std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            jump = np.sum(((X - snap) / sd) ** 2, axis=1)
            np.add.at(cr_jump, cr_idx, jump)
            np.add.at(cr_count, cr_idx, 1)
            if np.all(cr_count > 0) and cr_jump.sum() > 0:
                w = cr_jump / cr_count
                cr_probs = np.maximum(w / w.sum(), 1e-3)
                cr_probs /= cr_probs.sum()
            if outlier_check and t >= 100 and t % 100 == 0:
                omega = lph[t // 2:t].mean(axis=0)
                q1, q3 = np.percentile(omega, [25, 75])
                bad = omega < q1 - 2.0 * (q3 - q1)
                if np.any(bad):
                    best = int(np.argmax(lp))
                    X[bad], lp[bad] = X[best], lp[best]
                    resets += int(bad.sum())
        hist[t], lph[t] = X, lp

    return ChainEnsemble(hist, lph, cr_values, cr_probs, accepted_total / (N * n_iter), burn, resets)


def gelman_rubin(chains) -> np.ndarray:
    """Per-dimension potential scale reduction factor on the second half of each chain.

    Accepts a ChainEnsemble (its full history, so the second half is the
    post-burn-in part) or an array of shape (n_chains, n, d).  Uses ``sqrt((W + B/n) / W)``, which is never below 1.
    """
    c = chains.chains(burned=False)[:, 1:] if isinstance(chains, ChainEnsemble) else np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    m, n_all, _ = c.shape
    c = c[:, n_all // 2:]
    n = c.shape[1]
    if m < 2 or n < 100:
        raise InsufficientHistoryError("need >= 2 chains with >= 100 retained iterations")
    W = c.var(axis=1, ddof=1).mean(axis=0)
    B_over_n = c.mean(axis=1).var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt((W + B_over_n) / W)
    return np.where(W > 0, r, np.where(B_over_n > 0, np.inf, 1.0))
