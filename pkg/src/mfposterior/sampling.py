"""Design-of-experiments helpers: uniform and maximin Latin hypercube samples."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .errors import ConfigurationError

SCHEMES = ("uniform", "lhs")


def _bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 1] <= b[:, 0]):
        raise ConfigurationError("bounds must be (d, 2) with lower < upper")
    return b


def uniform_samples(n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    b = _bounds(bounds)
    return b[:, 0] + rng.random((n, len(b))) * (b[:, 1] - b[:, 0])


def lhs_maximin(n: int, bounds, rng: np.random.Generator, candidates: int = 100) -> np.ndarray:
    """Best of ``candidates`` random Latin hypercubes by minimum pairwise distance."""
    b = _bounds(bounds)
    best, best_score = None, -np.inf
    for _ in range(candidates):
        u = qmc.LatinHypercube(d=len(b), seed=rng).random(n)
        score = pdist(u).min() if n > 1 else 0.0
        if score > best_score:
            best, best_score = u, score
    return qmc.scale(best, b[:, 0], b[:, 1])


def design(scheme: str, n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    if scheme == "uniform":
        return uniform_samples(n, bounds, rng)
    if scheme == "lhs":
        return lhs_maximin(n, bounds, rng)
    raise ConfigurationError(f"unknown sampling scheme {scheme!r}")


def tensor_grid(bounds, resolution) -> tuple[list, np.ndarray]:
    """Axes and the (prod(res), d) node matrix of a tensor-product grid."""
    b = _bounds(bounds)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (len(b),))
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(b, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.column_stack([m.ravel() for m in mesh])
