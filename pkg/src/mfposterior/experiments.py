"""Benchmark problems, per-method model fitting and posterior runs.

This is the layer the CLI drives: a ``Problem`` bundles a model pair, prior
and observations; ``fit_method`` trains whatever a likelihood method needs
from a ``Dataset``; ``run_grid`` / ``run_dream`` evaluate the resulting
posterior.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bayes import METHODS, LikelihoodSpec, NoiseSpec, PosteriorSpec, PriorSpec
from .data import Dataset
from .errors import ConfigurationError
from .flows import FlowModel, NoiseSampleSet, train_flow
from .hyper import EPOCHS, FlowHyper, flow_hyper, surrogate_hyper
from .inference import ChainEnsemble, PosteriorGrid, dream_sample, gelman_rubin, grid_posterior
from .models import (ANALYTICAL, BOREHOLE, MICHALEWICZ, CountingModel, ModelPair,
                     analytical_hf, windkessel_pair)
from .sampling import design
from .surrogates import (fit_alpha_opt, surrogate_from_dict, train_dense, train_neuram)

PROBLEMS = ("analytical", "michalewicz", "borehole", "circuit")

CIRCUIT_TRUTH = np.array([1000.0, 1000.0, 5e-5])
CIRCUIT_NOISE_VAR = np.array([5.05, 7.40, 5.83])
RATIONALE_Y = 1.1297
RATIONALE_X = np.array([0.5211, 0.2038])


@dataclass
class Problem:
    name: str
    pair: ModelPair
    prior: PriorSpec
    noise: NoiseSpec
    truth: Optional[np.ndarray] = None
    hf: CountingModel = field(init=False)

    def __post_init__(self):
        # every HF evaluation goes through this counter
        self.hf = CountingModel(self.pair.hf)

    @property
    def dim(self) -> int:
        return self.pair.dim

    @property
    def bounds(self) -> np.ndarray:
        return self.pair.bounds

    @property
    def n_outputs(self) -> int:
        return self.pair.n_outputs


def make_problem(name: str, prior: str = "default", sigma_log: Optional[float] = None,
                 obs_seed: int = 0, inflow=None) -> Problem:
    """Observation sets are drawn from ``obs_seed`` and shared by all methods."""
    rng = np.random.default_rng(obs_seed)
    if name == "analytical":
        pair = ANALYTICAL
        return Problem(name, pair, PriorSpec.uniform_box(pair.bounds),
                       NoiseSpec.from_std([0.1], [[1.3547]]))
    if name == "michalewicz":
        pair = MICHALEWICZ
        return Problem(name, pair, PriorSpec.uniform_box(pair.bounds),
                       NoiseSpec.from_std([0.05], [[1.8133]]))
    if name == "borehole":
        pair = BOREHOLE
        mid = pair.bounds.mean(axis=1)
        y = pair.hf(mid[None, :])[0, 0] + 0.7 * rng.standard_normal(100)
        if prior in ("default", "uniform_box", "uniform"):
            pr = PriorSpec.uniform_box(pair.bounds)
        elif prior == "truncated_normal":
            if sigma_log is None:
                raise ConfigurationError("truncated normal prior needs sigma_log")
            pr = PriorSpec.truncated_normal(pair.bounds, mid, sigma_log, log10=True)
        else:
            raise ConfigurationError(f"prior {prior!r} not available for borehole")
        return Problem(name, pair, pr, NoiseSpec(np.array([0.49]), y[:, None]), truth=mid)
    if name == "circuit":
        pair = windkessel_pair(inflow)
        mu = pair.hf(CIRCUIT_TRUTH[None, :])[0]
        y = mu + np.sqrt(CIRCUIT_NOISE_VAR) * rng.standard_normal((50, 3))
        return Problem(name, pair, PriorSpec.log_uniform_box(pair.bounds),
                       NoiseSpec(CIRCUIT_NOISE_VAR, y), truth=CIRCUIT_TRUTH.copy())
    raise ConfigurationError(f"unknown problem {name!r}; choose from {PROBLEMS}")


def generate_dataset(problem: Problem, n: int, seed: int = 0, scheme: str = "uniform",
                     n_train: Optional[int] = None) -> Dataset:
    rng = np.random.default_rng(seed)
    x = design(scheme, n, problem.bounds, rng)
    return Dataset.from_arrays(x, problem.hf(x), problem.pair.lf(x), seed=seed, n_train=n_train,
                               sampling_scheme=scheme, input_names=problem.pair.input_names)


# ---------------------------------------------------------------------------
# fitted methods

@dataclass
class FittedMethod:
    method: str
    surrogate: object = None  # trained surrogate, or a plain callable for oracles
    flow: Optional[FlowModel] = None
    alpha: object = None
    info: dict = field(default_factory=dict)

    def likelihood(self, problem: Problem) -> LikelihoodSpec:
        m = self.method
        return LikelihoodSpec(
            m, problem.noise, problem.dim,
            hf=problem.hf if m == "A" else None,
            surrogate=self.surrogate if m != "A" else None,
            lf=problem.pair.lf if m in ("C", "E", "F") else None,
            flow=self.flow, alpha=1.0 if self.alpha is None else self.alpha,
        )

    def posterior(self, problem: Problem) -> PosteriorSpec:
        return PosteriorSpec(problem.prior, self.likelihood(problem))

    def to_dict(self) -> dict:
        if self.surrogate is not None and not hasattr(self.surrogate, "to_dict"):
            raise ConfigurationError("oracle surrogates cannot be serialized")
        return {
            "method": self.method,
            "surrogate": None if self.surrogate is None else self.surrogate.to_dict(),
            "flow": None if self.flow is None else self.flow.to_dict(),
            "alpha": None if self.alpha is None else np.atleast_1d(self.alpha).tolist(),
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedMethod":
        alpha = d.get("alpha")
        if alpha is not None:
            alpha = float(alpha[0]) if len(alpha) == 1 else np.asarray(alpha)
        return cls(d["method"],
                   None if d.get("surrogate") is None else surrogate_from_dict(d["surrogate"]),
                   None if d.get("flow") is None else FlowModel.from_dict(d["flow"]),
                   alpha, d.get("info", {}))


_SURROGATE_KIND = {"B": ("dense", "direct"), "C": ("dense", "discrepancy"),
                   "D": ("neuram", "direct"), "E": ("neuram", "discrepancy"),
                   "F": ("neuram", "discrepancy")}


def fit_method(problem: Problem, data: Dataset, method: str, seed: int = 0,
               epochs: int = EPOCHS, flow_epochs: Optional[int] = None,
               scheme: Optional[str] = None) -> FittedMethod:
    """Train the surrogate (and for F the scale factor and noise flow) a method needs."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    if method == "A":
        return FittedMethod("A")
    scheme = scheme or data.sampling_scheme
    hp = surrogate_hyper(problem.name, method, scheme)
    kind, target = _SURROGATE_KIND[method]
    trainer = train_dense if kind == "dense" else train_neuram
    sur = trainer(data, target, hp.train_config(seed, epochs), hp.architecture())
    info = {"seed": seed, "epochs": epochs, "scheme": scheme, "train_mse": sur.train_mse,
            "test_mse": sur.test_mse, "hyper": hp.__dict__}
    fitted = FittedMethod(method, sur, info=info)
    if method == "F":
        fh = flow_hyper(problem.name, scheme)
        x_tr = data.inputs[data.train_idx]
        hf_tr = data.hf_outputs[data.train_idx]
        qd = data.lf_outputs[data.train_idx] + sur.predict(x_tr)
        alpha = fit_alpha_opt(hf_tr, qd)
        rng = np.random.default_rng([seed, 1])
        samples = NoiseSampleSet.from_residuals(hf_tr, qd, alpha, problem.noise.variance, rng,
                                                surrogate_id=f"{problem.name}-F-seed{seed}")
        flow = train_flow(samples, fh.train_config(seed, flow_epochs or epochs), fh.architecture())
        fitted.flow, fitted.alpha = flow, alpha
        info.update(alpha=np.atleast_1d(alpha).tolist(), flow_train_loglik=flow.train_loglik,
                    flow_test_loglik=flow.test_loglik, flow_hyper=fh.__dict__)
    return fitted


def oracle_method(problem: Problem, method: str) -> FittedMethod:
    """Methods B-E with their surrogate replaced by the exact function it learns."""
    if method == "A":
        return FittedMethod("A")
    if method not in ("B", "C", "D", "E"):
        raise ConfigurationError("oracle substitution is defined for methods B-E")
    hf, lf = problem.pair.hf, problem.pair.lf
    fn = hf if _SURROGATE_KIND[method][1] == "direct" else (lambda x: hf(x) - lf(x))
    return FittedMethod(method, fn)


# ---------------------------------------------------------------------------
# posterior runs

def run_grid(problem: Problem, fitted: FittedMethod, resolution=100) -> PosteriorGrid:
    return grid_posterior(fitted.posterior(problem), resolution)


def run_dream(problem: Problem, fitted: FittedMethod, n_chains: int = 5, n_iter: int = 20000,
              seed: int = 0, gr_threshold: float = 1.01, max_iter: Optional[int] = None
              ) -> tuple[ChainEnsemble, np.ndarray]:
    """DREAM from prior draws; doubles the run length until the PSRF target or ``max_iter``."""
    spec = fitted.posterior(problem)
    max_iter = max_iter or n_iter
    it = n_iter
    while True:
        ens = dream_sample(spec, problem.bounds, n_chains, it, seed=seed, prior=problem.prior)
        gr = gelman_rubin(ens)
        if np.all(gr < gr_threshold) or 2 * it > max_iter:
            break
        it *= 2
    if not np.all(gr < gr_threshold):
        warnings.warn(f"Gelman-Rubin target {gr_threshold} not reached after {it} iterations "
                      f"(PSRF {np.round(gr, 4).tolist()})", RuntimeWarning, stacklevel=2)
    return ens, gr


def covariance_summary(problem: Problem, cov: np.ndarray) -> dict:
    """Trace for 2-D problems, diagonal for the circuit, midpoint-rescaled trace for borehole."""
    cov = np.atleast_2d(cov)
    out = {"trace": float(np.trace(cov))}
    if problem.name == "circuit":
        out["diag"] = np.diag(cov).tolist()
    if problem.name == "borehole":
        mid = problem.bounds.mean(axis=1)
        out["rescaled_trace"] = float(np.sum(np.diag(cov) / mid**2))
    return out


# ---------------------------------------------------------------------------
# noise-model illustration: LF = HF + white noise, alpha = 1, no surrogate

def rationale_noise_samples(sigma_model: float, sigma_noise: float, n: int, rng) -> np.ndarray:
    """Draws of ``eta - eps_model``; the exact law is N(0, sigma_noise^2 + sigma_model^2)."""
    return sigma_noise * rng.standard_normal(n) - sigma_model * rng.standard_normal(n)


def rationale_prior() -> PriorSpec:
    return PriorSpec.truncated_normal([[-1.0, 1.0], [-1.0, 1.0]], [0.0, 0.0], 1.0 / 3.0, log10=False)


def rationale_grid(sigma_model: float, sigma_noise: float, resolution: int = 100, seed: int = 0,
                   n_samples: int = 10000, epochs: int = 5000):
    """Method-F grid posterior of the illustration; returns (grid, flow).

    The perturbed LF model draws an independent error at every grid node.
    """
    rng = np.random.default_rng([seed, int(sigma_model * 1000), int(sigma_noise * 1000)])
    deltas = rationale_noise_samples(sigma_model, sigma_noise, n_samples, rng)
    fh = flow_hyper("rationale")
    flow = train_flow(deltas, fh.train_config(seed, epochs), fh.architecture())
    prior = rationale_prior()
    lf_rng = np.random.default_rng([seed, 7])

    def log_post(x):
        q_lf = analytical_hf(x) + sigma_model * lf_rng.standard_normal(len(x))
        return prior.log_prior(x) + flow.log_density((RATIONALE_Y - q_lf)[:, None])

    return grid_posterior(log_post, resolution, prior.bounds), flow


def rationale_reference_grid(sigma_noise: float, resolution: int = 100) -> PosteriorGrid:
    """Method-A posterior of the illustration (HF model, Gaussian noise)."""
    prior = rationale_prior()

    def log_post(x):
        r = RATIONALE_Y - analytical_hf(x)
        return prior.log_prior(x) - 0.5 * r * r / sigma_noise**2

    return grid_posterior(log_post, resolution, prior.bounds)
