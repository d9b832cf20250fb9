"""Fixed per-problem network hyperparameters and an optional random-search tuner."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .flows import FlowArchitecture
from .nn import TrainConfig
from .surrogates import Architecture

EPOCHS = 10000


@dataclass(frozen=True)
class MethodHyper:
    layers: int
    width: int
    ae_layers: int
    ae_width: int
    lr: float
    zeta: float

    def architecture(self) -> Architecture:
        return Architecture(self.layers, self.width, self.ae_layers, self.ae_width)

    def train_config(self, seed: int = 0, epochs: int = EPOCHS) -> TrainConfig:
        return TrainConfig(epochs=epochs, learning_rate=self.lr, scheduler_step=self.zeta, seed=seed)


@dataclass(frozen=True)
class FlowHyper:
    layers: int
    width: int
    blocks: int
    lr: float
    zeta: float

    def architecture(self) -> FlowArchitecture:
        return FlowArchitecture(layers=self.layers, width=self.width, blocks=self.blocks)

    def train_config(self, seed: int = 0, epochs: int = EPOCHS) -> TrainConfig:
        return TrainConfig(epochs=epochs, learning_rate=self.lr, scheduler_step=self.zeta, seed=seed)


def _m(layers, width, ae_layers, ae_width, lr, zeta):
    return MethodHyper(layers, width, ae_layers, ae_width, lr, zeta)


# (problem, sampling scheme) -> method -> hyperparameters; dense methods have no autoencoder
SURROGATE_TABLE = {
    ("analytical", "uniform"): {
        "B": _m(4, 20, 0, 0, 0.000916, 0.99975),
        "C": _m(6, 20, 0, 0, 0.000736, 0.99956),
        "D": _m(1, 5, 3, 15, 0.000954, 0.9998),
        "E": _m(6, 20, 3, 20, 0.000576, 0.99984),
        "F": _m(1, 4, 3, 10, 0.000835, 0.99982),
    },
    ("michalewicz", "uniform"): {
        "B": _m(5, 19, 0, 0, 0.0007474, 0.99979),
        "C": _m(1, 16, 0, 0, 0.0003312, 0.99953),
        "D": _m(3, 7, 2, 9, 0.0009680, 0.99958),
        "E": _m(1, 3, 7, 9, 0.0004689, 0.99952),
        "F": _m(1, 16, 3, 6, 0.0005113, 0.99915),
    },
    ("borehole", "uniform"): {
        "B": _m(4, 16, 0, 0, 0.0009997, 0.99984),
        "C": _m(3, 18, 0, 0, 0.0009421, 0.99986),
        "D": _m(3, 20, 9, 17, 0.0009005, 0.99900),
        "E": _m(2, 4, 5, 15, 0.0008717, 0.99987),
        "F": _m(2, 4, 5, 15, 0.0008717, 0.99987),
    },
    ("circuit", "uniform"): {
        "B": _m(1, 17, 0, 0, 0.0007986, 0.99985),
        "C": _m(5, 19, 0, 0, 0.0008066, 0.99981),
        "D": _m(1, 8, 4, 16, 0.0009245, 0.99987),
        "E": _m(2, 18, 2, 19, 0.0006313, 0.99979),
        "F": _m(4, 17, 3, 20, 0.0006218, 0.99985),
    },
    ("analytical", "lhs"): {
        "B": _m(10, 17, 0, 0, 0.0009826, 0.99988),
        "C": _m(5, 15, 0, 0, 0.0009497, 0.99970),
        "D": _m(1, 10, 3, 18, 0.0009211, 0.99986),
        "E": _m(1, 4, 4, 9, 0.0007181, 0.99924),
        "F": _m(1, 5, 3, 19, 0.00099474, 0.99976),
    },
    ("michalewicz", "lhs"): {
        "B": _m(3, 17, 0, 0, 0.0007801, 0.99959),
        "C": _m(3, 13, 0, 0, 0.0007137, 0.99988),
        "D": _m(1, 14, 2, 11, 0.0006610, 0.99958),
        "E": _m(1, 12, 2, 12, 0.0008506, 0.99943),
        "F": _m(1, 16, 3, 20, 0.0008948, 0.99934),
    },
}

FLOW_TABLE = {
    ("analytical", "uniform"): FlowHyper(9, 2, 2, 0.0004489, 0.99970),
    ("michalewicz", "uniform"): FlowHyper(1, 1, 3, 0.0009722, 0.99916),
    ("borehole", "uniform"): FlowHyper(7, 1, 2, 0.0002005, 0.99908),
    ("circuit", "uniform"): FlowHyper(4, 1, 3, 0.0007937, 0.99906),
    ("aorto_iliac", "uniform"): FlowHyper(6, 2, 2, 0.0009964, 0.99909),
    ("analytical", "lhs"): FlowHyper(10, 12, 2, 6.10e-5, 0.99910),
    ("michalewicz", "lhs"): FlowHyper(6, 7, 2, 7.92e-5, 0.99945),
    # noise-model illustration: 4 layers, 8 neurons, 4 blocks, 5000 epochs
    ("rationale", "uniform"): FlowHyper(4, 8, 4, 1e-3, 0.9999),
}


def surrogate_hyper(problem: str, method: str, scheme: str = "uniform") -> MethodHyper:
    try:
        return SURROGATE_TABLE[(problem, scheme)][method]
    except KeyError:
        raise ConfigurationError(f"no surrogate hyperparameters for {problem}/{scheme}/{method}")


def flow_hyper(problem: str, scheme: str = "uniform") -> FlowHyper:
    try:
        return FLOW_TABLE[(problem, scheme)]
    except KeyError:
        raise ConfigurationError(f"no flow hyperparameters for {problem}/{scheme}")


# ---------------------------------------------------------------------------
# random search

SEARCH_SPACE = {"layers": (1, 10), "width": (1, 20), "lr": (1e-5, 1e-3),
                "zeta": (0.999, 0.9999), "blocks": (1, 4)}


def random_search(objective: Callable[[dict], float], n_trials: int, seed: int = 0,
                  space: Optional[dict] = None, autoencoder: bool = False) -> tuple[dict, float]:
    """Minimize ``objective(params)`` over random draws; lr is sampled log-uniformly."""
    space = {**SEARCH_SPACE, **(space or {})}
    rng = np.random.default_rng(seed)
    best, best_val = None, np.inf
    for _ in range(n_trials):
        p = {
            "layers": int(rng.integers(space["layers"][0], space["layers"][1] + 1)),
            "width": int(rng.integers(space["width"][0], space["width"][1] + 1)),
            "lr": float(np.exp(rng.uniform(*np.log(space["lr"])))),
            "zeta": float(rng.uniform(*space["zeta"])),
            "blocks": int(rng.integers(space["blocks"][0], space["blocks"][1] + 1)),
        }
        if autoencoder:
            p["ae_layers"] = int(rng.integers(space["layers"][0], space["layers"][1] + 1))
            p["ae_width"] = int(rng.integers(space["width"][0], space["width"][1] + 1))
        val = float(objective(p))
        if val < best_val:
            best, best_val = p, val
    return best, best_val
