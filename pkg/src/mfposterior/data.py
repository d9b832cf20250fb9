"""Paired HF/LF datasets, train/test split bookkeeping and standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputShapeError

TRAIN_FRACTION = 0.75
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, a: np.ndarray) -> "Standardizer":
        a = np.asarray(a, dtype=float)
        mu = a.mean(axis=0)
        sd = a.std(axis=0)
        # constant columns map to zero instead of blowing up
        sd = np.where(sd < STD_FLOOR, 1.0, sd)
        return cls(mu, sd)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def forward(self, a):
        return (np.asarray(a, dtype=float) - self.mean) / self.std

    def inverse(self, a):
        return np.asarray(a, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        from .nn import format_floats

        return {"mean": format_floats(self.mean), "std": format_floats(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        from .nn import parse_floats

        return cls(parse_floats(d["mean"]), parse_floats(d["std"]))


@dataclass
class Dataset:
    inputs: np.ndarray
    hf_outputs: np.ndarray
    lf_outputs: Optional[np.ndarray]
    train_idx: np.ndarray
    test_idx: np.ndarray
    sampling_scheme: str = "uniform"
    input_names: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.hf_outputs = _as_matrix(self.hf_outputs)
        if self.lf_outputs is not None:
            self.lf_outputs = _as_matrix(self.lf_outputs)
        n = self.inputs.shape[0]
        if self.hf_outputs.shape[0] != n or (
            self.lf_outputs is not None and self.lf_outputs.shape != self.hf_outputs.shape
        ):
            raise InputShapeError("row counts / output widths disagree across dataset fields")
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.test_idx = np.asarray(self.test_idx, dtype=int)
        both = np.concatenate([self.train_idx, self.test_idx])
        if len(np.unique(both)) != len(both) or len(both) != n or (n and both.max() >= n):
            raise ConfigurationError("train/test split must be a disjoint, exhaustive partition")
        if not self.input_names:
            self.input_names = [f"x{i + 1}" for i in range(self.dim)]

    @classmethod
    def from_arrays(cls, inputs, hf, lf=None, seed: int = 0, n_train: Optional[int] = None,
                    sampling_scheme: str = "uniform", input_names: Sequence[str] = ()) -> "Dataset":
        n = np.atleast_2d(inputs).shape[0]
        if n_train is None:
            n_train = int(round(TRAIN_FRACTION * n))
        perm = np.random.default_rng(seed).permutation(n)
        return cls(inputs, hf, lf, np.sort(perm[:n_train]), np.sort(perm[n_train:]),
                   sampling_scheme, list(input_names))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.hf_outputs.shape[1]

    def labels(self, target: str) -> np.ndarray:
        if target == "direct":
            return self.hf_outputs
        if target == "discrepancy":
            if self.lf_outputs is None:
                raise ConfigurationError("discrepancy target needs low-fidelity outputs")
            return self.hf_outputs - self.lf_outputs
        raise ConfigurationError(f"unknown surrogate target {target!r}")

    def split(self, which: str, target: str):
        idx = self.train_idx if which == "train" else self.test_idx
        return self.inputs[idx], self.labels(target)[idx]

    # files ----------------------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        m = self.n_outputs
        header = list(self.input_names) + [f"hf_{j + 1}" for j in range(m)]
        cols = [self.inputs, self.hf_outputs]
        if self.lf_outputs is not None:
            header += [f"lf_{j + 1}" for j in range(m)]
            cols.append(self.lf_outputs)
        table = np.hstack(cols)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in table:
                w.writerow([repr(float(v)) for v in row])
        split_path(path).write_text(json.dumps({
            "train": self.train_idx.tolist(),
            "test": self.test_idx.tolist(),
            "sampling_scheme": self.sampling_scheme,
        }))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        hf_cols = [i for i, h in enumerate(header) if h.startswith("hf_")]
        lf_cols = [i for i, h in enumerate(header) if h.startswith("lf_")]
        in_cols = [i for i in range(len(header)) if i not in hf_cols and i not in lf_cols]
        meta = json.loads(split_path(path).read_text())
        return cls(
            body[:, in_cols], body[:, hf_cols], body[:, lf_cols] if lf_cols else None,
            meta["train"], meta["test"], meta.get("sampling_scheme", "uniform"),
            [header[i] for i in in_cols],
        )


def split_path(path: Path) -> Path:
    return Path(path).with_suffix(".split.json")


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a
