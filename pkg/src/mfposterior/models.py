"""Forward models: analytic HF/LF benchmark pairs and RC/RCR Windkessel circuits.

Pressures are exchanged in mmHg and integrated in Barye (1 mmHg = 1333.22 Ba);
resistances are Ba*s/mL, compliances mL/Ba and flows mL/s.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.signal import lfilter

from .errors import DomainError, IntegrationError

MMHG = 1333.22


# ---------------------------------------------------------------------------
# benchmark pairs

def analytical_hf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(0.7 * x[..., 0] + 0.3 * x[..., 1]) + 0.15 * np.sin(2 * np.pi * x[..., 0])


def analytical_lf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(0.01 * x[..., 0] + 0.99 * x[..., 1]) + 0.15 * np.sin(3 * np.pi * x[..., 1])


def michalewicz(x, m: int):
    """``-sum_i sin(x_i) * sin(i x_i^2 / pi)^(2m)``, taken verbatim (note the sign)."""
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.shape[-1] + 1)
    return -np.sum(np.sin(x) * np.sin(i * x**2 / np.pi) ** (2 * m), axis=-1)


BOREHOLE_NAMES = ["r_w", "r", "T_u", "H_u", "T_l", "H_l", "L", "K_w"]
BOREHOLE_BOUNDS = np.array([
    [0.05, 0.15], [100.0, 50000.0], [63070.0, 115600.0], [990.0, 1110.0],
    [63.1, 116.0], [700.0, 820.0], [1120.0, 1680.0], [9855.0, 12045.0],
])


def _borehole(x, num: float, lead: float):
    x = np.asarray(x, dtype=float)
    rw, r, Tu, Hu, Tl, Hl, L, Kw = (x[..., i] for i in range(8))
    lr = np.log(r / rw)
    return num * Tu * (Hu - Hl) / (lr * (lead + 2 * L * Tu / (lr * rw**2 * Kw) + Tu / Tl))


def borehole_hf(x):
    return _borehole(x, 2 * np.pi, 1.0)


def borehole_lf(x):
    return _borehole(x, 5.0, 1.5)


@dataclass(frozen=True)
class ModelPair:
    """HF/LF pair on a common box-shaped input domain; both map (n, d) -> (n, m)."""

    name: str
    hf: Callable
    lf: Callable
    bounds: np.ndarray
    input_names: tuple
    n_outputs: int = 1

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def in_domain(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.bounds[:, 0]) & (x <= self.bounds[:, 1]), axis=-1)


BenchmarkPair = ModelPair


def _scalar_model(f):
    def g(x):
        return np.asarray(f(x))[..., None]
    g.__name__ = getattr(f, "__name__", "model")
    return g


ANALYTICAL = ModelPair("analytical2d", _scalar_model(analytical_hf), _scalar_model(analytical_lf),
                       np.array([[-1.0, 1.0], [-1.0, 1.0]]), ("x1", "x2"))
MICHALEWICZ = ModelPair("michalewicz", _scalar_model(lambda x: michalewicz(x, 10)),
                        _scalar_model(lambda x: michalewicz(x, 1)),
                        np.array([[0.0, np.pi], [0.0, np.pi]]), ("x1", "x2"))
BOREHOLE = ModelPair("borehole", _scalar_model(borehole_hf), _scalar_model(borehole_lf),
                     BOREHOLE_BOUNDS, tuple(BOREHOLE_NAMES))


def eval_benchmark(pair: ModelPair, which: str, x, check_domain: bool = True) -> np.ndarray:
    """Evaluate ``pair.hf`` or ``pair.lf``; scalar-output pairs return (n,) or a float."""
    x = np.asarray(x, dtype=float)
    if check_domain and not np.all(pair.in_domain(x)):
        raise DomainError(f"input outside the {pair.name} domain")
    f = {"hf": pair.hf, "lf": pair.lf}[which]
    out = np.asarray(f(x))
    if pair.n_outputs == 1:
        out = out[..., 0]
        return float(out) if out.ndim == 0 else out
    return out


class CountingModel:
    """Wraps a model and counts evaluated input points."""

    def __init__(self, fn: Callable):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        self.calls += 1 if x.ndim == 1 else x.shape[0]
        return self.fn(x)


# ---------------------------------------------------------------------------
# Windkessel circuits

@dataclass(frozen=True)
class WindkesselParams:
    Rp: float
    Rd: float
    C: float
    Pd: float = 55.0  # mmHg

    def __post_init__(self):
        for k in ("Rp", "Rd", "C", "Pd"):
            if not getattr(self, k) > 0:
                raise DomainError(f"Windkessel parameter {k} must be positive")

    @property
    def R(self) -> float:
        return self.Rp + self.Rd


class InflowWaveform:
    """Periodic inflow ``Q(t)`` (mL/s) through a periodic cubic spline.

    The first and last samples define one period; their flow values must agree.
    """

    def __init__(self, times, flows):
        t = np.asarray(times, dtype=float)
        q = np.asarray(flows, dtype=float)
        if t.ndim != 1 or t.shape != q.shape or len(t) < 4:
            raise ValueError("need matching 1-D time/flow arrays with at least 4 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("waveform times must increase strictly")
        if not math.isclose(q[0], q[-1], rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("first and last flow samples must coincide (one full period)")
        q = q.copy()
        q[-1] = q[0]
        self.t0 = t[0]
        self.period = t[-1] - t[0]
        self.times, self.flows = t - t[0], q
        self._spline = CubicSpline(self.times, q, bc_type="periodic")

    def __call__(self, t):
        return self._spline(np.mod(np.asarray(t, dtype=float), self.period))

    def mean_flow(self) -> float:
        return float(self._spline.integrate(0.0, self.period) / self.period)

    def scaled(self, c: float) -> "InflowWaveform":
        return InflowWaveform(self.times, c * self.flows)

    @classmethod
    def constant(cls, flow: float, period: float = 1.07) -> "InflowWaveform":
        t = np.linspace(0.0, period, 9)
        return cls(t, np.full_like(t, flow))

    @classmethod
    def from_file(cls, path) -> "InflowWaveform":
        t, q = [], []
        with open(path) as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    t.append(float(row[0]))
                    q.append(float(row[1]))
                except ValueError:
                    continue  # header
        return cls(t, q)

    def to_file(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "flow_mL_s"])
            for a, b in zip(self.times, self.flows):
                w.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def default(cls, mean_flow: Optional[float] = None) -> "InflowWaveform":
        """Bundled abdominal-aortic style waveform (T = 1.07 s, mean 41 mL/s)."""
        with resources.as_file(resources.files("mfposterior") / "data" / "inflow_default.csv") as p:
            wf = cls.from_file(p)
        if mean_flow is not None:
            wf = InflowWaveform(wf.times, wf.flows - wf.mean_flow() + mean_flow)
        return wf


@dataclass
class PressureQoI:
    p_min: float
    p_max: float
    p_avg: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_min, self.p_max, self.p_avg])


@dataclass
class WindkesselResult:
    qoi: PressureQoI
    t: np.ndarray
    p_proximal: np.ndarray  # mmHg
    n_steps: int = 0


def _rates(kind: str, params: WindkesselParams):
    """(time constant tau, series resistance, 1/C) of the linear ODE for the stored state."""
    if kind == "rcr":
        return params.Rd * params.C, params.Rp
    if kind == "rc":
        return params.R * params.C, 0.0
    raise ValueError(f"unknown Windkessel kind {kind!r}")


def simulate_windkessel(kind: str, params: WindkesselParams, inflow: InflowWaveform,
                        cycles: int = 10, rtol: float = 1e-8, max_newton: int = 20,
                        dense_points: int = 65537) -> WindkesselResult:
    """Adaptive implicit-trapezoidal integration of the RC or RCR circuit.

    The state is the capacitor pressure (RCR) or proximal pressure (RC), started
    at the distal pressure.  Step sizes come from step-doubling error control;
    each implicit stage is solved by Newton iteration.  QoIs are taken over the
    final cycle of the proximal pressure.
    """
    if cycles < 2:
        raise ValueError("need at least two cycles")
    tau, rser = _rates(kind, params)
    C = params.C
    pd = params.Pd * MMHG
    T = inflow.period
    t_end = cycles * T

    r_out = tau / C

    def f(t, p):
        return (inflow(t) - (p - pd) / r_out) / C

    dfdp = -1.0 / tau

    def trap(t0, p0, h):
        f0 = f(t0, p0)
        p1 = p0 + h * f0
        for _ in range(max_newton):
            r = p1 - p0 - 0.5 * h * (f0 + f(t0 + h, p1))
            dp = r / (1.0 - 0.5 * h * dfdp)
            p1 -= dp
            if abs(dp) <= 1e-14 * max(abs(p1), 1.0):
                return p1
        raise IntegrationError("implicit trapezoid Newton iteration did not converge", t0)

    atol = rtol * pd
    t, p = 0.0, pd
    h = T / 1000.0
    ts, ps = [0.0], [pd]
    boundaries = [k * T for k in range(1, cycles + 1)]
    nb = 0
    n_steps = 0
    while t < t_end - 1e-14 * t_end:
        h = min(h, boundaries[nb] - t)
        full = trap(t, p, h)
        half = trap(t + 0.5 * h, trap(t, p, 0.5 * h), 0.5 * h)
        err = abs(half - full) / 3.0
        tol = atol + rtol * abs(half)
        if err <= tol or h < 1e-12:
            if h < 1e-12 and err > tol:
                raise IntegrationError("step size underflow", t)
            t += h
            p = half
            n_steps += 1
            if abs(t - boundaries[nb]) <= 1e-12 * T:
                t = boundaries[nb]
                nb = min(nb + 1, cycles - 1)
            ts.append(t)
            ps.append(p)
        fac = 0.9 * (tol / err) ** (1.0 / 3.0) if err > 0 else 4.0
        h *= min(4.0, max(0.2, fac))
    ts = np.array(ts)
    pstate = np.array(ps)
    pprox = pstate + rser * inflow(ts)
    # the step nodes can skip over extrema of Rp*Q(t); read QoIs off a dense
    # Hermite reconstruction of the state instead
    dense = CubicHermiteSpline(ts, pstate, f(ts, pstate))
    tq = np.linspace((cycles - 1) * T, t_end, dense_points)
    pq = (dense(tq) + rser * inflow(tq)) / MMHG
    return WindkesselResult(_cycle_qoi(tq, pq), ts, pprox / MMHG, n_steps)


def _cycle_qoi(t, p) -> PressureQoI:
    avg = np.trapezoid(p, t) / (t[-1] - t[0])
    return PressureQoI(float(p.min()), float(p.max()), float(avg))


def windkessel_qoi_batch(kind: str, theta, inflow: InflowWaveform, pd_mmhg: float = 55.0,
                         cycles: int = 10, samples_per_cycle: int = 2048) -> np.ndarray:
    """Vectorized QoIs for parameter rows ``(Rp, Rd, C)``; returns (n, 3) in mmHg.

    The inflow is sampled uniformly and treated as piecewise linear, for which
    the linear circuit ODE has an exact step-to-step solution.  Used as the
    fast evaluator during sampling.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    M = samples_per_cycle
    T = inflow.period
    h = T / M
    tg = np.linspace(0.0, T, M + 1)
    q = inflow(tg)
    pd = pd_mmhg * MMHG
    out = np.empty((theta.shape[0], 3))
    for i, (Rp, Rd, C) in enumerate(theta):
        if kind == "rcr":
            tau, rser = Rd * C, Rp
        elif kind == "rc":
            tau, rser = (Rp + Rd) * C, 0.0
        else:
            raise ValueError(f"unknown Windkessel kind {kind!r}")
        a = math.exp(-h / tau)
        k = (q[1:] - q[:-1]) / h
        one = tau * (1.0 - a)
        b = (q[:-1] * one + k * (tau * h - tau * one)) / C
        # u = P_state - Pd; one cycle maps u -> A u + S
        A = a**M
        S = lfilter([1.0], [1.0, -a], b)[-1]
        n0 = cycles - 1
        u0 = S * (1.0 - A**n0) / (1.0 - A) if A < 1.0 else S * n0
        u = np.empty(M + 1)
        u[0] = u0
        u[1:] = lfilter([1.0], [1.0, -a], b, zi=[a * u0])[0]
        pp = (u + pd + rser * q) / MMHG
        out[i] = (pp.min(), pp.max(), np.trapezoid(pp, tg) / T)
    return out


def windkessel_pair(inflow: Optional[InflowWaveform] = None, pd_mmhg: float = 55.0,
                    cycles: int = 10, samples_per_cycle: int = 2048) -> ModelPair:
    """RCR (HF) and RC with ``R = Rp + Rd`` (LF) sharing inputs ``(Rp, Rd, C)``."""
    wf = inflow if inflow is not None else InflowWaveform.default()

    def hf(x):
        x = np.asarray(x, dtype=float)
        out = windkessel_qoi_batch("rcr", x, wf, pd_mmhg, cycles, samples_per_cycle)
        return out[0] if x.ndim == 1 else out

    def lf(x):
        x = np.asarray(x, dtype=float)
        out = windkessel_qoi_batch("rc", x, wf, pd_mmhg, cycles, samples_per_cycle)
        return out[0] if x.ndim == 1 else out

    bounds = np.array([[500.0, 1500.0], [500.0, 1500.0], [1e-5, 1e-4]])
    return ModelPair("circuit", hf, lf, bounds, ("Rp", "Rd", "C"), 3)


def rlc_from_geometry(mu: float, rho: float, l: float, r: float, E: float, h: float):
    """Poiseuille resistance, thin-shell compliance and inertance of a vessel segment."""
    for name, v in (("mu", mu), ("rho", rho), ("l", l), ("r", r), ("E", E), ("h", h)):
        if not v > 0:
            raise DomainError(f"{name} must be positive")
    R = 8.0 * mu * l / (math.pi * r**4)
    C = 3.0 * l * math.pi * r**3 / (2.0 * E * h)
    L = rho * l / (math.pi * r**2)
    return R, C, L


def rigid_wall_rlc(mu: float, rho: float, l: float, r: float):
    """Rigid-wall variant: capacitance is zero by convention."""
    R = 8.0 * mu * l / (math.pi * r**4)
    return R, 0.0, rho * l / (math.pi * r**2)


def mean_cuff_pressure(p_sys: float, p_dia: float) -> float:
    if p_sys < p_dia:
        raise DomainError("systolic pressure must not be below diastolic pressure")
    return p_sys / 3.0 + 2.0 * p_dia / 3.0


PAIRS = {"analytical2d": lambda: ANALYTICAL, "michalewicz": lambda: MICHALEWICZ,
         "borehole": lambda: BOREHOLE, "circuit": windkessel_pair}


def get_pair(name: str) -> ModelPair:
    try:
        return PAIRS[name]()
    except KeyError:
        from .errors import ConfigurationError

        raise ConfigurationError(f"unknown benchmark {name!r}; choose from {sorted(PAIRS)}")
