import numpy as np
import pytest
from scipy.stats import qmc

from mfposterior.flows import (FlowArchitecture, FlowModel, NoiseSampleSet, log_density,
                               sample_flow, train_flow)
from mfposterior.nn import TrainConfig

LOG_2PI = np.log(2 * np.pi)


def _perturbed(dim, arch, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    f = FlowModel(dim, arch, rng=rng, mean=rng.standard_normal(dim), std=0.5 + rng.random(dim))
    f.theta = f.theta + scale * rng.standard_normal(f.theta.size)
    return f


FLOWS = {
    "spline1d": lambda: _perturbed(1, FlowArchitecture(layers=3)),
    "realnvp2d": lambda: _perturbed(2, FlowArchitecture(layers=2, width=6, blocks=2)),
    "realnvp3d": lambda: _perturbed(3, FlowArchitecture(layers=1, width=4, blocks=3)),
}


def test_identity_flow_is_standard_normal_of_standardized_input():
    f = FlowModel.identity(2, mean=[1.0, -1.0], std=[2.0, 0.5])
    x = np.array([[0.3, 0.7], [3.0, -2.0]])
    u = (x - f.mean) / f.std
    expect = -0.5 * np.sum(u * u, axis=1) - LOG_2PI - np.log(2.0 * 0.5)
    np.testing.assert_allclose(log_density(f, x), expect, rtol=1e-13)
    g = FlowModel.identity(1)
    np.testing.assert_allclose(g.log_density(np.array([0.0, 1.5])), -0.5 * np.array([0, 2.25]) - 0.5 * LOG_2PI)


@pytest.mark.parametrize("name", sorted(FLOWS))
def test_bijectivity_and_jacobian_consistency(name):
    f = FLOWS[name]()
    z = np.random.default_rng(1).standard_normal((1000, f.dim)) * 1.5
    x, ld_fwd = f.forward(z)
    z2, ld_inv = f.inverse(x)
    assert np.max(np.abs(z2 - z)) < 1e-10
    assert np.max(np.abs(ld_fwd + ld_inv)) < 1e-10


@pytest.mark.parametrize("name", sorted(FLOWS))
def test_density_of_generated_sample_matches_forward_jacobian(name):
    f = FLOWS[name]()
    z = np.random.default_rng(2).standard_normal((200, f.dim))
    x, ld = f.forward(z)
    via_forward = -0.5 * np.sum(z * z, axis=1) - 0.5 * f.dim * LOG_2PI - ld
    np.testing.assert_allclose(f.log_density(x), via_forward, atol=1e-10)


def test_spline_tails_are_identity():
    f = FlowModel(1, FlowArchitecture(layers=1, bins=4, bound=2.0))
    f.theta = f.theta + 0.5 * np.random.default_rng(0).standard_normal(f.theta.size)
    f.theta[:2] = 0.0  # neutral affine
    x = np.array([[-7.0], [-2.5], [2.5], [9.0]])
    z, ld = f.inverse(x)
    np.testing.assert_array_equal(z, x)
    np.testing.assert_array_equal(ld, 0.0)


def _qmc_integral(f, lo, hi, n=2**20):
    d = f.dim
    pts = qmc.Sobol(d, seed=0).random(n)
    x = lo + pts * (hi - lo)
    return float(np.mean(np.exp(f.log_density(x)))) * np.prod(hi - lo)


@pytest.fixture(scope="module")
def bimodal_flow():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(-2, 0.5, 1500), rng.normal(1.5, 0.7, 1500)])
    return train_flow(x, TrainConfig(epochs=800, learning_rate=5e-3, scheduler_step=0.999),
                      FlowArchitecture(layers=3))


@pytest.fixture(scope="module")
def correlated_flow():
    cov = np.array([[1.0, 0.8], [0.8, 1.5]])
    x = np.random.default_rng(1).multivariate_normal([1.0, -2.0], cov, 4000)
    flow = train_flow(x, TrainConfig(epochs=1500, learning_rate=5e-3, scheduler_step=0.999),
                      FlowArchitecture(layers=2, width=8, blocks=2))
    return flow, cov


def test_trained_1d_flow_normalizes(bimodal_flow):
    f = bimodal_flow
    assert abs(_qmc_integral(f, np.array([-15.0]), np.array([15.0])) - 1) < 0.01


def test_trained_2d_flow_normalizes(correlated_flow):
    f, _ = correlated_flow
    assert abs(_qmc_integral(f, np.array([-9.0, -12.0]), np.array([11.0, 8.0])) - 1) < 0.01


def test_correlated_gaussian_kl(correlated_flow):
    f, cov = correlated_flow
    mean = np.array([1.0, -2.0])
    x = np.random.default_rng(5).multivariate_normal(mean, cov, 200000)
    diff = x - mean
    log_p = (-0.5 * np.einsum("ij,jk,ik->i", diff, np.linalg.inv(cov), diff)
             - LOG_2PI - 0.5 * np.log(np.linalg.det(cov)))
    kl = np.mean(log_p - f.log_density(x))
    assert kl < 0.05


def test_loglik_history_monotone(correlated_flow):
    f, _ = correlated_flow
    epochs = sorted(f.history)
    vals = [f.history[e] for e in epochs]
    assert epochs[:3] == [0, 100, 200]
    assert all(b >= a - 0.01 for a, b in zip(vals, vals[1:]))
    assert np.isfinite(f.test_loglik)


def test_flow_on_shifted_gaussian_recovers_mean():
    x = np.random.default_rng(3).normal(3.0, 2.0, 4000)
    f = train_flow(x, TrainConfig(epochs=400, learning_rate=5e-3), FlowArchitecture(layers=2))
    s = sample_flow(f, 20000, seed=0)
    assert 2.8 <= s.mean() <= 3.2


def test_degenerate_residuals():
    f = train_flow(np.full(200, 1.7), TrainConfig(epochs=10), FlowArchitecture(layers=2))
    assert f.std[0] <= 1e-12
    ld = f.log_density(np.array([1.7, 1.7 + 1e-6]))
    assert ld[0] > 20 and ld[1] < -1e9
    assert np.all(np.abs(f.sample(100, 0) - 1.7) < 1e-10)


def test_identity_sampling_moments():
    s = FlowModel.identity(1).sample(100000, seed=4)
    assert abs(s.mean()) < 0.02
    assert abs(s.var() - 1) < 0.02


def test_sampling_is_reproducible():
    f = FLOWS["realnvp2d"]()
    np.testing.assert_array_equal(f.sample(50, seed=9), f.sample(50, seed=9))


@pytest.mark.parametrize("name", sorted(FLOWS))
def test_checkpoint_round_trip(name):
    f = FLOWS[name]()
    d = f.to_dict()
    if f.dim > 1:
        assert len(d["masks"]) == 2 * f.arch.blocks
    g = FlowModel.from_dict(d)
    x = np.random.default_rng(0).standard_normal((20, f.dim))
    np.testing.assert_array_equal(g.log_density(x), f.log_density(x))


def test_noise_sample_set_residuals():
    rng = np.random.default_rng(0)
    hf = np.arange(4.0)
    s = NoiseSampleSet.from_residuals(hf, hf / 2, 2.0, [0.0 + 1e-300], rng, "x")
    np.testing.assert_allclose(s.deltas[:, 0], 0.0, atol=1e-140)
    assert s.dim == 1 and s.alpha == 2.0 and s.surrogate_id == "x"


def test_dimension_mismatch():
    from mfposterior.errors import InputShapeError
    with pytest.raises(InputShapeError):
        FlowModel.identity(2).log_density(np.zeros((3, 3)))
