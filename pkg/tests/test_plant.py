import numpy as np
import pytest

from wcps.errors import InvalidInputError
from wcps.numerics import expm
from wcps.plant import (
    CartPoleParams,
    SystemModel,
    cartpole_continuous,
    discretize,
    estimate_velocities,
    linearized_cartpole,
    measure,
    noise_rngs,
    step,
    zoh_actuate,
)


def test_step_scalar_no_noise():
    model = SystemModel([[2.0]], [[1.0]])
    x, y = step(model, [1.0], [-1.5])
    assert np.array_equal(x, [0.5])
    assert np.array_equal(y, [0.5])


def test_step_double_integrator():
    model = SystemModel([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
    x, _ = step(model, [0.0, 1.0], [1.0])
    assert np.array_equal(x, [1.0, 2.0])


def test_step_noise_is_deterministic_per_stream():
    model = SystemModel(np.eye(2), np.ones((2, 1)), 0.01 * np.eye(2), 0.04 * np.eye(2))
    a = step(model, [1.0, 0.0], [0.0], *noise_rngs(7))
    b = step(model, [1.0, 0.0], [0.0], *noise_rngs(7))
    c = step(model, [1.0, 0.0], [0.0], *noise_rngs(8))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], c[0])


def test_process_noise_covariance():
    S = np.array([[0.04, 0.01], [0.01, 0.09]])
    model = SystemModel(np.zeros((2, 2)), np.zeros((2, 1)), S, None)
    rng, _ = noise_rngs(11)
    draws = np.array([step(model, [0.0, 0.0], [0.0], rng)[0] for _ in range(100_000)])
    emp = np.cov(draws.T)
    assert np.all(np.abs(emp - S) <= 0.05 * np.max(np.abs(S)))
    assert np.all(np.abs(np.diag(emp) / np.diag(S) - 1.0) < 0.05)


def test_measurement_noise_only_affects_output():
    model = SystemModel(np.eye(1), np.ones((1, 1)), None, np.array([[1.0]]))
    x, y = step(model, [1.0], [0.0], *noise_rngs(0))
    assert x[0] == 1.0
    assert y[0] != 1.0
    assert np.array_equal(measure(model.noiseless(), x), x)


def test_model_rejects_indefinite_covariance():
    with pytest.raises(InvalidInputError):
        SystemModel(np.eye(2), np.ones((2, 1)), np.diag([1.0, -1.0]))


@pytest.mark.parametrize(
    "phi, received, prev, expected",
    [
        (1, [2.0], [5.0], [2.0]),
        (0, None, [5.0], [5.0]),
        (1, [20.0], [0.0], [10.0]),
        (0, None, [-12.0], [-10.0]),
    ],
)
def test_zoh_actuate(phi, received, prev, expected):
    assert np.array_equal(zoh_actuate(phi, received, prev, input_limit=10.0), expected)


def test_zoh_requires_payload_when_delivered():
    with pytest.raises(InvalidInputError):
        zoh_actuate(1, None, [0.0])


def test_cartpole_default_is_open_loop_unstable():
    model = linearized_cartpole(CartPoleParams(sample_time=0.045))
    assert np.max(np.abs(np.linalg.eigvals(model.A))) > 1.0
    assert model.A.shape == (4, 4) and model.B.shape == (4, 1)
    assert model.state_abort_bounds[0] == 0.25
    assert np.isinf(model.state_abort_bounds[1])


def test_cartpole_without_gravity_or_damping_is_a_double_integrator():
    Ac, Bc = cartpole_continuous(CartPoleParams(gravity=0.0, damping=0.0))
    assert np.array_equal(Ac[:2, :2], np.zeros((2, 2)))
    assert np.array_equal(Ac[:2, 2:], np.eye(2))
    assert np.array_equal(Ac[2:], np.zeros((2, 4)))
    assert Bc[2, 0] > 0 and Bc[3, 0] < 0


def test_cartpole_short_interval_is_near_identity():
    model = linearized_cartpole(CartPoleParams(sample_time=1e-6))
    assert np.allclose(model.A, np.eye(4), atol=1e-4)
    assert np.max(np.abs(model.B)) < 1e-4


@pytest.mark.parametrize("h", [0.01, 0.02, 0.045])
def test_discretization_semigroup(h):
    Ac, Bc = cartpole_continuous(CartPoleParams())
    W = np.diag([0.0, 0.0, 1e-4, 1e-3])
    Ah, Bh, Sh = discretize(Ac, Bc, h, W)
    A2, B2, S2 = discretize(Ac, Bc, h / 2, W)
    assert np.allclose(Ah, A2 @ A2, atol=1e-9)
    assert np.allclose(Bh, A2 @ B2 + B2, atol=1e-9)
    assert np.allclose(Sh, A2 @ S2 @ A2.T + S2, atol=1e-12)
    assert np.allclose(Ah, expm(Ac * h), atol=1e-12)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        CartPoleParams(cart_mass=0.0)
    with pytest.raises(InvalidInputError):
        CartPoleParams(damping=-1.0)


def test_estimate_velocities():
    v = estimate_velocities([0.1, 0.02], [0.0, 0.0], [0.0, 0.0], dt=0.02, alpha=1.0)
    assert np.allclose(v, [5.0, 1.0])
    v = estimate_velocities([0.1, 0.02], [0.0, 0.0], [1.0, 1.0], dt=0.02, alpha=0.5)
    assert np.allclose(v, [3.0, 1.0])
    assert np.array_equal(estimate_velocities([1.0], [0.0], [2.0], dt=0.1, alpha=0.0), [2.0])


def test_estimate_velocities_validation():
    with pytest.raises(InvalidInputError):
        estimate_velocities([0.0], [0.0], [0.0], dt=0.0, alpha=0.5)
    with pytest.raises(InvalidInputError):
        estimate_velocities([0.0], [0.0], [0.0], dt=0.1, alpha=1.5)
