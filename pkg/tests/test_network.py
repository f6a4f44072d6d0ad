import numpy as np
import pytest
from hypothesis import given, strategies as st

from wcps.errors import ContractViolation, InvalidInputError
from wcps.network import (
    ACTUATION,
    SENSOR,
    BurstSchedule,
    JitterParams,
    NetworkModel,
    Pipeline,
    draw_loss,
    jitter_bound,
    jitter_terms,
    loss_sequence,
)


def test_lossless_and_dead_channels():
    assert np.all(loss_sequence(NetworkModel(0.02, 1.0, 1.0), SENSOR, 500) == 1)
    assert np.all(loss_sequence(NetworkModel(0.02, 0.0, 0.0), ACTUATION, 500) == 0)


@pytest.mark.parametrize("channel", [SENSOR, ACTUATION])
def test_delivery_rate(channel):
    seq = loss_sequence(NetworkModel(0.02, 0.75, 0.75, seed=3), channel, 100_000)
    assert abs(seq.mean() - 0.75) < 0.01


def test_channels_are_independent_and_memoryless():
    net = NetworkModel(0.02, 0.5, 0.5, seed=9)
    th = loss_sequence(net, SENSOR, 100_000).astype(float)
    ph = loss_sequence(net, ACTUATION, 100_000).astype(float)
    assert abs(np.corrcoef(th, ph)[0, 1]) < 0.01
    assert abs(np.corrcoef(th[1:], th[:-1])[0, 1]) < 0.01


def test_draw_loss_matches_sequence_and_is_deterministic():
    net = NetworkModel(0.02, 0.6, 0.3, seed=42)
    seq = loss_sequence(net, ACTUATION, 50)
    assert [draw_loss(net, k, ACTUATION) for k in range(50)] == list(seq)
    assert np.array_equal(seq, loss_sequence(net, ACTUATION, 50))
    assert not np.array_equal(seq, loss_sequence(net.with_(seed=43), ACTUATION, 50))


def test_common_random_numbers_are_monotone_in_mu():
    lo = loss_sequence(NetworkModel(0.02, 0.3, 1.0, seed=5), SENSOR, 5000)
    hi = loss_sequence(NetworkModel(0.02, 0.8, 1.0, seed=5), SENSOR, 5000)
    assert np.all(lo <= hi)


def test_burst_overrides_draws():
    burst = BurstSchedule(period=1.0, burst_length=5, applies_to="actuation")
    net = NetworkModel(0.1, 1.0, 1.0, fault_injection=burst)
    phi = loss_sequence(net, ACTUATION, 40)
    theta = loss_sequence(net, SENSOR, 40)
    dropped = np.nonzero(phi == 0)[0]
    assert list(dropped) == [10, 11, 12, 13, 14, 20, 21, 22, 23, 24, 30, 31, 32, 33, 34]
    assert np.all(theta == 1)
    assert burst.windows(40, 0.1) == [(10, 15), (20, 25), (30, 35)]
    assert draw_loss(net, 12, ACTUATION) == 0


def test_burst_validation():
    with pytest.raises(InvalidInputError):
        BurstSchedule(period=1.0, burst_length=0)
    with pytest.raises(InvalidInputError):
        NetworkModel(0.1, fault_injection=BurstSchedule(period=1.0, burst_length=10))


@pytest.mark.parametrize("ratio", [1, 3])
def test_only_two_round_delay_supported(ratio):
    with pytest.raises(InvalidInputError, match="delay_ratio"):
        NetworkModel(0.02, delay_ratio=ratio)


def test_network_validation():
    with pytest.raises(InvalidInputError):
        NetworkModel(0.0)
    with pytest.raises(InvalidInputError):
        NetworkModel(0.02, mu_theta=1.2)
    assert NetworkModel(0.02).end_to_end_delay == pytest.approx(0.04)


@pytest.mark.parametrize(
    "params, expected_us",
    [
        (JitterParams(), 50.041667),
        (JitterParams(T_end_tilde=0.0), 30.041667),
        (JitterParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), 0.0),
    ],
)
def test_jitter_bound_examples(params, expected_us):
    assert jitter_bound(params) * 1e6 == pytest.approx(expected_us, abs=1e-6)


def test_jitter_terms_sum_to_bound():
    p = JitterParams(e_ref_hat=3e-6, T_end_tilde=0.25)
    assert sum(jitter_terms(p).values()) == pytest.approx(jitter_bound(p), rel=1e-15)


@given(st.floats(0, 1e-3), st.floats(0, 1e-3), st.floats(0, 1e-3), st.floats(0, 1.0))
def test_jitter_bound_monotone(e_ref, drift, extra, t_end):
    base = JitterParams(e_ref_hat=e_ref, rho_ap_hat=drift, T_end_tilde=t_end)
    assert jitter_bound(JitterParams(e_ref_hat=e_ref + extra, rho_ap_hat=drift, T_end_tilde=t_end)) >= jitter_bound(base)
    assert jitter_bound(JitterParams(e_ref_hat=e_ref, rho_ap_hat=drift + extra, T_end_tilde=t_end)) >= jitter_bound(base)


def test_jitter_rejects_negative():
    with pytest.raises(InvalidInputError):
        JitterParams(e_task_hat=-1.0)


def test_pipeline_delivers_previous_round():
    pipe = Pipeline()
    pipe.emit(SENSOR, 0, [1.0])
    pipe.emit(ACTUATION, 0, [2.0])
    y, u = pipe.transport(1, 1, 0)
    assert np.array_equal(y, [1.0])
    assert u is None
    y, u = pipe.transport(2, 1, 1)
    assert y is None and u is None
    assert pipe.log == [(1, 1, 0), (2, 1, 1)]


def test_pipeline_rejects_duplicates_and_stale_messages():
    pipe = Pipeline()
    pipe.emit(SENSOR, 0, [1.0])
    with pytest.raises(ContractViolation):
        pipe.emit(SENSOR, 0, [1.0])
    with pytest.raises(ContractViolation):
        pipe.transport(3, 1, 1)


def test_pipeline_copies_payload():
    pipe = Pipeline()
    y = np.array([1.0])
    pipe.emit(SENSOR, 0, y)
    y[0] = 99.0
    got, _ = pipe.transport(1, 1, 1)
    assert got[0] == 1.0
