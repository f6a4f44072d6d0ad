"""
Round-based wireless network model.

Messages travel one round per hop, so with sensing and actuation both one
hop from the controller the end-to-end delay is exactly two update
intervals. Delivery is an i.i.d. Bernoulli event per (round, channel).

Random numbers come from a counter-based generator: the uniform variate
deciding delivery of round ``k`` on a channel is element ``k`` of the
Philox4x64 stream keyed by ``(seed, channel id)``. It depends on nothing
else, so sweeps over delivery probability reuse the same stream
(common random numbers) and a run can be replayed from the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import ContractViolation, InvalidInputError

SENSOR = "sensor"
ACTUATION = "actuation"
CHANNEL_IDS = {SENSOR: 0, ACTUATION: 1}
BROADCAST_STREAM_BASE = 1 << 10  # sync broadcast of agent i uses BROADCAST_STREAM_BASE + i

Channel = Literal["sensor", "actuation"]


@dataclass(frozen=True)
class BurstSchedule:
    """``burst_length`` consecutive drops starting every ``period`` seconds (first at t = period)."""

    period: float
    burst_length: int
    applies_to: Literal["sensor", "actuation", "both"] = "both"

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidInputError("burst period must be > 0")
        if int(self.burst_length) != self.burst_length or self.burst_length < 1:
            raise InvalidInputError("burst_length must be an integer >= 1")
        if self.applies_to not in ("sensor", "actuation", "both"):
            raise InvalidInputError(f"unknown burst target {self.applies_to!r}")

    def period_steps(self, update_interval: float) -> int:
        return int(round(self.period / update_interval))

    def covers(self, k: int, channel: str, update_interval: float) -> bool:
        if self.applies_to != "both" and self.applies_to != channel:
            return False
        p = self.period_steps(update_interval)
        return k >= p and (k % p) < self.burst_length

    def mask(self, n: int, channel: str, update_interval: float, start: int = 0) -> np.ndarray:
        k = np.arange(start, start + n)
        if self.applies_to != "both" and self.applies_to != channel:
            return np.zeros(n, dtype=bool)
        p = self.period_steps(update_interval)
        return (k >= p) & ((k % p) < self.burst_length)

    def windows(self, horizon: int, update_interval: float) -> list[tuple[int, int]]:
        """Half-open round ranges ``[start, end)`` of every burst starting before ``horizon``."""
        p = self.period_steps(update_interval)
        return [(s, s + self.burst_length) for s in range(p, horizon, p)]


@dataclass(frozen=True)
class NetworkModel:
    update_interval: float          # T_U, seconds
    mu_theta: float = 1.0           # sensor-message delivery probability
    mu_phi: float = 1.0             # actuation-message delivery probability
    seed: int = 0
    delay_ratio: int = 2            # T_D / T_U
    fault_injection: BurstSchedule | None = None

    def __post_init__(self):
        if not self.update_interval > 0:
            raise InvalidInputError("update interval must be > 0")
        for name in ("mu_theta", "mu_phi"):
            mu = getattr(self, name)
            if not 0.0 <= mu <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {mu}")
        if self.delay_ratio != 2:
            raise InvalidInputError(
                f"delay_ratio={self.delay_ratio} is not supported: the round pipeline fixes "
                "T_D = 2 T_U (one round sensor->controller, one round controller->actuator)"
            )
        if self.fault_injection is not None:
            p = self.fault_injection.period_steps(self.update_interval)
            if p <= self.fault_injection.burst_length:
                raise InvalidInputError("burst period must be longer than the burst itself")

    @property
    def end_to_end_delay(self) -> float:
        return self.delay_ratio * self.update_interval

    def mu(self, channel: str) -> float:
        return self.mu_theta if channel == SENSOR else self.mu_phi

    def with_(self, **changes) -> "NetworkModel":
        return replace(self, **changes)


def uniform_stream(seed: int, stream: int, n: int) -> np.ndarray:
    """First ``n`` uniforms on [0, 1) of the Philox stream keyed by ``(seed, stream)``."""
    bg = np.random.Philox(key=[seed & (2**64 - 1), stream])
    return np.random.Generator(bg).random(n)


def bernoulli_sequence(seed: int, stream: int, mu: float, n: int) -> np.ndarray:
    return (uniform_stream(seed, stream, n) < mu).astype(np.int8)


def loss_sequence(model: NetworkModel, channel: Channel, n: int) -> np.ndarray:
    """Delivery indicators for rounds ``0 .. n-1`` on ``channel`` (1 = delivered)."""
    if channel not in CHANNEL_IDS:
        raise InvalidInputError(f"unknown channel {channel!r}")
    seq = bernoulli_sequence(model.seed, CHANNEL_IDS[channel], model.mu(channel), n)
    if model.fault_injection is not None:
        seq[model.fault_injection.mask(n, channel, model.update_interval)] = 0
    return seq


def draw_loss(model: NetworkModel, k: int, channel: Channel) -> int:
    """Delivery indicator for round ``k`` on ``channel``; bursts override the Bernoulli draw."""
    if k < 0:
        raise InvalidInputError("round index must be >= 0")
    return int(loss_sequence(model, channel, k + 1)[k])


@dataclass(frozen=True)
class JitterParams:
    """Inputs of the worst-case jitter bound, all in SI units (s, dimensionless drift)."""

    e_ref_hat: float = 10e-6
    e_sync_hat: float = 1.0 / 48e6
    rho_ap_hat: float = 50e-6
    rho_cp_hat: float = 50e-6
    e_task_hat: float = 10e-6
    T_end_tilde: float = 0.1

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise InvalidInputError(f"{name} must be finite and nonnegative, got {v}")


def jitter_terms(p: JitterParams) -> dict[str, float]:
    """Contribution of each source to the jitter bound (seconds); they sum to the bound."""
    return {
        "reference_time_error": 2.0 * p.e_ref_hat,
        "sync_line_detection": 2.0 * p.e_sync_hat,
        "clock_drift": 2.0 * p.T_end_tilde * (p.rho_ap_hat + p.rho_cp_hat),
        "task_execution": p.e_task_hat,
    }


def jitter_bound(p: JitterParams) -> float:
    """Worst-case |J| on an interval of nominal length ``T_end_tilde``, in seconds."""
    return 2.0 * (p.e_ref_hat + p.e_sync_hat + p.T_end_tilde * (p.rho_ap_hat + p.rho_cp_hat)) + p.e_task_hat


@dataclass
class _Slot:
    round: int
    payload: np.ndarray


class Pipeline:
    """One-round mailboxes between sensor, controller and actuator.

    A message emitted at round ``k-1`` is handed over at round ``k`` if the
    channel's delivery flag is 1 and discarded otherwise. Each slot holds at
    most one message, so duplicates and reordering cannot happen.
    """

    def __init__(self):
        self._slots: dict[str, _Slot | None] = {SENSOR: None, ACTUATION: None}
        self.log: list[tuple[int, int, int]] = []  # (round, theta, phi)

    def emit(self, channel: Channel, k: int, payload) -> None:
        if self._slots[channel] is not None:
            raise ContractViolation(f"{channel} mailbox still holds the round-{self._slots[channel].round} message")
        self._slots[channel] = _Slot(k, np.array(payload, dtype=float, copy=True))

    def transport(self, k: int, theta: int, phi: int) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Deliver the round ``k-1`` messages; returns ``(y, u_hat)`` with None for losses."""
        out = []
        for channel, flag in ((SENSOR, theta), (ACTUATION, phi)):
            slot = self._slots[channel]
            self._slots[channel] = None
            if slot is not None and slot.round != k - 1:
                raise ContractViolation(f"{channel} message from round {slot.round} seen at round {k}")
            out.append(slot.payload if (flag and slot is not None) else None)
        self.log.append((k, int(theta), int(phi)))
        return out[0], out[1]


def pipeline_transport(pipeline: Pipeline, k: int, theta: int, phi: int):
    return pipeline.transport(k, theta, phi)
