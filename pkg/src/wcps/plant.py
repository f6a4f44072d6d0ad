"""Discrete-time LTI plant with Gaussian noise, input saturation and a cart-pole instance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .numerics import as_matrix, expm

# Process noise streams are keyed by (seed, NOISE_STREAM_BASE + 2*agent);
# measurement noise uses the next id. Loss streams live below this range.
NOISE_STREAM_BASE = 1 << 20


def _psd_factor(S: np.ndarray, name: str) -> np.ndarray | None:
    """Square-root factor L with L L^T = S, or None when S is zero."""
    if not np.allclose(S, S.T, atol=1e-12):
        raise InvalidInputError(f"{name} must be symmetric")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if np.min(w, initial=0.0) < -1e-12 * max(1.0, np.max(np.abs(w), initial=0.0)):
        raise InvalidInputError(f"{name} must be positive semidefinite")
    if not np.any(S):
        return None
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class SystemModel:
    """``x(k+1) = A x(k) + B u(k) + v(k)``, ``y(k) = x(k) + w(k)``.

    ``input_limit`` is a per-channel symmetric saturation bound and
    ``state_abort_bounds`` a per-state absolute bound (``inf`` = unbounded).
    """

    A: np.ndarray
    B: np.ndarray
    sigma_proc: np.ndarray | None = None
    sigma_meas: np.ndarray | None = None
    input_limit: np.ndarray | None = None
    state_abort_bounds: np.ndarray | None = None
    _proc_factor: np.ndarray | None = field(init=False, repr=False, default=None)
    _meas_factor: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B", (n, None))
        sp = np.zeros((n, n)) if self.sigma_proc is None else as_matrix(self.sigma_proc, "sigma_proc", (n, n))
        sm = np.zeros((n, n)) if self.sigma_meas is None else as_matrix(self.sigma_meas, "sigma_meas", (n, n))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_proc", sp)
        object.__setattr__(self, "sigma_meas", sm)
        object.__setattr__(self, "_proc_factor", _psd_factor(sp, "sigma_proc"))
        object.__setattr__(self, "_meas_factor", _psd_factor(sm, "sigma_meas"))
        if self.input_limit is not None:
            lim = np.broadcast_to(np.asarray(self.input_limit, dtype=float), (B.shape[1],)).copy()
            if np.any(~(lim > 0)):
                raise InvalidInputError("input_limit entries must be > 0")
            object.__setattr__(self, "input_limit", lim)
        if self.state_abort_bounds is not None:
            bounds = np.asarray(self.state_abort_bounds, dtype=float).reshape(-1)
            if bounds.shape != (n,) or np.any(~(bounds > 0)):
                raise InvalidInputError("state_abort_bounds needs n positive entries (inf for none)")
            object.__setattr__(self, "state_abort_bounds", bounds)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def noisy(self) -> bool:
        return self._proc_factor is not None or self._meas_factor is not None

    def noiseless(self) -> "SystemModel":
        return SystemModel(self.A, self.B, None, None, self.input_limit, self.state_abort_bounds)

    def saturate(self, u: np.ndarray) -> np.ndarray:
        if self.input_limit is None:
            return u
        return np.clip(u, -self.input_limit, self.input_limit)

    def abort_violation(self, x: np.ndarray) -> int | None:
        """Index of the first state outside its abort bound, if any."""
        if self.state_abort_bounds is None:
            return None
        bad = np.nonzero(np.abs(x) > self.state_abort_bounds)[0]
        return int(bad[0]) if bad.size else None


def _draw(factor: np.ndarray | None, rng: np.random.Generator, n: int) -> np.ndarray | None:
    if factor is None:
        return None
    return factor @ rng.standard_normal(n)


def step(model: SystemModel, x, u, rng: np.random.Generator | None = None,
         meas_rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Advance the plant one update interval and measure the new state.

    Process noise is drawn from ``rng`` and sensor noise from ``meas_rng``
    (defaults to ``rng``). With zero covariances no random numbers are
    consumed and the step is exact.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x_next = model.A @ x + model.B @ u
    if model._proc_factor is not None:
        x_next = x_next + _draw(model._proc_factor, rng, model.n)
    y = x_next
    if model._meas_factor is not None:
        y = x_next + _draw(model._meas_factor, meas_rng if meas_rng is not None else rng, model.n)
    return x_next, y


def measure(model: SystemModel, x, rng: np.random.Generator | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if model._meas_factor is None:
        return x
    return x + _draw(model._meas_factor, rng, model.n)


def zoh_actuate(phi: int, u_hat_received, u_prev, input_limit=None) -> np.ndarray:
    """Zero-order-hold actuator: apply the received input if it arrived, else hold.

    ``u = phi * u_hat + (1 - phi) * u_prev``, then clamped to ``input_limit``.
    """
    if phi:
        if u_hat_received is None:
            raise InvalidInputError("phi=1 requires a received input")
        u = np.asarray(u_hat_received, dtype=float)
    else:
        u = np.asarray(u_prev, dtype=float)
    if input_limit is not None:
        lim = np.asarray(input_limit, dtype=float)
        u = np.clip(u, -lim, lim)
    return u


@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters of a cart with a pole on a revolute joint.

    The motor is modelled as an acceleration source on the unloaded cart:
    the drive force is ``cart_mass * (motor_gain * V - damping * s_dot)``,
    which lumps back-EMF and viscous friction into ``damping``. The pole is
    a uniform rod whose centre of mass sits ``pole_length`` above the pivot.
    Defaults approximate a Quanser IP02 cart with its long pendulum.
    State order is ``(s, theta, s_dot, theta_dot)``.
    """

    cart_mass: float = 0.94       # kg
    pole_mass: float = 0.23       # kg
    pole_length: float = 0.3302   # m, pivot to centre of mass
    gravity: float = 9.81         # m/s^2
    motor_gain: float = 1.83      # (m/s^2)/V
    damping: float = 8.2          # 1/s
    sample_time: float = 0.04     # s, equals the update interval

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_length", "motor_gain", "sample_time"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be strictly positive, got {v}")
        for name in ("gravity", "damping"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidInputError(f"{name} must be nonnegative, got {v}")


def cartpole_continuous(p: CartPoleParams) -> tuple[np.ndarray, np.ndarray]:
    """Small-angle equations of motion about the upright equilibrium."""
    M, m, l, g = p.cart_mass, p.pole_mass, p.pole_length, p.gravity
    J = m * l**2 / 3.0 + m * l**2            # rod inertia about the pivot
    D = (M + m) * J - (m * l) ** 2
    # (M+m) s'' + m l th'' = Fc ;  J th'' + m l s'' - m g l th = 0
    # Fc = M (k u - c s')
    Ac = np.zeros((4, 4))
    Ac[0, 2] = 1.0
    Ac[1, 3] = 1.0
    Ac[2, 1] = -(m * l) * (m * g * l) / D
    Ac[3, 1] = (M + m) * m * g * l / D
    Ac[2, 2] = -J * M * p.damping / D
    Ac[3, 2] = m * l * M * p.damping / D
    Bc = np.zeros((4, 1))
    Bc[2, 0] = J * M * p.motor_gain / D
    Bc[3, 0] = -m * l * M * p.motor_gain / D
    return Ac, Bc


def discretize(Ac, Bc, h: float, noise_psd=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization (Van Loan block exponentials).

    ``noise_psd`` is the continuous-time white-noise intensity; the returned
    covariance is ``int_0^h e^{A t} W e^{A' t} dt``.
    """
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * h)
    Ad, Bd = E[:n, :n], E[:n, n:]
    Sd = np.zeros((n, n))
    if noise_psd is not None and np.any(noise_psd):
        W = as_matrix(noise_psd, "noise_psd", (n, n))
        V = np.zeros((2 * n, 2 * n))
        V[:n, :n] = -Ac
        V[:n, n:] = W
        V[n:, n:] = Ac.T
        G = expm(V * h)
        Sd = G[n:, n:].T @ G[:n, n:]
        Sd = 0.5 * (Sd + Sd.T)
    return Ad, Bd, Sd


def linearized_cartpole(
    params: CartPoleParams,
    *,
    process_noise_psd=None,
    measurement_noise_std=None,
    input_limit: float | None = 10.0,
    track_limit: float | None = 0.25,
    angle_limit: float | None = None,
) -> SystemModel:
    """Discretized linear cart-pole model at ``params.sample_time``.

    ``process_noise_psd`` is a length-4 diagonal (or 4x4) continuous-time
    noise intensity; ``measurement_noise_std`` a length-4 per-channel std.
    """
    Ac, Bc = cartpole_continuous(params)
    W = None
    if process_noise_psd is not None:
        W = np.asarray(process_noise_psd, dtype=float)
        W = np.diag(W) if W.ndim == 1 else W
    Ad, Bd, Sd = discretize(Ac, Bc, params.sample_time, W)
    Sm = None
    if measurement_noise_std is not None:
        Sm = np.diag(np.asarray(measurement_noise_std, dtype=float) ** 2)
    bounds = None
    if track_limit is not None or angle_limit is not None:
        bounds = np.full(4, np.inf)
        if track_limit is not None:
            bounds[0] = track_limit
        if angle_limit is not None:
            bounds[1] = angle_limit
    return SystemModel(Ad, Bd, Sd, Sm, input_limit, bounds)


def estimate_velocities(y_curr, y_prev, v_filt_prev, dt: float, alpha: float) -> np.ndarray:
    """Finite-difference velocity with a first-order low-pass filter."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError("alpha must lie in [0, 1]")
    raw = (np.asarray(y_curr, dtype=float) - np.asarray(y_prev, dtype=float)) / dt
    return alpha * raw + (1.0 - alpha) * np.asarray(v_filt_prev, dtype=float)


def noise_rngs(seed: int, agent: int = 0) -> tuple[np.random.Generator, np.random.Generator]:
    """Process- and measurement-noise generators (Philox4x64 keyed by seed and stream)."""
    base = NOISE_STREAM_BASE + 2 * agent
    return (
        np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), base])),
        np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), base + 1])),
    )
