"""
Mean-square stability of the closed loop under Bernoulli message loss.

The loop state ``z = (x, x_hat, u, u_hat)`` evolves as ``z(k+1) = A(k) z(k)``
where ``A(k)`` depends on the two delivery flags. Writing each flag as
``mu (1 - delta)`` with a zero-mean two-point ``delta`` splits ``A(k)`` into
a mean part and two zero-mean perturbations. The loop is mean-square
stable iff the second-moment operator

    T(X) = A0' X A0 + s1 A1' X A1 + s2 A2' X A2,    s_i = 1/mu_i - 1

has spectral radius below one; then ``P = sum_k T^k(I)`` satisfies
``A0' P A0 - P + sum s_i Ai' P Ai = -I``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AnalysisError, BracketError, InvalidInputError
from .numerics import as_matrix, cp_map_spectral_radius, solve_cp_lyapunov


def closed_loop_matrix(A, B, F, theta: float, phi: float) -> np.ndarray:
    """Transition matrix of ``(x, x_hat, u, u_hat)`` for given flags (0/1 or their means)."""
    n, m = B.shape
    I_m = np.eye(m)
    FA, FB = F @ A, F @ B
    Z = np.zeros
    return np.block([
        [A, Z((n, n)), B, Z((n, m))],
        [theta * A, (1.0 - theta) * A, Z((n, m)), B],
        [Z((m, n)), phi * FA, (1.0 - phi) * I_m, phi * FB],
        [Z((m, n)), FA, Z((m, m)), FB],
    ])


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    A0: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    sigma2_1: float
    sigma2_2: float
    mu_theta: float
    mu_phi: float
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray

    @property
    def d(self) -> int:
        return self.A0.shape[0]

    def sample(self, theta: int, phi: int) -> np.ndarray:
        """Transition matrix for one realization of the delivery flags."""
        return closed_loop_matrix(self.A, self.B, self.F, float(theta), float(phi))

    @staticmethod
    def delta(flag: int, mu: float) -> float:
        """Zero-mean variable with ``flag = mu (1 - delta)``."""
        return 1.0 - flag / mu

    def terms(self) -> list[tuple[float, np.ndarray]]:
        return [(1.0, self.A0), (self.sigma2_1, self.A1), (self.sigma2_2, self.A2)]


def assemble_augmented(model_or_A, F, mu_theta: float, mu_phi: float, B=None) -> AugmentedSystem:
    """Mean and perturbation matrices of the lossy closed loop.

    Accepts either a ``SystemModel`` or explicit ``A`` with ``B=``.
    """
    if B is None:
        A, B = model_or_A.A, model_or_A.B
    else:
        A = model_or_A
    A = as_matrix(A, "A")
    n = A.shape[0]
    B = as_matrix(B, "B", (n, None))
    m = B.shape[1]
    F = as_matrix(F, "F", (m, n))
    for name, mu in (("mu_theta", mu_theta), ("mu_phi", mu_phi)):
        if not 0.0 <= mu <= 1.0:
            raise InvalidInputError(f"{name} must lie in (0, 1], got {mu}")
        if mu == 0.0:
            raise InvalidInputError(
                f"{name} = 0 leaves the variance 1/mu - 1 undefined; with that channel never "
                "delivering, the loop is open and stability is decided by the open-loop plant"
            )

    A0 = closed_loop_matrix(A, B, F, mu_theta, mu_phi)
    Z = np.zeros((2 * n + 2 * m, 2 * n + 2 * m))
    A1 = Z.copy()
    A1[n:2 * n, :n] = -mu_theta * A
    A1[n:2 * n, n:2 * n] = mu_theta * A
    A2 = Z.copy()
    FA, FB = F @ A, F @ B
    A2[2 * n:2 * n + m, n:2 * n] = -mu_phi * FA
    A2[2 * n:2 * n + m, 2 * n:2 * n + m] = mu_phi * np.eye(m)
    A2[2 * n:2 * n + m, 2 * n + m:] = -mu_phi * FB
    return AugmentedSystem(
        A0, A1, A2, 1.0 / mu_theta - 1.0, 1.0 / mu_phi - 1.0, mu_theta, mu_phi, A, B, F
    )


@dataclass(frozen=True, eq=False)
class MssVerdict:
    is_mss: bool
    rho: float
    certificate: np.ndarray | None
    status: str  # "mss", "not_mss" or "marginal"

    def lmi_residual(self, aug: AugmentedSystem) -> np.ndarray:
        P = self.certificate
        out = aug.A0.T @ P @ aug.A0 - P
        for s, Ai in ((aug.sigma2_1, aug.A1), (aug.sigma2_2, aug.A2)):
            out += s * (Ai.T @ P @ Ai)
        return out


def second_moment_radius(aug: AugmentedSystem, tol: float = 1e-11) -> float:
    return cp_map_spectral_radius(aug.terms(), tol=tol)


def check_mss(aug: AugmentedSystem, tol: float = 1e-9, certificate: bool = True) -> MssVerdict:
    """Exact MSS test with an explicit certificate when stable.

    ``rho`` within ``tol`` of one is reported as ``"marginal"`` (and not MSS).
    """
    rho = second_moment_radius(aug)
    if rho < 1.0 - tol:
        P = solve_cp_lyapunov(aug.terms(), np.eye(aug.d), rho=rho) if certificate else None
        return MssVerdict(True, rho, P, "mss")
    status = "marginal" if rho <= 1.0 + tol else "not_mss"
    return MssVerdict(False, rho, None, status)


def _mus(channel: str, mu: float, other_mu: float) -> tuple[float, float]:
    if channel == "theta":
        return mu, other_mu
    if channel == "phi":
        return other_mu, mu
    if channel == "both_equal":
        return mu, mu
    raise InvalidInputError(f"unknown channel {channel!r}")


def critical_probability(
    model,
    F,
    channel: str = "both_equal",
    tol: float = 1e-6,
    *,
    mu_lo: float = 1e-3,
    other_mu: float = 1.0,
    grid: int = 17,
) -> float:
    """Smallest delivery probability that still gives a mean-square-stable loop.

    A coarse grid on ``[mu_lo, 1]`` is scanned first and must show a single
    change from unstable to stable; bisection then narrows the crossing to
    ``tol``. Any evaluated point that contradicts a single crossing raises
    ``AnalysisError``.
    """
    if not 0.0 < mu_lo < 1.0:
        raise InvalidInputError("mu_lo must lie in (0, 1)")

    def radius(mu: float) -> float:
        mt, mp = _mus(channel, mu, other_mu)
        return second_moment_radius(assemble_augmented(model, F, mt, mp))

    evaluated: list[tuple[float, bool]] = []

    def stable(mu: float) -> bool:
        s = radius(mu) < 1.0
        evaluated.append((mu, s))
        return s

    def assert_single_crossing():
        flags = [s for _, s in sorted(evaluated)]
        seen_stable = False
        for s in flags:
            if s:
                seen_stable = True
            elif seen_stable:
                raise AnalysisError("MSS verdict is not monotone in the delivery probability")

    if not stable(1.0):
        raise BracketError("loop is not mean-square stable even without losses")
    if stable(mu_lo):
        raise BracketError(f"loop is mean-square stable at mu = {mu_lo}: no crossing in [{mu_lo}, 1]")
    for mu in np.linspace(mu_lo, 1.0, grid)[1:-1]:
        stable(float(mu))
    assert_single_crossing()

    lo = max(mu for mu, s in evaluated if not s)
    hi = min(mu for mu, s in evaluated if s)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            hi = mid
        else:
            lo = mid
        assert_single_crossing()
    return hi
