"""
Dense linear-algebra and control-design kernels.

Everything here is a pure function of its arguments. Matrices are plain
``numpy.ndarray`` objects of dtype float64 (complex values appear only in
eigenvalue outputs).

Contents
--------
- ``dare_solve``            discrete algebraic Riccati equation by fixed-point iteration
- ``ackermann_place``       single-input pole placement
- ``cp_map_spectral_radius`` spectral radius of X -> sum_i w_i M_i^T X M_i
- ``solve_cp_lyapunov``     P = T(P) + Q via the Neumann series of T
- ``expm``                  matrix exponential (scaling and squaring + Taylor)
- ``eig``                   eigenvalues (LAPACK through numpy)
"""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConditioningError,
    DivergedError,
    InfeasibleError,
    InvalidInputError,
    NumericalError,
    UncontrollableError,
)

EIG_MAX_DIM = 256
EXPM_TOL = 1e-12
LYAP_DIRECT_MAX = 1600  # largest lifted dimension d**2 solved densely
_WARMUP = 30

log = logging.getLogger(__name__)

# (weight, M) pairs describing T(X) = sum_i weight_i * M_i^T X M_i
CpMap = Sequence[tuple[float, np.ndarray]]


def as_matrix(a, name: str = "matrix", shape: tuple[int | None, int | None] | None = None) -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float array, optionally checking its shape."""
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    if shape is not None:
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(eig(A)))) if np.size(A) else 0.0


def eig(A) -> np.ndarray:
    """Eigenvalues of a square real matrix, as a complex array.

    Raises
    ------
    InvalidInputError
        If ``A`` is not square or exceeds ``EIG_MAX_DIM``.
    DivergedError
        If the QR iteration inside LAPACK fails.
    """
    A = as_matrix(A, "A")
    n, m = A.shape
    if n != m:
        raise InvalidInputError(f"eig needs a square matrix, got {A.shape}")
    if n > EIG_MAX_DIM:
        raise InvalidInputError(f"eig is capped at {EIG_MAX_DIM}x{EIG_MAX_DIM}, got {n}")
    try:
        return np.linalg.eigvals(A).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise DivergedError(f"eigenvalue iteration failed: {exc}") from exc


def expm(A, tol: float = EXPM_TOL) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series.

    The argument is scaled by ``2**-s`` until its 1-norm is at most 0.5, the
    series is summed until the next term is below ``tol`` relative to the
    partial sum, and the result is squared ``s`` times.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInputError(f"expm needs a square matrix, got {A.shape}")
    norm = np.linalg.norm(A, 1)
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    X = A / (2.0**s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 200):
        term = term @ X / k
        result = result + term
        if np.max(np.abs(term)) <= tol * max(1.0, np.max(np.abs(result))):
            break
    else:  # pragma: no cover - 200 terms of a series with ratio <= 0.5
        raise DivergedError("Taylor series for expm did not converge")
    for _ in range(s):
        result = result @ result
    return result


def dare_solve(A, B, Q, R, tol: float = 1e-10, max_iter: int = 10000) -> tuple[np.ndarray, np.ndarray]:
    """Solve the discrete algebraic Riccati equation by value iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q`` until the
    max-norm of the change falls below ``tol``.

    Returns
    -------
    P : (n, n) ndarray
        Stabilizing solution.
    F : (m, n) ndarray
        Optimal gain for ``u = F x``, i.e. ``F = -(R + B'PB)^-1 B'PA``.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInputError(f"A must be square, got {A.shape}")
    B = as_matrix(B, "B", (n, None))
    m = B.shape[1]
    Q = as_matrix(Q, "Q", (n, n))
    R = as_matrix(R, "R", (m, m))
    if not np.allclose(Q, Q.T, atol=1e-12) or not np.allclose(R, R.T, atol=1e-12):
        raise InvalidInputError("Q and R must be symmetric")
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise InvalidInputError("R must be positive definite")

    P = Q.copy()
    for _ in range(max_iter):
        G = R + B.T @ P @ B
        if np.linalg.cond(G) > 1e14:
            raise ConditioningError("R + B'PB is numerically singular")
        K = np.linalg.solve(G, B.T @ P @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise DivergedError("Riccati iterates became non-finite")
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta < tol:
            break
    else:
        raise DivergedError(f"Riccati iteration did not converge in {max_iter} iterations")

    G = R + B.T @ P @ B
    F = -np.linalg.solve(G, B.T @ P @ A)
    if spectral_radius(A + B @ F) >= 1.0:
        raise DivergedError("Riccati fixed point is not stabilizing; is (A, B) stabilizable?")
    return P, F


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _check_conjugate_closed(poles: np.ndarray, tol: float = 1e-9) -> None:
    remaining = list(poles)
    while remaining:
        p = remaining.pop()
        if abs(p.imag) <= tol:
            continue
        match = [i for i, q in enumerate(remaining) if abs(q - np.conj(p)) <= tol * max(1.0, abs(p))]
        if not match:
            raise InvalidInputError(f"pole {p} has no complex-conjugate partner")
        remaining.pop(match[0])


def ackermann_place(A, b, desired_poles: Iterable[complex], cond_limit: float = 1e12) -> np.ndarray:
    """Single-input pole placement by Ackermann's formula.

    Returns ``F`` (1 x n) such that the eigenvalues of ``A + b F`` are the
    ``desired_poles``::

        F = -[0 ... 0 1] C^-1 p(A)

    with ``C`` the controllability matrix and ``p`` the desired characteristic
    polynomial.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInputError(f"A must be square, got {A.shape}")
    b = as_matrix(b, "b", (n, None))
    if b.shape[1] != 1:
        raise InvalidInputError("Ackermann's formula needs a single input (b must be n x 1)")
    poles = np.asarray(list(desired_poles), dtype=complex)
    if poles.size != n:
        raise InvalidInputError(f"need {n} poles, got {poles.size}")
    _check_conjugate_closed(poles)

    C = controllability_matrix(A, b)
    if np.linalg.cond(C) > cond_limit:
        raise UncontrollableError("controllability matrix is numerically singular")

    coeffs = np.real(np.poly(poles))  # leading 1, then c_1 ... c_n
    pA = np.zeros_like(A)
    for c in coeffs:  # Horner
        pA = pA @ A + c * np.eye(n)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    row = np.linalg.solve(C.T, e_n)
    return -(row @ pA).reshape(1, n)


def apply_cp_map(terms: CpMap, X: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    for w, M in terms:
        if w != 0.0:
            out += w * (M.T @ X @ M)
    return out


def _validate_cp_map(terms: CpMap) -> list[tuple[float, np.ndarray]]:
    terms = [(float(w), as_matrix(M, "M_i")) for w, M in terms]
    if not terms:
        raise InvalidInputError("the map needs at least one term")
    d = terms[0][1].shape[0]
    for w, M in terms:
        if M.shape != (d, d):
            raise InvalidInputError("all M_i must be square with equal dimension")
        if w < 0 or not np.isfinite(w):
            raise InvalidInputError("weights must be finite and nonnegative")
    return terms


def kronecker_lift(terms: CpMap) -> np.ndarray:
    """d^2 x d^2 matrix of T acting on row-major vec(X)."""
    terms = _validate_cp_map(terms)
    # vec_r(M^T X M) = (M^T kron M^T) vec_r(X)
    return sum(w * np.kron(M.T, M.T) for w, M in terms)


def cp_map_spectral_radius(terms: CpMap, tol: float = 1e-10, max_iter: int = 20000) -> float:
    """Spectral radius of ``T(X) = sum_i w_i M_i^T X M_i`` by power iteration.

    ``T`` is completely positive, so its spectral radius is an eigenvalue
    with a positive-semidefinite eigenvector (and likewise for the adjoint
    ``T*(Y) = sum_i w_i M_i Y M_i^T``). Both are iterated from the identity
    on the shifted operators ``T + s I`` and ``T* + s I``; the shift ``s`` is
    a rough radius estimate from a few unshifted steps. Shifting makes the
    Perron root the unique eigenvalue of largest modulus even when ``T`` has
    a peripheral complex pair, and keeps every iterate positive definite.

    The estimate is the two-sided Rayleigh quotient ``<Y, T X> / <Y, X>``,
    whose error is of the order of the product of the two eigen-residuals.
    Iteration stops once that product (scaled by ``<Y, X>``) is below ``tol``.
    A defective Perron root converges only algebraically; if the budget runs
    out while the estimate is settling monotonically (or jittering at
    roundoff level) it is returned, otherwise ``DivergedError`` is raised.
    A map with a single nonzero term is handled exactly through the
    eigenvalues of that term.
    """
    terms = _validate_cp_map(terms)
    d = terms[0][1].shape[0]
    active = [(w, M) for w, M in terms if w != 0.0]
    if not active:
        return 0.0
    if len(active) == 1:
        # eigenvalues of X -> w M'XM are w * lambda_i * lambda_j
        w, M = active[0]
        return w * spectral_radius(M) ** 2
    eye = np.eye(d) / np.sqrt(d)

    X = eye
    logs = []
    for _ in range(_WARMUP):
        TX = apply_cp_map(terms, X)
        nrm = np.linalg.norm(TX)
        if nrm == 0.0:
            # T^k(I) = 0 for a positive map means T is nilpotent
            return 0.0
        logs.append(np.log(nrm))
        X = 0.5 * (TX + TX.T) / nrm
    shift = float(np.exp(np.mean(logs[_WARMUP // 2:])))

    X = eye
    Y = eye
    history: list[float] = []
    lam = shift
    for _ in range(max_iter):
        TX = apply_cp_map(terms, X) + shift * X
        TY = _apply_adjoint(terms, Y) + shift * Y
        overlap = float(np.sum(Y * X))
        lam = float(np.sum(Y * TX)) / overlap
        rx = np.linalg.norm(TX - np.sum(X * TX) * X)
        ry = np.linalg.norm(TY - np.sum(Y * TY) * Y)
        if rx * ry / overlap <= tol * max(1.0, lam) and max(rx, ry) <= 1e-4 * lam:
            return max(lam - shift, 0.0)
        history.append(lam)
        X = 0.5 * (TX + TX.T)
        X /= np.linalg.norm(X)
        Y = 0.5 * (TY + TY.T)
        Y /= np.linalg.norm(Y)

    recent = np.asarray(history[-_WARMUP:])
    tail = np.diff(recent)
    if np.all(tail <= 0) or np.all(tail >= 0) or np.ptp(recent) <= np.sqrt(tol) * abs(lam):
        log.debug("power iteration settling slowly (defective Perron root?); returning %.12g", lam - shift)
        return max(lam - shift, 0.0)
    raise DivergedError(f"Rayleigh quotient still oscillating after {max_iter} iterations")


def _apply_adjoint(terms: CpMap, Y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(Y)
    for w, M in terms:
        if w != 0.0:
            out += w * (M @ Y @ M.T)
    return out


def solve_cp_lyapunov(
    terms: CpMap,
    Q,
    tol: float = 1e-13,
    max_iter: int = 2_000_000,
    rho: float | None = None,
) -> np.ndarray:
    """Unique symmetric solution of ``P = T(P) + Q`` for a stable CP map ``T``.

    For ``d**2 <= LYAP_DIRECT_MAX`` the lifted linear system
    ``(I - L) vec(P) = vec(Q)`` is solved directly and refined once, which
    stays fast when the spectral radius is close to one. Larger problems sum
    the Neumann series ``sum_k T^k(Q)`` by the fixed-point recursion
    ``P <- T(P) + Q``, symmetrizing every iterate, until the update is below
    ``tol`` relative to ``max(1, ||P||_max)``. The result is checked for
    positive definiteness with a Cholesky factorization.

    ``rho`` may be passed when the spectral radius is already known.
    """
    terms = _validate_cp_map(terms)
    d = terms[0][1].shape[0]
    Q = as_matrix(Q, "Q", (d, d))
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise InvalidInputError("Q must be symmetric")
    if rho is None:
        rho = cp_map_spectral_radius(terms)
    if rho >= 1.0:
        raise InfeasibleError(f"spectral radius {rho:.6g} >= 1: no certificate exists")

    if d * d <= LYAP_DIRECT_MAX:
        P = _lyapunov_direct(terms, Q)
    else:
        P = _lyapunov_neumann(terms, Q, tol, max_iter)
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("certificate is not positive definite") from exc
    return P


def _lyapunov_direct(terms, Q: np.ndarray) -> np.ndarray:
    d = Q.shape[0]
    K = np.eye(d * d) - kronecker_lift(terms)
    P = np.linalg.solve(K, Q.reshape(-1)).reshape(d, d)
    P = 0.5 * (P + P.T)
    resid = apply_cp_map(terms, P) + Q - P
    P = P + np.linalg.solve(K, resid.reshape(-1)).reshape(d, d)
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise NumericalError("lifted Lyapunov system is singular")
    return P


def _lyapunov_neumann(terms, Q: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    P = Q.copy()
    for _ in range(max_iter):
        TP = apply_cp_map(terms, P)
        asym = np.max(np.abs(TP - TP.T))
        if asym > 1e-8 * max(1.0, np.max(np.abs(TP))):
            raise NumericalError("second-moment map lost symmetry")
        P_next = 0.5 * (TP + TP.T) + Q
        delta = np.max(np.abs(P_next - P))
        P = P_next
        if delta <= tol * max(1.0, np.max(np.abs(P))):
            break
    else:
        raise DivergedError(f"Neumann series did not converge in {max_iter} iterations")
    return P
