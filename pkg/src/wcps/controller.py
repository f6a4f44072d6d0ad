"""
Remote controller that compensates the two-round delay and message loss.

The controller keeps a one-step state prediction ``x_hat`` and the inputs it
has sent. At round ``k`` it holds

* ``x_hat``      -- prediction of ``x(k-1)`` before ``predict``, of ``x(k)`` after
* ``u_hat_prev`` -- input it sent for round ``k-1``
* ``u_hat``      -- input it sent for round ``k`` (still in flight)

``predict`` rolls the model forward with ``u_hat_prev`` and the new
measurement (or the old prediction if the measurement was lost);
``compute_input`` rolls forward once more with ``u_hat`` and applies the
nominal gain, producing the input for round ``k+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidInputError
from .numerics import ackermann_place, as_matrix, dare_solve, spectral_radius
from .plant import SystemModel


@dataclass
class ControllerState:
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    x_hat: np.ndarray
    u_hat: np.ndarray
    u_hat_prev: np.ndarray
    _predicted: bool = False

    @classmethod
    def initial(cls, model: SystemModel, F, x_hat0=None, u_hat0=None) -> "ControllerState":
        """Controller at round 0.

        With the defaults (zero prediction, zero input) the controller sends
        zeros until the first measurement arrives, which is the same as
        staying idle.
        """
        F = as_matrix(F, "F", (model.m, model.n))
        x_hat = np.zeros(model.n) if x_hat0 is None else np.asarray(x_hat0, dtype=float).copy()
        u0 = np.zeros(model.m) if u_hat0 is None else np.asarray(u_hat0, dtype=float).copy()
        u_next = F @ (model.A @ x_hat + model.B @ u0)
        return cls(model.A, model.B, F, x_hat, u_next, u0)


def predict(state: ControllerState, theta: int, y_prev=None) -> np.ndarray:
    """``x_hat <- theta A y_prev + (1 - theta) A x_hat + B u_hat_prev``."""
    if theta:
        if y_prev is None:
            raise ContractViolation("theta=1 but no measurement was delivered")
        base = np.asarray(y_prev, dtype=float)
    else:
        if y_prev is not None:
            raise ContractViolation("theta=0 but a measurement was passed")
        base = state.x_hat
    state.x_hat = state.A @ base + state.B @ state.u_hat_prev
    state._predicted = True
    return state.x_hat


def compute_input(state: ControllerState) -> np.ndarray:
    """``u_next = F (A x_hat + B u_hat)``; shifts the sent-input pipeline."""
    if not state._predicted:
        raise ContractViolation("compute_input called before predict in this round")
    u_next = state.F @ (state.A @ state.x_hat + state.B @ state.u_hat)
    state.u_hat_prev = state.u_hat
    state.u_hat = u_next
    state._predicted = False
    return u_next


def design_stabilizing_gain(model: SystemModel, method: str = "pole_placement", *, poles=None, Q=None, R=None) -> np.ndarray:
    """Nominal state-feedback gain ``F`` (``u = F x``) with ``rho(A + B F) < 1``."""
    if method == "pole_placement":
        if poles is None:
            raise InvalidInputError("pole placement needs a pole list")
        F = ackermann_place(model.A, model.B, poles)
    elif method == "lqr":
        if Q is None or R is None:
            raise InvalidInputError("lqr needs Q and R")
        _, F = dare_solve(model.A, model.B, Q, R)
    else:
        raise InvalidInputError(f"unknown design method {method!r}")
    rho = spectral_radius(model.A + model.B @ F)
    if rho >= 1.0:
        raise InvalidInputError(f"designed gain is not stabilizing (rho = {rho:.6g})")
    return F


@dataclass(frozen=True)
class SyncWeights:
    Q_list: tuple
    R_list: tuple
    Q_sync: np.ndarray


def sync_state_weight(Q_list, Q_sync) -> np.ndarray:
    """Stacked state weight of the sum of per-agent costs and all pairwise sync terms.

    Diagonal block ``i`` is ``Q_i + (N-1) Q_sync``, off-diagonal blocks are
    ``-Q_sync``; for two agents this is
    ``[[Q1 + Qs, -Qs], [-Qs, Q2 + Qs]]``.
    """
    N = len(Q_list)
    n = Q_sync.shape[0]
    W = np.zeros((N * n, N * n))
    for i in range(N):
        for j in range(N):
            blk = (Q_list[i] + (N - 1) * Q_sync) if i == j else -Q_sync
            W[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
    return W


def design_sync_gains(models: list[SystemModel], w: SyncWeights) -> list[list[np.ndarray]]:
    """Centralized LQR for N coupled agents, returned as blocks ``F[i][j]``.

    Agent ``i`` applies ``u_i = sum_j F[i][j] x_j``.
    """
    N = len(models)
    if N < 2:
        raise InvalidInputError("synchronization needs at least two agents")
    if len(w.Q_list) != N or len(w.R_list) != N:
        raise InvalidInputError("need one Q and one R per agent")
    n = models[0].n
    if any(mdl.n != n for mdl in models):
        raise InvalidInputError("all agents must share the state dimension")
    Qs = as_matrix(w.Q_sync, "Q_sync", (n, n))
    Qs_list = [as_matrix(q, "Q_i", (n, n)) for q in w.Q_list]
    Rs_list = [as_matrix(r, "R_i", (mdl.m, mdl.m)) for r, mdl in zip(w.R_list, models)]

    W = sync_state_weight(Qs_list, Qs)
    if not np.allclose(W, W.T, atol=1e-12) or np.min(np.linalg.eigvalsh(W)) < -1e-10 * max(1.0, np.max(np.abs(W))):
        raise InvalidInputError("augmented synchronization weight is not positive semidefinite")

    ms = [mdl.m for mdl in models]
    M = sum(ms)
    A = np.zeros((N * n, N * n))
    B = np.zeros((N * n, M))
    R = np.zeros((M, M))
    col = 0
    for i, mdl in enumerate(models):
        A[i * n:(i + 1) * n, i * n:(i + 1) * n] = mdl.A
        B[i * n:(i + 1) * n, col:col + mdl.m] = mdl.B
        R[col:col + mdl.m, col:col + mdl.m] = Rs_list[i]
        col += mdl.m
    _, F = dare_solve(A, B, W, R)

    blocks = []
    row = 0
    for i in range(N):
        blocks.append([F[row:row + ms[i], j * n:(j + 1) * n].copy() for j in range(N)])
        row += ms[i]
    return blocks


def save_gain_csv(path, F) -> None:
    np.savetxt(path, np.atleast_2d(F), delimiter=",", fmt="%.17g")


def load_gain_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
