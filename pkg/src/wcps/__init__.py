"""Co-simulation and mean-square stability certification of control loops closed over lossy round-based wireless networks."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    AnalysisError,
    BracketError,
    ConditioningError,
    ContractViolation,
    DivergedError,
    InfeasibleError,
    InvalidInputError,
    NumericalError,
    UncontrollableError,
    WcpsError,
)
from .numerics import ackermann_place, cp_map_spectral_radius, dare_solve, eig, solve_cp_lyapunov  # noqa: F401
from .plant import CartPoleParams, SystemModel, linearized_cartpole, step, zoh_actuate  # noqa: F401
from .network import BurstSchedule, JitterParams, NetworkModel, draw_loss, jitter_bound  # noqa: F401
from .controller import ControllerState, compute_input, design_stabilizing_gain, design_sync_gains, predict  # noqa: F401
from .stability import AugmentedSystem, MssVerdict, assemble_augmented, check_mss, critical_probability  # noqa: F401
from .sim import Scenario, SimTrace, compute_metrics, run_closed_loop, run_sweep, run_sync_scenario  # noqa: F401
