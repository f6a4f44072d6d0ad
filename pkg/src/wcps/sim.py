"""
Closed-loop co-simulation of plant, round-based network and controller.

One call to ``run_closed_loop`` executes, for every round ``k``:

1. the plant advances with the input held over the last interval and is measured,
2. the round-(k-1) messages are delivered or dropped,
3. the actuator applies the delivered input or holds the previous one,
4. the controller predicts ``x_hat(k)`` and computes the input for round ``k+1``,
5. the new measurement and input enter the one-round pipeline.

Record ``k`` of a trace holds ``x(k), y(k), u(k), u_hat(k), x_hat(k)`` and the
delivery flags of round ``k``; the initial state (round 0) is kept apart.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import ControllerState, compute_input, design_stabilizing_gain, predict
from .errors import InvalidInputError
from .network import (
    ACTUATION,
    BROADCAST_STREAM_BASE,
    SENSOR,
    NetworkModel,
    Pipeline,
    bernoulli_sequence,
    loss_sequence,
)
from .plant import (
    CartPoleParams,
    SystemModel,
    estimate_velocities,
    linearized_cartpole,
    measure,
    noise_rngs,
    step,
    zoh_actuate,
)

KINDS = ("remote_stabilization", "multi_agent_sync", "loss_sweep", "interval_sweep", "burst_test")
QUANTILES = (1, 5, 25, 50, 75, 95, 99)


@dataclass(frozen=True)
class PlantDesign:
    """Cart-pole model plus gain-design recipe, re-evaluable at any update interval.

    With ``pole_reference_interval`` set, each pole ``z`` is mapped to
    ``z ** (T_U / reference)`` (same continuous-time pole); otherwise the
    poles are used as given at every interval.
    """

    params: CartPoleParams = CartPoleParams()
    process_noise_psd: tuple | None = None
    measurement_noise_std: tuple | None = None
    input_limit: float | None = 10.0
    track_limit: float | None = 0.25
    angle_limit: float | None = None
    method: str = "pole_placement"
    poles: tuple = (0.8, 0.85, 0.9, 0.9)
    pole_reference_interval: float | None = None
    Q: tuple | None = None
    R: tuple | None = None

    def model(self, update_interval: float) -> SystemModel:
        return linearized_cartpole(
            replace(self.params, sample_time=update_interval),
            process_noise_psd=self.process_noise_psd,
            measurement_noise_std=self.measurement_noise_std,
            input_limit=self.input_limit,
            track_limit=self.track_limit,
            angle_limit=self.angle_limit,
        )

    def gain(self, model: SystemModel, update_interval: float) -> np.ndarray:
        if self.method == "pole_placement":
            poles = np.asarray(self.poles, dtype=complex)
            if self.pole_reference_interval is not None:
                poles = poles ** (update_interval / self.pole_reference_interval)
            return design_stabilizing_gain(model, "pole_placement", poles=poles)
        return design_stabilizing_gain(model, self.method, Q=np.asarray(self.Q), R=np.asarray(self.R))

    def build(self, update_interval: float) -> tuple[SystemModel, np.ndarray]:
        model = self.model(update_interval)
        return model, self.gain(model, update_interval)


@dataclass(frozen=True, eq=False)
class Hold:
    """Force one agent's state to ``state`` during local steps ``[start, end)``."""

    agent: int
    start: int
    end: int
    state: np.ndarray


@dataclass(frozen=True, eq=False)
class SyncSetup:
    models: tuple
    gains: tuple                  # gains[i][j] multiplies agent j's state in agent i's input
    local_interval: float         # s
    x0: tuple
    hold: Hold | None = None

    def exchange_every(self, exchange_interval: float) -> int:
        ratio = exchange_interval / self.local_interval
        r = int(round(ratio))
        if r < 1 or abs(ratio - r) > 1e-9 * max(1.0, ratio):
            raise InvalidInputError(
                f"local interval {self.local_interval} s must divide the exchange interval {exchange_interval} s"
            )
        return r


@dataclass(frozen=True, eq=False)
class Scenario:
    kind: str
    model: SystemModel
    gain: np.ndarray
    network: NetworkModel
    horizon: int
    seeds: tuple = (0,)
    x0: np.ndarray | None = None
    loop: str = "remote"                 # "remote" over the network, "local" co-located
    design: PlantDesign | None = None
    velocity_filter_alpha: float | None = None
    sync: SyncSetup | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown scenario kind {self.kind!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidInputError("horizon must be an integer >= 1")
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")
        if self.loop not in ("remote", "local"):
            raise InvalidInputError(f"unknown loop type {self.loop!r}")
        if np.shape(self.gain) != (self.model.m, self.model.n):
            raise InvalidInputError(f"gain shape {np.shape(self.gain)} does not match the plant")
        if self.x0 is not None and np.shape(self.x0) != (self.model.n,):
            raise InvalidInputError("x0 does not match the state dimension")
        if self.kind == "multi_agent_sync" and self.sync is None:
            raise InvalidInputError("multi_agent_sync scenarios need a sync setup")
        if self.kind == "burst_test" and self.network.fault_injection is None:
            raise InvalidInputError("burst_test scenarios need a burst schedule")
        if self.velocity_filter_alpha is not None and self.model.n % 2:
            raise InvalidInputError("velocity estimation needs (positions, velocities) state layout")

    @property
    def duration(self) -> float:
        return self.horizon * self.network.update_interval

    def at_update_interval(self, update_interval: float) -> "Scenario":
        """Same physical experiment re-discretized and re-designed at ``update_interval``."""
        if self.design is None:
            raise InvalidInputError("changing the update interval needs a PlantDesign to redesign the gain")
        model, F = self.design.build(update_interval)
        horizon = max(1, int(round(self.duration / update_interval)))
        return replace(self, model=model, gain=F, horizon=horizon,
                       network=replace(self.network, update_interval=update_interval))


@dataclass(frozen=True)
class AbortInfo:
    step: int
    state_index: int
    value: float


@dataclass(eq=False)
class SimTrace:
    k: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    u_hat: np.ndarray
    x_hat: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    saturated: np.ndarray
    initial: dict
    update_interval: float
    abort: AbortInfo | None = None
    broadcast: np.ndarray | None = None     # sync runs: delivery flag of this agent's flood, per exchange round

    def __len__(self) -> int:
        return len(self.k)

    @property
    def aborted(self) -> bool:
        return self.abort is not None

    def z(self) -> np.ndarray:
        """Stacked augmented state ``(x, x_hat, u, u_hat)`` per record."""
        return np.hstack([self.x, self.x_hat, self.u, self.u_hat])

    def z0(self) -> np.ndarray:
        i = self.initial
        return np.concatenate([i["x"], i["x_hat"], i["u"], i["u_hat"]])

    def equals(self, other: "SimTrace") -> bool:
        names = ("k", "x", "y", "u", "u_hat", "x_hat", "theta", "phi", "saturated")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in names) and self.abort == other.abort


class _Recorder:
    def __init__(self, n: int, m: int, horizon: int):
        self.n, self.m = n, m
        self.rows: list[tuple] = []

    def add(self, k, x, y, u, u_hat, x_hat, theta, phi, sat):
        self.rows.append((k, x, y, u, u_hat, x_hat, theta, phi, sat))

    def finish(self, initial: dict, dt: float, abort: AbortInfo | None) -> SimTrace:
        n, m = self.n, self.m
        if self.rows:
            k, x, y, u, uh, xh, th, ph, sat = zip(*self.rows)
            arr = lambda rows, w: np.array(rows, dtype=float).reshape(-1, w)
            return SimTrace(np.array(k, dtype=int), arr(x, n), arr(y, n), arr(u, m), arr(uh, m), arr(xh, n),
                            np.array(th, dtype=np.int8), np.array(ph, dtype=np.int8), np.array(sat, dtype=bool),
                            initial, dt, abort)
        e = np.zeros
        return SimTrace(e(0, int), e((0, n)), e((0, n)), e((0, m)), e((0, m)), e((0, n)),
                        e(0, np.int8), e(0, np.int8), e(0, bool), initial, dt, abort)


class _VelocityFilter:
    """Replaces the velocity half of a measurement by filtered finite differences."""

    def __init__(self, alpha: float, dt: float, y0: np.ndarray):
        self.alpha, self.dt = alpha, dt
        h = len(y0) // 2
        self.h = h
        self.pos_prev = y0[:h].copy()
        self.v = np.zeros(h)

    def first(self, y: np.ndarray) -> np.ndarray:
        out = y.copy()
        out[self.h:] = self.v
        return out

    def __call__(self, y: np.ndarray) -> np.ndarray:
        self.v = estimate_velocities(y[:self.h], self.pos_prev, self.v, self.dt, self.alpha)
        self.pos_prev = y[:self.h].copy()
        out = y.copy()
        out[self.h:] = self.v
        return out


def _saturated(model: SystemModel, u_raw) -> bool:
    return model.input_limit is not None and bool(np.any(np.abs(u_raw) > model.input_limit))


def run_closed_loop(scenario: Scenario, seed: int, agent: int = 0, flags=None) -> SimTrace:
    """Simulate one closed-loop run; identical ``(scenario, seed)`` gives an identical trace.

    ``flags = (theta, phi)`` replaces the network draws by scripted delivery
    indicators indexed by round (entries ``1 .. horizon`` are used).
    """
    model, F = scenario.model, np.asarray(scenario.gain, dtype=float)
    H = scenario.horizon
    x = np.zeros(model.n) if scenario.x0 is None else np.asarray(scenario.x0, dtype=float).copy()
    rng_p, rng_m = noise_rngs(seed, agent)
    rec = _Recorder(model.n, model.m, H)
    dt = scenario.network.update_interval

    if scenario.loop == "local":
        return _run_local(model, F, x, H, rng_p, rng_m, dt, rec)

    if flags is None:
        net = replace(scenario.network, seed=seed)
        thetas = loss_sequence(net, SENSOR, H + 1)
        phis = loss_sequence(net, ACTUATION, H + 1)
    else:
        thetas, phis = (np.asarray(f, dtype=np.int8) for f in flags)
        if len(thetas) < H + 1 or len(phis) < H + 1 or not np.all(np.isin(np.r_[thetas, phis], (0, 1))):
            raise InvalidInputError("scripted flags need horizon + 1 entries of 0 or 1 per channel")

    u = np.zeros(model.m)
    ctrl = ControllerState.initial(model, F)
    initial = {"x": x.copy(), "x_hat": ctrl.x_hat.copy(), "u": u.copy(), "u_hat": ctrl.u_hat_prev.copy()}
    y = measure(model, x, rng_m)
    vf = None
    if scenario.velocity_filter_alpha is not None:
        vf = _VelocityFilter(scenario.velocity_filter_alpha, dt, y)
        y = vf.first(y)
    pipe = Pipeline()
    pipe.emit(SENSOR, 0, y)
    pipe.emit(ACTUATION, 0, ctrl.u_hat)

    abort = None
    for k in range(1, H + 1):
        x, y = step(model, x, u, rng_p, rng_m)
        if vf is not None:
            y = vf(y)
        theta, phi = int(thetas[k]), int(phis[k])
        y_recv, u_recv = pipe.transport(k, theta, phi)
        sat = bool(phi) and _saturated(model, u_recv)
        u = zoh_actuate(phi, u_recv, u, model.input_limit)
        predict(ctrl, theta, y_recv)
        u_next = compute_input(ctrl)
        pipe.emit(SENSOR, k, y)
        pipe.emit(ACTUATION, k, u_next)
        rec.add(k, x, y, u, ctrl.u_hat_prev, ctrl.x_hat, theta, phi, sat)
        bad = model.abort_violation(x)
        if bad is not None:
            abort = AbortInfo(k, bad, float(x[bad]))
            break
    return rec.finish(initial, dt, abort)


def _local_input(F_self, y, coupling=None):
    u = F_self @ y
    if coupling is not None:
        u = u + coupling
    return u


def _run_local(model, F, x, H, rng_p, rng_m, dt, rec) -> SimTrace:
    """Co-located sensor, controller and actuator: ``u(k) = sat(F y(k))`` without delay."""
    y = measure(model, x, rng_m)
    u_raw = _local_input(F, y)
    u = model.saturate(u_raw)
    initial = {"x": x.copy(), "x_hat": y.copy(), "u": u.copy(), "u_hat": u_raw.copy()}
    abort = None
    for k in range(1, H + 1):
        x, y = step(model, x, u, rng_p, rng_m)
        u_raw = _local_input(F, y)
        u = model.saturate(u_raw)
        rec.add(k, x, y, u, u_raw, y, 1, 1, _saturated(model, u_raw))
        bad = model.abort_violation(x)
        if bad is not None:
            abort = AbortInfo(k, bad, float(x[bad]))
            break
    return rec.finish(initial, dt, abort)


def run_sync_scenario(scenario: Scenario, seed: int) -> list[SimTrace]:
    """Agents stabilized locally and coupled through a lossy one-round broadcast.

    Every ``exchange_every`` local steps each agent floods its current
    measurement. A flood is delivered to all other agents one exchange round
    later, or to none of them; receivers keep the last delivered value. Agent
    ``i`` applies ``u_i = F_ii y_i + sum_{j != i} F_ij x_j_latest``. An agent
    leaves the experiment (its trace stops) when it violates its abort bounds;
    the others keep using its last broadcast value.
    """
    s = scenario.sync
    if s is None:
        raise InvalidInputError("scenario has no sync setup")
    N = len(s.models)
    if N < 2:
        raise InvalidInputError("synchronization needs at least two agents")
    E = s.exchange_every(scenario.network.update_interval)
    H = scenario.horizon
    n_rounds = H // E + 2
    mu = scenario.network.mu_theta
    delivered = [bernoulli_sequence(seed, BROADCAST_STREAM_BASE + j, mu, n_rounds) for j in range(N)]

    rngs = [noise_rngs(seed, i) for i in range(N)]
    xs = [np.asarray(s.x0[i], dtype=float).copy() for i in range(N)]
    latest = [np.zeros(s.models[j].n) for j in range(N)]
    recs = [_Recorder(s.models[i].n, s.models[i].m, H) for i in range(N)]
    aborts: list[AbortInfo | None] = [None] * N
    active = [True] * N

    def inputs(ys):
        out = []
        for i in range(N):
            coupling = np.zeros(s.models[i].m)
            for j in range(N):
                if j != i:
                    coupling = coupling + s.gains[i][j] @ latest[j]
            raw = _local_input(s.gains[i][i], ys[i], coupling)
            out.append((raw, s.models[i].saturate(raw)))
        return out

    ys = [measure(s.models[i], xs[i], rngs[i][1]) for i in range(N)]
    initial = []
    us = []
    for i, (raw, u) in enumerate(inputs(ys)):
        initial.append({"x": xs[i].copy(), "x_hat": ys[i].copy(), "u": u.copy(), "u_hat": raw.copy()})
        us.append(u)
    in_flight = [y.copy() for y in ys]

    hold = s.hold
    for k in range(1, H + 1):
        for i in range(N):
            if not active[i]:
                continue
            x_next, y = step(s.models[i], xs[i], us[i], rngs[i][0], rngs[i][1])
            if hold is not None and hold.agent == i and hold.start <= k < hold.end:
                target = np.asarray(hold.state, dtype=float)
                y = y - x_next + target
                x_next = target.copy()
            xs[i], ys[i] = x_next, y
        if k % E == 0:
            r = k // E
            for j in range(N):
                if in_flight[j] is not None and delivered[j][r]:
                    latest[j] = in_flight[j]
                in_flight[j] = ys[j].copy() if active[j] else None
        for i, (raw, u) in enumerate(inputs(ys)):
            if not active[i]:
                continue
            us[i] = u
            recs[i].add(k, xs[i], ys[i], u, raw, ys[i], 1, 1, _saturated(s.models[i], raw))
            bad = s.models[i].abort_violation(xs[i])
            if bad is not None:
                aborts[i] = AbortInfo(k, bad, float(xs[i][bad]))
                active[i] = False
        if not any(active):
            break
    traces = []
    for i in range(N):
        tr = recs[i].finish(initial[i], s.local_interval, aborts[i])
        tr.broadcast = delivered[i][1:H // E + 1].copy()
        traces.append(tr)
    return traces


@dataclass
class Metrics:
    rms: np.ndarray
    input_min: float
    input_max: float
    input_quantiles: dict
    travel: float
    theta_lost: int
    phi_lost: int
    rounds: int
    saturated_steps: int
    aborted: bool

    def as_row(self, state_names=None) -> dict:
        names = state_names or [f"x{i}" for i in range(len(self.rms))]
        row = {f"rms_{nm}": float(v) for nm, v in zip(names, self.rms)}
        row.update(input_min=self.input_min, input_max=self.input_max)
        row.update({f"input_q{q:02d}": v for q, v in self.input_quantiles.items()})
        row.update(travel=self.travel, theta_lost=self.theta_lost, phi_lost=self.phi_lost,
                   rounds=self.rounds, saturated_steps=self.saturated_steps, aborted=int(self.aborted))
        return row


def compute_metrics(trace: SimTrace, position_index: int = 0) -> Metrics:
    """Summary statistics over the recorded (non-aborted) part of a trace."""
    if len(trace) == 0:
        raise InvalidInputError("cannot summarize an empty trace")
    x = trace.x
    rms = np.sqrt(np.mean(x**2, axis=0))
    u = trace.u.reshape(-1)
    qs = np.percentile(u, QUANTILES)
    s = x[:, position_index]
    return Metrics(
        rms=rms,
        input_min=float(u.min()),
        input_max=float(u.max()),
        input_quantiles={q: float(v) for q, v in zip(QUANTILES, qs)},
        travel=float(np.sum(np.abs(np.diff(s)))),
        theta_lost=int(np.sum(trace.theta == 0)),
        phi_lost=int(np.sum(trace.phi == 0)),
        rounds=len(trace),
        saturated_steps=int(np.sum(trace.saturated)),
        aborted=trace.aborted,
    )


AXES = ("loss_rate", "update_interval", "burst_length")


def scenario_at(scenario: Scenario, axis: str, value) -> Scenario:
    """Variant of ``scenario`` with one sweep parameter set to ``value``.

    ``loss_rate`` sets both delivery probabilities to ``1 - value``;
    ``update_interval`` (seconds) re-discretizes and redesigns at the same
    physical duration; ``burst_length`` replaces the burst length.
    """
    if axis == "loss_rate":
        if not 0.0 <= value < 1.0:
            raise InvalidInputError("loss rate must lie in [0, 1)")
        return replace(scenario, network=replace(scenario.network, mu_theta=1.0 - value, mu_phi=1.0 - value))
    if axis == "update_interval":
        return scenario.at_update_interval(float(value))
    if axis == "burst_length":
        b = scenario.network.fault_injection
        if b is None:
            raise InvalidInputError("burst-length sweep needs a burst schedule")
        return replace(scenario, network=replace(scenario.network, fault_injection=replace(b, burst_length=int(value))))
    raise InvalidInputError(f"unknown sweep axis {axis!r}")


def _run_one(args):
    scenario, seed = args
    trace = run_closed_loop(scenario, seed)
    return compute_metrics(trace)


@dataclass
class SweepResult:
    axis: str
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)


def run_sweep(scenario: Scenario, axis: str, values, trials: int | None = None, workers: int = 1) -> SweepResult:
    """Run every (value, seed) pair and aggregate per value.

    Seeds are ``scenario.seeds`` or, with ``trials``, ``seeds[0] + 0 .. trials-1``.
    ``workers > 1`` fans runs out to a process pool; results do not depend on it.
    """
    values = list(values)
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    seeds = tuple(scenario.seeds) if trials is None else tuple(scenario.seeds[0] + i for i in range(trials))
    variants = [scenario_at(scenario, axis, v) for v in values]
    jobs = [(var, sd) for var in variants for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        metrics = [_run_one(j) for j in jobs]

    names = state_names(scenario.model.n)
    result = SweepResult(axis)
    it = iter(metrics)
    for v in values:
        per_value = []
        for sd in seeds:
            m = next(it)
            row = {"value": v, "seed": sd, "survived": int(not m.aborted)}
            row.update(m.as_row(names))
            result.rows.append(row)
            per_value.append(row)
        result.summary.append(_aggregate(v, per_value))
    return result


def _aggregate(value, rows: list[dict]) -> dict:
    out = {"value": value, "trials": len(rows), "survival_fraction": float(np.mean([r["survived"] for r in rows]))}
    for key in rows[0]:
        if key.startswith("rms_") or key == "travel":
            vals = np.array([r[key] for r in rows])
            out[f"mean_{key}"] = float(vals.mean())
            out[f"median_{key}"] = float(np.median(vals))
            out[f"q95_{key}"] = float(np.percentile(vals, 95))
    return out


def state_names(n: int) -> list[str]:
    return ["s", "theta", "s_dot", "theta_dot"] if n == 4 else [f"x{i}" for i in range(n)]


def trace_columns(n: int, m: int) -> list[str]:
    cols = ["k"]
    cols += [f"x{i}" for i in range(n)] + [f"y{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)] + [f"u_hat{i}" for i in range(m)]
    cols += [f"x_hat{i}" for i in range(n)]
    return cols + ["theta", "phi", "saturated", "aborted"]


def write_trace_csv(trace: SimTrace, path) -> None:
    n, m = trace.x.shape[1], trace.u.shape[1]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    last = len(trace) - 1
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(trace_columns(n, m))
        for r in range(len(trace)):
            w.writerow([int(trace.k[r]), *map(repr, trace.x[r].tolist()), *map(repr, trace.y[r].tolist()),
                        *map(repr, trace.u[r].tolist()), *map(repr, trace.u_hat[r].tolist()),
                        *map(repr, trace.x_hat[r].tolist()), int(trace.theta[r]), int(trace.phi[r]),
                        int(trace.saturated[r]), int(trace.aborted and r == last)])


def write_rows_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        if not rows:
            return
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def _log_mean_exp(v: np.ndarray) -> float:
    top = np.max(v)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.mean(np.exp(v - top))))


def _flag_log_ratios(mu: float, q: float) -> tuple[float, float]:
    """Log likelihood ratios of a delivered / lost flag under target ``mu`` and proposal ``q``."""
    with np.errstate(divide="ignore"):
        return float(np.log(mu) - np.log(q)), float(np.log1p(-mu) - np.log1p(-q))


def monte_carlo_second_moment(A, B, F, mu_theta: float, mu_phi: float, x0, trials: int, horizon: int,
                              seed: int = 0, proposal: tuple[float, float] | None = None) -> np.ndarray:
    """Monte Carlo estimate of ``log E||z(k)||^2`` for ``k = 0 .. horizon`` (noise-free, unsaturated).

    Plant, actuator and controller equations are propagated for all trials at
    once, starting from ``x = x0`` and zero controller memory; no transition
    matrices are formed.

    With ``proposal = (q_theta, q_phi)`` the delivery flags are drawn with
    those probabilities and each trajectory is weighted by its likelihood
    ratio (importance sampling). The estimate stays unbiased for every
    proposal; a proposal that favours the loss patterns dominating the
    second moment is needed when those patterns are too rare to appear in
    ``trials`` plain samples (loops that are almost surely but not mean-square
    stable). States are renormalized every step and tracked on a log scale,
    so rapidly growing trajectories do not overflow.
    """
    A, B, F = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, F))
    n, m = B.shape
    mu = (float(mu_theta), float(mu_phi))
    q = mu if proposal is None else tuple(float(v) for v in proposal)
    for c in range(2):
        if not 0.0 <= mu[c] <= 1.0 or not 0.0 < q[c] < 1.0 and q[c] != mu[c]:
            raise InvalidInputError("proposal probabilities must lie in (0, 1) unless equal to the target")
    lr = [_flag_log_ratios(mu[c], q[c]) if q[c] != mu[c] else (0.0, 0.0) for c in range(2)]
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), 0xC0FFEE]))

    x = np.tile(np.asarray(x0, dtype=float).reshape(1, n), (trials, 1))
    xh = np.zeros((trials, n))
    u = np.zeros((trials, m))
    uh = np.zeros((trials, m))
    log_w = np.zeros(trials)
    log_scale = np.zeros(trials)

    def sq_norm():
        return np.sum(x**2, 1) + np.sum(xh**2, 1) + np.sum(u**2, 1) + np.sum(uh**2, 1)

    out = np.empty(horizon + 1)
    with np.errstate(divide="ignore"):
        out[0] = _log_mean_exp(np.log(sq_norm()))
        for k in range(1, horizon + 1):
            th = rng.random(trials) < q[0]
            ph = rng.random(trials) < q[1]
            log_w += np.where(th, lr[0][0], lr[0][1]) + np.where(ph, lr[1][0], lr[1][1])
            u_sent = (xh @ A.T + uh @ B.T) @ F.T       # input computed last round, arriving now
            x_new = x @ A.T + u @ B.T
            xh_new = np.where(th[:, None], x @ A.T, xh @ A.T) + uh @ B.T
            u = np.where(ph[:, None], u_sent, u)
            x, xh, uh = x_new, xh_new, u_sent
            nrm = np.sqrt(sq_norm())
            nrm = np.where(nrm > 0.0, nrm, 1.0)
            x, xh, u, uh = x / nrm[:, None], xh / nrm[:, None], u / nrm[:, None], uh / nrm[:, None]
            log_scale += 2.0 * np.log(nrm)
            out[k] = _log_mean_exp(log_w + log_scale + np.log(sq_norm()))
    return out


def select_proposal(A, B, F, mu_theta: float, mu_phi: float, x0, horizon: int, seed: int = 0,
                    grid=np.linspace(0.05, 0.95, 10), pilot_trials: int = 500) -> tuple[float, float]:
    """Constant importance-sampling proposal with the largest pilot estimate of ``E||z(horizon)||^2``.

    Channels whose target probability is 0 or 1 keep it unchanged.
    """
    best, arg = -np.inf, (mu_theta, mu_phi)
    g_theta = grid if 0.0 < mu_theta < 1.0 else [mu_theta]
    g_phi = grid if 0.0 < mu_phi < 1.0 else [mu_phi]
    for i, qt in enumerate(g_theta):
        for j, qp in enumerate(g_phi):
            est = monte_carlo_second_moment(A, B, F, mu_theta, mu_phi, x0, pilot_trials, horizon,
                                            seed=seed + 7919 * (1 + i * len(g_phi) + j), proposal=(qt, qp))[-1]
            if est > best:
                best, arg = est, (float(qt), float(qp))
    return arg
