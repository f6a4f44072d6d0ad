"""
Scenario configuration files.

A config is an INI file (``configparser`` syntax, ``#`` comments). Units
are part of the key names. Unknown sections and keys are rejected, missing
keys take the defaults listed in ``SCHEMA``. Matrices are written row by row
with ``;`` between rows and ``,`` between entries, e.g. ``1, 1; 0, 1``.

``parse_config(serialize_config(cfg)) == cfg`` holds for every parsed
config: floats are serialized with ``repr``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import SyncWeights, design_stabilizing_gain, design_sync_gains, load_gain_csv
from .errors import InvalidInputError
from .network import BurstSchedule, JitterParams, NetworkModel
from .plant import CartPoleParams, SystemModel
from .sim import KINDS, Hold, PlantDesign, Scenario, SyncSetup

REQUIRED = object()


def _float(text: str) -> float:
    v = float(text)
    if not np.isfinite(v):
        raise ValueError("not finite")
    return v


def _optional_float(text: str):
    return None if text.strip().lower() == "none" else _float(text)


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


def _floats(text: str) -> tuple:
    return tuple(_float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _complexes(text: str) -> tuple:
    out = []
    for t in text.split(","):
        t = t.strip().replace(" ", "")
        if t:
            c = complex(t)
            out.append(c.real if c.imag == 0 else c)
    return tuple(out)


def _matrix(text: str) -> tuple:
    rows = tuple(_floats(r) for r in text.split(";") if r.strip())
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("matrix rows must be non-empty and of equal length")
    return rows


def _optional_matrix(text: str):
    return None if text.strip().lower() == "none" else _matrix(text)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int, str)):
        return str(value)
    if isinstance(value, complex):
        return repr(value).strip("()")
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(", ".join(_fmt(v) for v in row) for row in value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    raise TypeError(f"cannot serialize {value!r}")


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "kind": (_choice(*KINDS), REQUIRED),
        "horizon_steps": (_int, REQUIRED),
        "seeds": (_ints, (0,)),
        "trials": (_int, 1),
        "loop": (_choice("remote", "local"), "remote"),
        "initial_state": (_floats, ()),
    },
    "plant": {
        "model": (_choice("cartpole", "matrices"), "cartpole"),
        "cart_mass_kg": (_float, 0.94),
        "pole_mass_kg": (_float, 0.23),
        "pole_length_m": (_float, 0.3302),
        "gravity_m_per_s2": (_float, 9.81),
        "motor_gain_m_per_s2_per_v": (_float, 1.83),
        "damping_per_s": (_float, 8.2),
        "process_noise_psd": (_floats, ()),
        "measurement_noise_std": (_floats, ()),
        "track_limit_m": (_optional_float, 0.25),
        "angle_limit_rad": (_optional_float, None),
        "a_matrix": (_optional_matrix, None),
        "b_matrix": (_optional_matrix, None),
        "process_noise_cov": (_optional_matrix, None),
        "measurement_noise_cov": (_optional_matrix, None),
        "state_abort_bounds": (_floats, ()),
        "input_limit_v": (_optional_float, 10.0),
        "velocity_filter_alpha": (_optional_float, None),
    },
    "network": {
        "update_interval_ms": (_float, REQUIRED),
        "mu_theta": (_float, 1.0),
        "mu_phi": (_float, 1.0),
        "seed": (_int, 0),
        "delay_ratio": (_int, 2),
        "burst_period_s": (_optional_float, None),
        "burst_length_msgs": (_int, 0),
        "burst_applies_to": (_choice("sensor", "actuation", "both"), "both"),
    },
    "controller": {
        "method": (_choice("pole_placement", "lqr"), "pole_placement"),
        "poles": (_complexes, (0.8, 0.85, 0.9, 0.9)),
        "pole_mapping": (_choice("continuous", "discrete"), "continuous"),
        "pole_reference_interval_ms": (_float, 40.0),
        "q_matrix": (_optional_matrix, None),
        "r_matrix": (_optional_matrix, None),
        "gain_csv": (_str, ""),
    },
    "sync": {
        "agents": (_int, 2),
        "local_interval_ms": (_float, 10.0),
        "q_agent": (_matrix, REQUIRED),
        "r_agent": (_matrix, REQUIRED),
        "q_sync": (_matrix, REQUIRED),
        "initial_positions_m": (_floats, ()),
        "hold_agent": (_int, -1),
        "hold_start_s": (_float, 0.0),
        "hold_end_s": (_float, 0.0),
        "hold_position_m": (_float, 0.0),
    },
    "sweep": {
        "axis": (_choice("loss_rate", "update_interval", "burst_length"), REQUIRED),
        "values": (_floats, REQUIRED),
        "workers": (_int, 1),
        "require_survival": (_bool, False),
    },
    "analysis": {
        "critical_probability": (_bool, False),
        "channel": (_choice("theta", "phi", "both_equal"), "both_equal"),
        "tolerance": (_float, 1e-6),
        "verdict_margin": (_float, 1e-9),
    },
    "jitter": {
        "e_ref_us": (_float, 10.0),
        "sync_clock_mhz": (_float, 48.0),
        "rho_ap_ppm": (_float, 50.0),
        "rho_cp_ppm": (_float, 50.0),
        "e_task_us": (_float, 10.0),
        "t_end_ms": (_float, 100.0),
    },
    "output": {
        "dir": (_str, "out"),
        "write_traces": (_bool, True),
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    values: dict = field(default_factory=dict)   # section -> {key: parsed value}

    def has(self, section: str) -> bool:
        return section in self.values

    def section(self, section: str) -> dict:
        if section in self.values:
            return self.values[section]
        return {k: d for k, (_, d) in SCHEMA[section].items() if d is not REQUIRED}

    def get(self, section: str, key: str):
        return self.section(section)[key]

    def with_value(self, section: str, key: str, value) -> "ScenarioConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals.setdefault(section, dict(self.section(section)))[key] = value
        return replace(self, values=vals)


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   empty_lines_in_values=False)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise InvalidInputError(f"{source}: {exc}") from exc
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise InvalidInputError(f"{source}: unknown section [{sec}]")
        schema = SCHEMA[sec]
        out = {}
        for key, raw in cp.items(sec):
            if key not in schema:
                raise InvalidInputError(f"{source}: unknown key {key!r} in [{sec}]")
            try:
                out[key] = schema[key][0](raw)
            except (ValueError, TypeError) as exc:
                raise InvalidInputError(f"{source}: bad value for {sec}.{key} = {raw!r}: {exc}") from exc
        for key, (_, default) in schema.items():
            if key not in out:
                if default is REQUIRED:
                    raise InvalidInputError(f"{source}: missing required key {key!r} in [{sec}]")
                out[key] = default
        values[sec] = out
    for sec in ("scenario", "network"):
        if sec not in values:
            raise InvalidInputError(f"{source}: missing section [{sec}]")
    cfg = ScenarioConfig(values)
    validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def serialize_config(cfg: ScenarioConfig) -> str:
    lines = []
    for sec, vals in cfg.values.items():
        lines.append(f"[{sec}]")
        for key, v in vals.items():
            lines.append(f"{key} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)


def validate(cfg: ScenarioConfig) -> None:
    net = cfg.section("network")
    for key in ("mu_theta", "mu_phi"):
        if not 0.0 <= net[key] <= 1.0:
            raise InvalidInputError(f"network.{key} must lie in [0, 1], got {net[key]}")
    if net["delay_ratio"] != 2:
        raise InvalidInputError(
            f"network.delay_ratio = {net['delay_ratio']} is not supported: the round pipeline fixes "
            "the end-to-end delay at two update intervals"
        )
    if net["update_interval_ms"] <= 0:
        raise InvalidInputError("network.update_interval_ms must be > 0")
    if (net["burst_period_s"] is None) != (net["burst_length_msgs"] == 0):
        raise InvalidInputError("burst_period_s and burst_length_msgs must be given together")
    kind = cfg.get("scenario", "kind")
    if kind == "multi_agent_sync" and not cfg.has("sync"):
        raise InvalidInputError("multi_agent_sync needs a [sync] section")
    if kind in ("loss_sweep", "interval_sweep") and not cfg.has("sweep"):
        raise InvalidInputError(f"{kind} needs a [sweep] section")
    if kind == "burst_test" and net["burst_period_s"] is None:
        raise InvalidInputError("burst_test needs burst_period_s and burst_length_msgs")
    plant = cfg.section("plant")
    if plant["model"] == "matrices" and (plant["a_matrix"] is None or plant["b_matrix"] is None):
        raise InvalidInputError("plant.model = matrices needs a_matrix and b_matrix")


# ---------------------------------------------------------------- builders

def build_design(cfg: ScenarioConfig) -> PlantDesign | None:
    """Re-discretizable cart-pole recipe, or None for an explicit-matrix plant."""
    p, c = cfg.section("plant"), cfg.section("controller")
    if p["model"] != "cartpole":
        return None
    try:
        params = CartPoleParams(p["cart_mass_kg"], p["pole_mass_kg"], p["pole_length_m"], p["gravity_m_per_s2"],
                                p["motor_gain_m_per_s2_per_v"], p["damping_per_s"],
                                cfg.get("network", "update_interval_ms") / 1000.0)
    except InvalidInputError as exc:
        raise InvalidInputError(f"[plant]: {exc}") from exc
    ref = c["pole_reference_interval_ms"] / 1000.0 if c["pole_mapping"] == "continuous" else None
    return PlantDesign(
        params=params,
        process_noise_psd=p["process_noise_psd"] or None,
        measurement_noise_std=p["measurement_noise_std"] or None,
        input_limit=p["input_limit_v"],
        track_limit=p["track_limit_m"],
        angle_limit=p["angle_limit_rad"],
        method=c["method"],
        poles=tuple(c["poles"]),
        pole_reference_interval=ref,
        Q=c["q_matrix"],
        R=c["r_matrix"],
    )


def build_model(cfg: ScenarioConfig, update_interval: float | None = None) -> SystemModel:
    h = cfg.get("network", "update_interval_ms") / 1000.0 if update_interval is None else update_interval
    design = build_design(cfg)
    if design is not None:
        return design.model(h)
    p = cfg.section("plant")
    A = np.array(p["a_matrix"], dtype=float)
    B = np.array(p["b_matrix"], dtype=float)
    n = A.shape[0]
    Sp = None if p["process_noise_cov"] is None else np.array(p["process_noise_cov"])
    Sm = None if p["measurement_noise_cov"] is None else np.array(p["measurement_noise_cov"])
    bounds = np.array(p["state_abort_bounds"]) if p["state_abort_bounds"] else None
    if bounds is not None and bounds.shape != (n,):
        raise InvalidInputError("state_abort_bounds needs one entry per state")
    return SystemModel(A, B, Sp, Sm, p["input_limit_v"], bounds)


def build_gain(cfg: ScenarioConfig, model: SystemModel, update_interval: float | None = None) -> np.ndarray:
    c = cfg.section("controller")
    if c["gain_csv"]:
        F = load_gain_csv(c["gain_csv"])
        if F.shape != (model.m, model.n):
            raise InvalidInputError(f"gain in {c['gain_csv']} has shape {F.shape}, expected {(model.m, model.n)}")
        return F
    h = cfg.get("network", "update_interval_ms") / 1000.0 if update_interval is None else update_interval
    design = build_design(cfg)
    if design is not None:
        return design.gain(model, h)
    if c["method"] == "lqr":
        if c["q_matrix"] is None or c["r_matrix"] is None:
            raise InvalidInputError("lqr needs controller.q_matrix and controller.r_matrix")
        return design_stabilizing_gain(model, "lqr", Q=np.array(c["q_matrix"]), R=np.array(c["r_matrix"]))
    return design_stabilizing_gain(model, "pole_placement", poles=np.array(c["poles"], dtype=complex))


def build_network(cfg: ScenarioConfig, seed: int | None = None) -> NetworkModel:
    n = cfg.section("network")
    burst = None
    if n["burst_period_s"] is not None:
        burst = BurstSchedule(n["burst_period_s"], n["burst_length_msgs"], n["burst_applies_to"])
    return NetworkModel(n["update_interval_ms"] / 1000.0, n["mu_theta"], n["mu_phi"],
                        n["seed"] if seed is None else seed, n["delay_ratio"], burst)


def build_jitter(cfg: ScenarioConfig) -> JitterParams:
    j = cfg.section("jitter")
    return JitterParams(
        e_ref_hat=j["e_ref_us"] * 1e-6,
        e_sync_hat=1.0 / (j["sync_clock_mhz"] * 1e6),
        rho_ap_hat=j["rho_ap_ppm"] * 1e-6,
        rho_cp_hat=j["rho_cp_ppm"] * 1e-6,
        e_task_hat=j["e_task_us"] * 1e-6,
        T_end_tilde=j["t_end_ms"] * 1e-3,
    )


def seeds_for(cfg: ScenarioConfig, seed: int | None = None, trials: int | None = None) -> tuple:
    """Seeds of the run: the configured list, or ``base, base+1, ...`` when a base or count is given."""
    s = cfg.section("scenario")
    if seed is None and trials is None:
        return tuple(s["seeds"])
    base = s["seeds"][0] if seed is None else seed
    count = s["trials"] if trials is None else trials
    if count < 1:
        raise InvalidInputError("trials must be >= 1")
    return tuple(base + i for i in range(count))


def build_sync(cfg: ScenarioConfig, design: PlantDesign | None) -> tuple[SyncSetup, SystemModel]:
    s = cfg.section("sync")
    if design is None:
        raise InvalidInputError("synchronization scenarios need the cart-pole plant")
    N = s["agents"]
    h = s["local_interval_ms"] / 1000.0
    model = design.model(h)
    q_agent, r_agent, q_sync = (np.array(s[k], dtype=float) for k in ("q_agent", "r_agent", "q_sync"))
    gains = design_sync_gains([model] * N, SyncWeights((q_agent,) * N, (r_agent,) * N, q_sync))
    pos = s["initial_positions_m"] or (0.0,) * N
    if len(pos) != N:
        raise InvalidInputError(f"initial_positions_m needs {N} entries")
    x0 = tuple(np.array([p, 0.0, 0.0, 0.0]) for p in pos)
    hold = None
    if s["hold_agent"] >= 0:
        if s["hold_agent"] >= N:
            raise InvalidInputError("hold_agent out of range")
        hold = Hold(s["hold_agent"], int(round(s["hold_start_s"] / h)), int(round(s["hold_end_s"] / h)),
                    np.array([s["hold_position_m"], 0.0, 0.0, 0.0]))
    return SyncSetup((model,) * N, tuple(tuple(row) for row in gains), h, x0, hold), model


def build_scenario(cfg: ScenarioConfig, seed: int | None = None, trials: int | None = None) -> Scenario:
    sc = cfg.section("scenario")
    design = build_design(cfg)
    network = build_network(cfg)
    seeds = seeds_for(cfg, seed, trials)
    sync = None
    if sc["kind"] == "multi_agent_sync":
        sync, model = build_sync(cfg, design)
        gain = sync.gains[0][0]
    else:
        model = build_model(cfg)
        gain = build_gain(cfg, model)
    x0 = np.array(sc["initial_state"]) if sc["initial_state"] else None
    return Scenario(
        kind=sc["kind"],
        model=model,
        gain=gain,
        network=network,
        horizon=sc["horizon_steps"],
        seeds=seeds,
        x0=x0,
        loop=sc["loop"],
        design=design,
        velocity_filter_alpha=cfg.get("plant", "velocity_filter_alpha"),
        sync=sync,
    )
