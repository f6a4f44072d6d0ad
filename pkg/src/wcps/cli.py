"""
Command-line front end.

    wcps design   --config FILE [--out DIR]
    wcps analyze  --config FILE [--out DIR]
    wcps simulate --config FILE [--seed N] [--trials N] [--out DIR]
    wcps sweep    --config FILE [--seed N] [--trials N] [--out DIR]
    wcps jitter   [--config FILE] [--e-ref-us X ...]

Exit codes: 0 success, 1 invalid input or design failure, 2 analysis
infeasible (loop not mean-square stable, no stability crossing), 3 a
mandatory simulation run aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    build_design,
    build_gain,
    build_jitter,
    build_model,
    build_scenario,
    load_config,
    seeds_for,
)
from .controller import save_gain_csv
from .errors import AnalysisError, BracketError, InfeasibleError, WcpsError
from .network import JitterParams, jitter_bound, jitter_terms
from .numerics import eig
from .sim import (
    compute_metrics,
    run_closed_loop,
    run_sweep,
    run_sync_scenario,
    state_names,
    write_rows_csv,
    write_trace_csv,
)
from .stability import assemble_augmented, check_mss, critical_probability

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("wcps")


def _out_dir(args, cfg) -> Path | None:
    if args.out is not None:
        d = Path(args.out)
    elif cfg is not None and cfg.has("output"):
        d = Path(cfg.get("output", "dir"))
    else:
        return None
    d.mkdir(parents=True, exist_ok=True)
    return d


def _fmt_eigs(values) -> str:
    vals = sorted(values, key=lambda z: (round(z.real, 9), round(z.imag, 9)))
    return ", ".join(f"{z.real:.6f}" if abs(z.imag) < 1e-9 else f"{z.real:.6f}{z.imag:+.6f}j" for z in vals)


def cmd_design(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    kind = cfg.get("scenario", "kind")
    if kind == "multi_agent_sync":
        sc = build_scenario(cfg)
        s = sc.sync
        print(f"method: centralized lqr over {len(s.models)} agents at {s.local_interval * 1000:g} ms")
        for i, row in enumerate(s.gains):
            for j, blk in enumerate(row):
                print(f"F[{i}][{j}] = {np.array2string(blk, precision=6, max_line_width=200)}")
                if out is not None:
                    save_gain_csv(out / f"gain_{i}_{j}.csv", blk)
        return EXIT_OK
    model = build_model(cfg)
    F = build_gain(cfg, model)
    c = cfg.section("controller")
    method = "loaded from " + c["gain_csv"] if c["gain_csv"] else c["method"]
    design = build_design(cfg)
    print(f"method: {method}")
    if design is not None and design.pole_reference_interval is not None and c["method"] == "pole_placement":
        print(f"pole mapping: continuous-time equivalent of the poles at {design.pole_reference_interval * 1000:g} ms")
    print(f"update interval: {cfg.get('network', 'update_interval_ms'):g} ms")
    print(f"F = {np.array2string(F, precision=8, max_line_width=200)}")
    print(f"closed-loop eigenvalues: {_fmt_eigs(eig(model.A + model.B @ F))}")
    if out is not None:
        save_gain_csv(out / "gain.csv", F)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    model = build_model(cfg)
    F = build_gain(cfg, model)
    net = cfg.section("network")
    an = cfg.section("analysis")
    aug = assemble_augmented(model, F, net["mu_theta"], net["mu_phi"])
    verdict = check_mss(aug, tol=an["verdict_margin"])
    record = {
        "is_mss": verdict.is_mss,
        "status": verdict.status,
        "rho": verdict.rho,
        "mu_theta": net["mu_theta"],
        "mu_phi": net["mu_phi"],
        "update_interval_ms": net["update_interval_ms"],
        "certificate": None,
    }
    if verdict.is_mss:
        record["lmi_residual_max_abs_error"] = float(np.max(np.abs(verdict.lmi_residual(aug) + np.eye(aug.d))))
    if verdict.is_mss and out is not None:
        path = out / "certificate.csv"
        np.savetxt(path, verdict.certificate, delimiter=",", fmt="%.17g")
        record["certificate"] = str(path)
    if an["critical_probability"]:
        record["critical_probability"] = critical_probability(model, F, an["channel"], an["tolerance"])
        record["critical_channel"] = an["channel"]
    text = json.dumps(record, indent=2)
    print(text)
    if out is not None:
        (out / "verdict.json").write_text(text + "\n")
    return EXIT_OK if verdict.is_mss else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    sc = build_scenario(cfg, seed=args.seed, trials=args.trials)
    write = out is not None and cfg.get("output", "write_traces") if cfg.has("output") else out is not None
    rows = []
    aborted = False
    for seed in sc.seeds:
        traces = run_sync_scenario(sc, seed) if sc.kind == "multi_agent_sync" else [run_closed_loop(sc, seed)]
        for agent, tr in enumerate(traces):
            m = compute_metrics(tr)
            row = {"seed": seed, "agent": agent}
            row.update(m.as_row(state_names(tr.x.shape[1])))
            if tr.aborted:
                aborted = True
                row["abort_step"] = tr.abort.step
                log.warning("seed %d agent %d aborted at step %d (state %d = %.4g)",
                            seed, agent, tr.abort.step, tr.abort.state_index, tr.abort.value)
            else:
                row["abort_step"] = -1
            rows.append(row)
            if write:
                suffix = f"_agent{agent}" if sc.kind == "multi_agent_sync" else ""
                write_trace_csv(tr, out / f"trace_seed{seed}{suffix}.csv")
    if out is not None:
        write_rows_csv(rows, out / "metrics.csv")
    _print_rows(rows, ("seed", "agent", "rounds", "aborted", "rms_theta", "rms_s", "travel", "input_min", "input_max"))
    return EXIT_ABORT if aborted else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if not cfg.has("sweep"):
        raise WcpsError("config has no [sweep] section")
    out = _out_dir(args, cfg)
    sc = build_scenario(cfg, seed=args.seed, trials=args.trials)
    sw = cfg.section("sweep")
    values = sw["values"]
    if sw["axis"] == "update_interval":
        values = [v / 1000.0 for v in values]      # configured in ms
    elif sw["axis"] == "burst_length":
        values = [int(v) for v in values]
    res = run_sweep(sc, sw["axis"], values, workers=sw["workers"])
    if out is not None:
        write_rows_csv(res.rows, out / "sweep_rows.csv")
        write_rows_csv(res.summary, out / "sweep_summary.csv")
    cols = [k for k in ("value", "trials", "survival_fraction", "mean_rms_theta", "mean_rms_s", "mean_travel")
            if k in res.summary[0]]
    _print_rows(res.summary, cols)
    if sw["require_survival"] and any(r["survived"] == 0 for r in res.rows):
        return EXIT_ABORT
    return EXIT_OK


def cmd_jitter(args) -> int:
    p = build_jitter(load_config(args.config)) if args.config else JitterParams()
    overrides = {
        "e_ref_hat": None if args.e_ref_us is None else args.e_ref_us * 1e-6,
        "e_sync_hat": None if args.sync_clock_mhz is None else 1.0 / (args.sync_clock_mhz * 1e6),
        "rho_ap_hat": None if args.rho_ap_ppm is None else args.rho_ap_ppm * 1e-6,
        "rho_cp_hat": None if args.rho_cp_ppm is None else args.rho_cp_ppm * 1e-6,
        "e_task_hat": None if args.e_task_us is None else args.e_task_us * 1e-6,
        "T_end_tilde": None if args.t_end_ms is None else args.t_end_ms * 1e-3,
    }
    p = replace(p, **{k: v for k, v in overrides.items() if v is not None})
    for name, v in jitter_terms(p).items():
        print(f"{name:22s} {v * 1e6:12.6f} us")
    print(f"{'jitter_bound':22s} {jitter_bound(p) * 1e6:12.6f} us")
    return EXIT_OK


def _print_rows(rows, cols) -> None:
    if not rows:
        return
    print("  ".join(f"{c:>14s}" for c in cols))
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c, "")
            cells.append(f"{v:14.6g}" if isinstance(v, float) else f"{v!s:>14s}")
        print("  ".join(cells))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wcps", description="Wireless control co-simulation and stability certification.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--config", required=True, help="scenario config (INI)")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        if seeds:
            p.add_argument("--seed", type=int, help="base seed; runs use seed, seed+1, ...")
            p.add_argument("--trials", type=int, help="number of seeds")

    common(sub.add_parser("design", help="design the feedback gain"))
    common(sub.add_parser("analyze", help="mean-square stability verdict and certificate"))
    common(sub.add_parser("simulate", help="closed-loop simulation"), seeds=True)
    common(sub.add_parser("sweep", help="parameter sweep"), seeds=True)
    j = sub.add_parser("jitter", help="worst-case jitter bound")
    j.add_argument("--config", help="config with a [jitter] section")
    j.add_argument("--e-ref-us", type=float)
    j.add_argument("--sync-clock-mhz", type=float)
    j.add_argument("--rho-ap-ppm", type=float)
    j.add_argument("--rho-cp-ppm", type=float)
    j.add_argument("--e-task-us", type=float)
    j.add_argument("--t-end-ms", type=float)
    return ap


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "jitter": cmd_jitter}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InfeasibleError, BracketError, AnalysisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except WcpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
