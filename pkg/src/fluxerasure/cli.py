"""Command-line front end.

Usage: ``fluxerasure <subcommand> [--config FILE] [--seed N] [--shots N]
[--out DIR] [--threads N] [subcommand options]``.

Exit codes: 0 success, 1 usage error, 2 configuration or input validation
error, 3 numerical failure.  Output files are named
``<subcommand>-<hash>.<ext>`` where the hash covers the resolved
configuration and the subcommand options, so reruns overwrite their own
files and nothing else.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import emit
from . import rng as _rng
from .config import ConfigError, RunConfig, grid_values, load_config, with_overrides
from .dynamics import (PopulationState, characteristic_times, ensemble_occupations, evolve_populations,
                       lz_error, lz_error_log10, RampSpec, sample_trajectory)
from .fit import DecayDataset, FitError, fit_dephasing, fit_ramsey, fit_rates
from .readout import (calibrate_nonqnd, dephasing_error, dephasing_rate, midpoint_fidelity, qnd_error,
                      separation_snr)
from .spectrum import ConvergenceError, diagonalize, sweep_flux
from .table import Table
from .units import UnitError, parse_tagged

OUT_ENV = "FLUXERASURE_OUT"
DEFAULT_OUT = "fluxerasure_out"

# which config key --shots overrides, per subcommand
SHOTS_KEY = {
    "erasure-sim": "experiment.shots",
    "lifetime-vs-tec": "experiment.shots",
    "decay": "decay.shots",
    "qnd-map": "qnd.shots",
    "ramsey": "ramsey.stochastic_shots",
}


class UsageError(Exception):
    pass


class InputError(ValueError):
    """Invalid data or option value; the message starts with the flag name."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# subcommands; each returns (emitter-ready outputs) by writing through ``em``


def cmd_spectrum(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    n = cfg["circuit"]["n_levels"]
    spec = diagonalize(cfg.circuit(), max(n, 6))
    cols = {"level": np.arange(n), "omega": spec.levels[:n]}
    units = {"level": "1", "omega": "rad/s"}
    if spec.parity is not None:
        cols["parity"] = np.array(spec.parity[:n])
        units["parity"] = "1"
    for j in range(n):
        cols[f"n_{j}"] = spec.charge_elements[:n, j]
        units[f"n_{j}"] = "1"
    em.table(Table(cols, units))
    return {
        "omega_01": spec.levels[1], "omega_12": spec.levels[2] - spec.levels[1],
        "omega_02": spec.levels[2], "n_01": spec.charge_elements[0, 1],
        "n_02": spec.charge_elements[0, 2], "n_12": spec.charge_elements[1, 2],
        "basis_used": spec.basis_used, "parity": spec.parity[:n] if spec.parity else None,
    }


def cmd_flux_sweep(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    tab = sweep_flux(cfg.circuit(), grid_values(cfg["sweep"]["flux"]), args.threads)
    em.table(tab)
    em.write("svg", emit.line_svg(tab["flux"], {"omega_12": tab["omega_12"]}, "flux (Phi0)", "omega_12 (rad/s)",
                                  "omega_12 versus flux"), "omega12")
    em.write("svg", emit.line_svg(tab["flux"], {"n_01": tab["n_01"], "n_12": tab["n_12"], "n_02": tab["n_02"]},
                                  "flux (Phi0)", "|n_ij|", "charge matrix elements"), "charge")
    return {"points": len(tab)}


def cmd_chevron(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    from .driven import chevron_scan

    d = cfg["drive"]
    spec = diagonalize(cfg.circuit(), max(d["n_levels"], 6)).truncated(d["n_levels"])
    amps = grid_values(d["amplitudes"])
    dets = grid_values(d["detunings"])
    p2 = chevron_scan(spec, d["duration"], amps, dets, d["repeats"], d["refine"], args.threads)
    units = {"amplitude": "rad/s", "detuning": "rad/s", "p2": "1"}
    em.write("csv", emit.matrix_csv(p2, "amplitude", amps, "detuning", dets, "p2", units, em.config_hash))
    em.write("svg", emit.heatmap_svg(p2, "detuning", "amplitude", "P2 after the drive"))
    best = np.argmax(p2, axis=1)
    return {"p2_max": float(p2.max()), "p2_min": float(p2.min()),
            "argmax_detuning": [float(dets[k]) for k in best],
            "carrier_center": spec.levels[2] / 2}


def cmd_decay(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    d = cfg["decay"]
    rates = cfg.rates()
    times = grid_values(d["times"])
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ConfigError("decay.times", "times must be non-negative and increasing")
    rows = {k: [] for k in ("init_state", "t", "p0", "p1", "p2")}
    mc = {k: [] for k in ("mc_p0", "mc_p1", "mc_p2")}
    for init in (1, 2):
        pops = [evolve_populations(rates, PopulationState.basis(init), t).as_array() for t in times]
        occ = ensemble_occupations(rates, init, times, d["shots"], cfg.master_seed, ensemble=init) \
            if d["shots"] > 0 else None
        for k, t in enumerate(times):
            rows["init_state"].append(init)
            rows["t"].append(t)
            for s in range(3):
                rows[f"p{s}"].append(pops[k][s])
                if occ is not None:
                    mc[f"mc_p{s}"].append(occ[k, s])
    cols = {**rows, **(mc if d["shots"] > 0 else {})}
    units = {k: ("s" if k == "t" else "1") for k in cols}
    tab = Table(cols, units)
    em.table(tab)
    mask = np.asarray(rows["init_state"]) == 2
    em.write("svg", emit.line_svg(times, {f"p{s}": np.asarray(rows[f"p{s}"])[mask] for s in range(3)},
                                  "t (s)", "population", "decay from |2>"))
    if d["trajectories"] > 0:
        traj = {"init_state": [], "shot": [], "jump_time": [], "state": []}
        for init in (1, 2):
            for shot in range(d["trajectories"]):
                path = sample_trajectory(rates, init, float(times[-1]),
                                         _rng.RandomStream(cfg.master_seed, shot, _rng.TAG_JUMP, 16 + init))
                for t, s in [(0.0, init)] + list(path.jumps):
                    traj["init_state"].append(init)
                    traj["shot"].append(shot)
                    traj["jump_time"].append(t)
                    traj["state"].append(s)
        em.table(Table(traj, {"init_state": "1", "shot": "1", "jump_time": "s", "state": "1"}), "trajectories")
    ct = characteristic_times(rates)
    return {"t_erasure_state": ct.erasure_state, "t_erasure_onset": ct.erasure_onset, "t_slowest": ct.slowest}


def cmd_lz(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    ramp = cfg.ramp()
    changes = {}
    try:
        if args.gap is not None:
            changes["frequency_gap"] = parse_tagged(args.gap, "--gap")
        if args.span is not None:
            changes["detuning_span"] = parse_tagged(args.span, "--span")
    except UnitError as exc:
        raise InputError(str(exc)) from None
    if args.duration is not None:
        changes["ramp_duration"] = args.duration
    if args.span_factor is not None:
        changes["span_factor"] = args.span_factor
    try:
        ramp = RampSpec(**{**ramp.__dict__, **changes})
    except ValueError as exc:
        raise InputError(f"--gap/--span/--duration: {exc}") from None
    durations = np.geomspace(ramp.ramp_duration / 1e3, ramp.ramp_duration * 1e3, 61)
    eps, logs = [], []
    for t in durations:
        r = RampSpec(ramp.frequency_gap, ramp.detuning_span, float(t), ramp.span_factor)
        eps.append(lz_error(r))
        logs.append(lz_error_log10(r))
    tab = Table({"ramp_duration": durations, "epsilon_na": np.array(eps), "log10_epsilon_na": np.array(logs)},
                {"ramp_duration": "s", "epsilon_na": "1", "log10_epsilon_na": "1"})
    em.table(tab)
    em.write("svg", emit.line_svg(np.log10(durations), {"log10_epsilon_na": tab["log10_epsilon_na"]},
                                  "log10 ramp duration (s)", "log10 error", "Landau-Zener error"))
    return {"frequency_gap": ramp.frequency_gap, "detuning_span": ramp.detuning_span,
            "ramp_duration": ramp.ramp_duration, "span_factor": ramp.span_factor,
            "sweep_rate": ramp.sweep_rate, "epsilon_na": lz_error(ramp), "log10_epsilon_na": lz_error_log10(ramp)}


def _fit_summary(fit) -> dict:
    d = fit.to_dict()
    return {"parameters": d["parameters"], "standard_errors": d["standard_errors"], "flags": d["flags"],
            "converged": d["converged"]}


def cmd_erasure_sim(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    from .protocol import lifetime_fit, m_grid_for, run_erasure_experiment, survival_curve

    e = cfg["experiment"]
    exp = cfg.experiment()
    curve = survival_curve(exp, m_grid_for(exp.t_ec, exp.t_meas, e["t_tot_max"], e["curve_points"]), args.threads)
    em.table(curve, "curve")
    em.write("svg", emit.line_svg(curve["t_tot"], {"unselected": curve["p2_unselected"],
                                                   "postselected": curve["p2_postselected"]},
                                  "t_tot (s)", "P2 at EOL", "logical decay"), "curve")
    ens = run_erasure_experiment(exp, args.threads)
    em.write("csv", ens.raster_csv(e["raster_shots"]), "raster")
    out = {"ensemble": ens.summary(), "lifetimes": {}}
    for which in ("unselected", "postselected"):
        try:
            out["lifetimes"][which] = _fit_summary(lifetime_fit(curve, which))
        except ValueError as exc:
            out["lifetimes"][which] = {"error": str(exc)}
    t_u = out["lifetimes"]["unselected"].get("parameters", {}).get("T")
    t_p = out["lifetimes"]["postselected"].get("parameters", {}).get("T")
    if isinstance(t_u, float) and isinstance(t_p, (float, str)):
        out["lifetime_ratio"] = (float(t_p) / t_u) if t_u else None
    out["survival_fraction"] = [[int(m), float(s)] for m, s in zip(curve["m"], curve["survival_fraction"])]
    return out


def cmd_lifetime_vs_tec(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    from .protocol import lifetime_vs_tec

    e = cfg["experiment"]
    tab = lifetime_vs_tec(cfg.experiment(), e["tec_grid"], e["t_tot_max"], e["curve_points"], args.threads)
    em.table(tab)
    em.write("svg", emit.line_svg(tab["t_ec"], {"postselected": tab["t1l_postselected"],
                                                "unselected": tab["t1l_unselected"]},
                                  "t_EC (s)", "T1L (s)", "logical lifetime versus check interval"))
    return {"monotonic": tab.meta["monotonic"]}


def _qnd_grid(cfg: RunConfig, readout) -> np.ndarray:
    offsets = grid_values(cfg["qnd"]["drive_offsets"])
    w0 = readout.dressed[0]
    return np.unique(np.concatenate([w0 + offsets, np.array(readout.dressed)]))


def cmd_qnd_map(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    from .protocol import qnd_sequence

    q = cfg["qnd"]
    readout = cfg.readout()
    model = calibrate_nonqnd(readout, q["target"])
    base = cfg.experiment().replace(shots=q["shots"])
    wd = _qnd_grid(cfg, readout)
    ns = np.array(q["photon_numbers"])
    rows = {k: [] for k in ("init_state", "n", "omega_d", "p_tilde", "p_tilde_err", "injected")}
    maps = {}
    for i in q["init_states"]:
        if i not in (0, 1, 2):
            raise ConfigError("qnd.init_states", f"state {i} is not 0, 1 or 2")
        mp = qnd_sequence(base, readout, model, i, ns, wd, q["checks"], q["t_tot"], args.threads)
        maps[i] = mp
        for a, n in enumerate(ns):
            for j, w in enumerate(wd):
                for key, val in (("init_state", i), ("n", n), ("omega_d", w), ("p_tilde", mp.p_tilde[a, j]),
                                 ("p_tilde_err", mp.p_tilde_err[a, j]), ("injected", mp.injected[a, j])):
                    rows[key].append(val)
        em.write("svg", emit.heatmap_svg(1 - mp.p_tilde, "drive frequency", "photon number",
                                         f"1 - p_tilde for |{i}>"), f"state{i}")
    em.table(Table(rows, {"init_state": "1", "n": "1", "omega_d": "rad/s", "p_tilde": "1",
                          "p_tilde_err": "1", "injected": "1"}))
    out = {"coefficient": model.coefficient, "dressed": list(readout.dressed)}
    peaks = {}
    for i, mp in maps.items():
        a = int(np.argmax(ns))
        peaks[str(i)] = float(wd[int(np.argmax(1 - mp.p_tilde[a]))])
    out["backaction_peak_omega_d"] = peaks
    if 0 in maps and 2 in maps:
        est = np.full((ns.size, wd.size), math.nan)
        for a in range(ns.size):
            for j in range(wd.size):
                p0 = min(1.0, maps[0].p_tilde[a, j])
                p2 = min(1.0, maps[2].p_tilde[a, j])
                est[a, j] = qnd_error(p0, p2, q["checks"])
        out["qnd_error_estimate"] = est
    return out


def cmd_dephasing_map(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    d = cfg["dephasing"]
    readout = cfg.readout()
    ns = np.array(d["photon_numbers"])
    wd = readout.dressed[0] + grid_values(d["drive_offsets"])
    rows = {k: [] for k in ("n", "omega_d", "gamma_m", "gamma_phi", "eps_phi")}
    mat = np.zeros((ns.size, wd.size))
    for a, n in enumerate(ns):
        for j, w in enumerate(wd):
            gm = dephasing_rate(readout.replace(photon_number=float(n), drive_frequency=float(w)))
            mat[a, j] = gm + d["gamma_phi_residual"]
            for key, val in (("n", n), ("omega_d", w), ("gamma_m", gm), ("gamma_phi", mat[a, j]),
                             ("eps_phi", dephasing_error(gm, readout.t_meas))):
                rows[key].append(val)
    em.table(Table(rows, {"n": "1", "omega_d": "rad/s", "gamma_m": "1/s", "gamma_phi": "1/s", "eps_phi": "1"}))
    em.write("svg", emit.heatmap_svg(mat, "drive frequency", "photon number", "dephasing rate"))
    return {"omega_bare": readout.omega_bare, "gamma_m_operating": dephasing_rate(readout),
            "eps_phi_operating": dephasing_error(dephasing_rate(readout), readout.t_meas),
            "snr_erasure": separation_snr(readout, (0, 2), 1), "midpoint_fidelity": midpoint_fidelity(readout)}


def cmd_ramsey(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    from .protocol import RamseyConfig, ramsey_signal, ramsey_signal_stochastic

    r = cfg["ramsey"]
    residual = 1.0 / r["t2_logical"] - 1.0 / (2.0 * r["t1_logical"])
    if residual < 0:
        raise ConfigError("ramsey.t2_logical", "T2 exceeds 2 T1; residual dephasing would be negative")
    try:
        rc = RamseyConfig(r["t1_logical"], residual, r["detuning"], tuple(grid_values(r["delays"])),
                          cfg.readout() if r["readout_during_delay"] else None)
    except ValueError as exc:
        raise ConfigError("ramsey", str(exc)) from None
    tab = ramsey_signal(rc)
    cols = dict(tab.columns)
    units = dict(tab.units)
    if r["stochastic_shots"] > 0:
        st = ramsey_signal_stochastic(rc, r["stochastic_shots"], cfg.master_seed)
        cols["p_stochastic"] = st["p"]
        units["p_stochastic"] = "1"
    em.table(Table(cols, units))
    em.write("svg", emit.line_svg(tab["delay"], {k: v for k, v in cols.items() if k != "delay"},
                                  "delay (s)", "P", "Ramsey fringe"))
    fit = fit_ramsey(tab["delay"], tab["p"])
    t2 = fit.parameters["T2"]
    return {"gamma_phi": rc.gamma_phi, "gamma_m": rc.gamma_m, "t2_model": rc.t2, "fit": _fit_summary(fit),
            "gamma_phi_extracted": 1.0 / t2 - 1.0 / (2.0 * rc.t1_logical)}


def _read_data(path) -> dict[str, np.ndarray]:
    if path is None:
        raise UsageError("--data is required")
    if not Path(path).exists():
        raise InputError(f"--data: no such file {path}")
    try:
        return emit.read_csv(Path(path))
    except ValueError as exc:
        raise InputError(f"--data: {exc}") from None


def _data_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12] if path and Path(path).exists() else ""


def cmd_fit_rates(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    cols = _read_data(args.data)
    prefix = "mc_" if args.use_mc else ""
    need = ["init_state", "t"] + [f"{prefix}p{s}" for s in range(3)]
    missing = [c for c in need if c not in cols]
    if missing:
        raise InputError(f"--data: missing columns {missing}")
    series = {}
    for init in (1, 2):
        m = cols["init_state"] == init
        series[init] = np.column_stack([cols["t"][m]] + [cols[f"{prefix}p{s}"][m] for s in range(3)])
    sigma = None if args.sigma is None else {k: np.full(len(v), args.sigma) for k, v in series.items()}
    try:
        data = DecayDataset(series, sigma)
    except ValueError as exc:
        raise InputError(f"--data: {exc}") from None
    f = cfg["fit"]
    try:
        res = fit_rates(data, cfg.rates(), f["parameterization"], f["starts"], f["seed"], args.threads)
    except ValueError as exc:
        raise InputError(f"--data: {exc}") from None
    return {"fit": res.to_dict()}


def cmd_fit_dephasing(cfg: RunConfig, args, em: emit.Emitter) -> dict:
    cols = _read_data(args.data)
    missing = [c for c in ("n", "omega_d", "gamma_phi") if c not in cols]
    if missing:
        raise InputError(f"--data: missing columns {missing}")
    pts = np.column_stack([cols["n"], cols["omega_d"], cols["gamma_phi"]])
    try:
        res = fit_dephasing(pts, cfg.readout())
    except ValueError as exc:
        raise InputError(f"--data: {exc}") from None
    return {"fit": res.to_dict()}


COMMANDS = {
    "spectrum": (cmd_spectrum, "energy levels and charge matrix elements"),
    "flux-sweep": (cmd_flux_sweep, "transition frequencies and matrix elements versus flux"),
    "chevron": (cmd_chevron, "P2 versus drive amplitude and detuning"),
    "decay": (cmd_decay, "three-level relaxation, master equation and Gillespie"),
    "lz": (cmd_lz, "Landau-Zener error of the readout flux ramp"),
    "erasure-sim": (cmd_erasure_sim, "repeated erasure checks with post-selection"),
    "lifetime-vs-tec": (cmd_lifetime_vs_tec, "logical lifetime versus check interval"),
    "qnd-map": (cmd_qnd_map, "normalised survival maps for the QND sequence"),
    "dephasing-map": (cmd_dephasing_map, "measurement-induced dephasing versus power and frequency"),
    "ramsey": (cmd_ramsey, "Ramsey fringe of the logical qubit"),
    "fit-rates": (cmd_fit_rates, "fit transition rates to a decay CSV"),
    "fit-dephasing": (cmd_fit_dephasing, "fit residual dephasing and bare resonator frequency"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (default: bundled paper.cfg)")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--shots", type=int, help="override the shot count of this subcommand")
    common.add_argument("--out", help=f"output directory (default: config output_dir, ${OUT_ENV}, ./{DEFAULT_OUT})")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    parser = _Parser(prog="fluxerasure", description="Numerical laboratory for a fluxonium erasure qubit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "lz":
            p.add_argument("--gap", help="avoided-crossing gap, e.g. '48e6 two_pi_hz'")
            p.add_argument("--span", help="detuning span, e.g. '8.6e6 two_pi_hz'")
            p.add_argument("--duration", type=float, help="ramp duration in s")
            p.add_argument("--span-factor", type=float, dest="span_factor")
        if name in ("fit-rates", "fit-dephasing"):
            p.add_argument("--data", help="input CSV")
        if name == "fit-rates":
            p.add_argument("--use-mc", action="store_true", help="fit the Monte Carlo columns mc_p0..mc_p2")
            p.add_argument("--sigma", type=float, help="per-point population uncertainty")
    return parser


def _option_extras(args) -> list:
    extras = [args.command]
    for key in ("gap", "span", "duration", "span_factor", "use_mc", "sigma"):
        if hasattr(args, key):
            extras.append([key, getattr(args, key)])
    if getattr(args, "data", None):
        extras.append(["data", _data_digest(args.data)])
    return extras


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("fluxerasure: a subcommand is required (see --help)")
    if args.threads < 1:
        raise UsageError("--threads: must be >= 1")
    if args.shots is not None and args.shots < 1:
        raise UsageError("--shots: must be >= 1")
    cfg = load_config(args.config)
    overrides = {"master_seed": args.seed}
    if args.shots is not None:
        if args.command not in SHOTS_KEY:
            raise UsageError(f"--shots: not used by {args.command}")
        overrides[SHOTS_KEY[args.command]] = args.shots
    cfg = with_overrides(cfg, **overrides)
    out_dir = args.out or cfg.values["output_dir"] or os.environ.get(OUT_ENV) or DEFAULT_OUT
    digest = cfg.digest(*_option_extras(args))
    em = emit.Emitter(Path(out_dir), args.command, digest)
    func = COMMANDS[args.command][0]
    result = func(cfg, args, em)
    summary = {"subcommand": args.command, "config_hash": digest, "config": cfg.resolved, "result": result}
    em.write("json", emit.summary_json(summary))
    for p in em.written:
        print(p)
    return 0


def main(argv=None) -> int:
    try:
        code = run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except (ConvergenceError, FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except OSError as exc:
        print(f"error: {exc.filename or '--out'}: {exc.strerror}", file=sys.stderr)
        code = 2
    except SystemExit as exc:  # --help
        code = 0 if exc.code in (0, None) else 1
    return code


if __name__ == "__main__":
    sys.exit(main())
