"""Command-line entry point: ``noma-ee {optimize,fig4,fig5,validate}``.

Every command reads a config (a path, or the name of a shipped config),
writes unit-suffixed CSV files to the output directory and a
``provenance.txt`` with the resolved settings, seeds and library versions.
Output bytes depend only on (config, seed).

Exit status: 0 success, 1 a validation property failed, 2 bad config or
arguments, 3 a computation failed.
"""

from __future__ import annotations

import argparse
import csv
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ENV_OUT, ScenarioConfig, parse_config, shipped_config
from .core import PowerAllocation, watts_to_dbm
from .errors import ConfigError, ConvergenceError, InvalidParameterError, NomaError
from .optimizer import SINGLE_MODE, TWO_MODE, EEProblem, EnergyModel, dinkelbach_solve
from .qos import delay_violation_approx
from .queuesim import (SimConfig, empirical_delay_violation, empirical_energy_efficiency, replication_half_width,
                       simulate_replications)
from .validation import run_checks

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2, 3


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _version(dist):
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_provenance(out: Path, command: str, cfg: ScenarioConfig, seeds=()):
    lines = [
        f"command = {command}",
        f"config = {cfg.source}",
        f"seeds = {','.join(str(s) for s in seeds)}",
        f"package = {_version('artifact')}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {_version('scipy')}",
        f"numba = {_version('numba')}",
        f"energy_model = {cfg.energy.mode}",
    ]
    for name, value in sorted(vars(cfg.solver).items()):
        lines.append(f"solver.{name} = {value}")
    for key, value in sorted(cfg.resolved.items()):
        lines.append(f"config.{key} = {value}")
    (out / "provenance.txt").write_text("\n".join(lines) + "\n")


# -- optimize ---------------------------------------------------------------

def _trace_rows(trace, n_users):
    rows = []
    for i, e in enumerate(trace.iterations):
        rows.append([i, e.q, e.F, *e.powers, *e.multipliers, e.dual_iterations, e.passes])
    header = (["iteration", "q_bits_per_j", "F_bits_per_s"]
              + [f"tx_power_{k + 1}_w" for k in range(n_users)]
              + [f"lambda_{k + 1}" for k in range(n_users)]
              + ["dual_iterations", "line_search_passes"])
    return header, rows


ALLOCATION_HEADER = ["row", "user", "distance_m", "u_star_per_bit", "nonempty_buffer_prob", "tx_prob",
                     "tx_power_w", "tx_power_dbm", "effcap_bps", "required_rate_bps", "total_power_w",
                     "qos_tight", "eta_bits_per_j"]


def solve(cfg: ScenarioConfig, energy: EnergyModel | None = None, scenario=None):
    problem = EEProblem(scenario or cfg.scenario, model=energy or cfg.energy, settings=cfg.solver)
    return problem, dinkelbach_solve(problem)


def cmd_optimize(cfg: ScenarioConfig, out: Path) -> int:
    n = cfg.scenario.n_users
    try:
        _, sol = solve(cfg)
    except ConvergenceError as exc:
        write_csv(out / "trace.csv", *_trace_rows(exc.trace, n))
        raise
    rows = []
    for k, prof in enumerate(cfg.profiles):
        st = sol.qos[k]
        p = sol.alloc.tx_power_w[k]
        rows.append(["user", k + 1, prof.distance_m, st.u_star, st.p_b, st.p_tx, p, watts_to_dbm(p),
                     sol.effcaps[k], sol.required[k], sol.user_power_w[k], bool(sol.tight[k]), ""])
    total_p = sol.alloc.tx_power_w.sum()
    rows.append(["summary", "all", "", "", "", "", total_p, watts_to_dbm(total_p), sol.effcaps.sum(),
                 sol.required.sum(), sol.user_power_w.sum(), bool(sol.tight.all()), sol.eta])
    write_csv(out / "allocation.csv", ALLOCATION_HEADER, rows)
    write_csv(out / "trace.csv", *_trace_rows(sol.trace, n))
    print(f"eta = {sol.eta:.6g} bits/J after {len(sol.trace)} Dinkelbach iterations")
    return EXIT_OK


# -- fig4 -------------------------------------------------------------------

FIG4_HEADER = ["user", "delay_ms", "analytic_violation_prob", "empirical_violation_prob",
               "wilson_half_width", "replication_half_width"]


def fig4_rows(cfg: ScenarioConfig, alloc: PowerAllocation, qos):
    sim = cfg.simulation
    stats = simulate_replications(cfg.scenario, alloc, SimConfig(sim.n_slots, sim.seed, sim.warmup_slots), sim.seeds)
    rows = []
    for d in cfg.fig4_grid():
        emp, wilson = empirical_delay_violation(stats, d)
        rep = replication_half_width(stats, d)
        for k, prof in enumerate(cfg.profiles):
            ana = delay_violation_approx(qos[k].u_star, prof, cfg.params, d)
            rows.append([k + 1, d * 1e3, ana, emp[k], wilson[k], rep[k]])
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows, stats


def cmd_fig4(cfg: ScenarioConfig, out: Path) -> int:
    _, sol = solve(cfg)
    rows, stats = fig4_rows(cfg, sol.alloc, sol.qos)
    write_csv(out / "fig4_delay.csv", FIG4_HEADER, rows)
    for k, prof in enumerate(cfg.profiles):
        e, _ = empirical_delay_violation(stats, prof.delay_bound_s)
        print(f"user {k + 1}: P(D > {prof.delay_bound_s * 1e3:g} ms) = {e[k]:.4f} (target {prof.delay_tolerance:g})")
    return EXIT_OK


# -- fig5 -------------------------------------------------------------------

FIG5_HEADER = ["delay_bound_ms", "energy_model", "eta_analytic_bits_per_j", "eta_simulated_bits_per_j",
               "sum_tx_power_w"]


def fig5_rows(cfg: ScenarioConfig):
    sim = cfg.simulation
    seeds = tuple(sim.seed + i for i in range(cfg.fig5_replications))
    sim_cfg = SimConfig(cfg.fig5_n_slots, sim.seed, min(sim.warmup_slots, cfg.fig5_n_slots // 10))
    cache = {}
    rows = []
    for d in cfg.fig5_delay_bounds_s:
        scen = cfg.scenario.with_profiles(p.replace(delay_bound_s=d) for p in cfg.profiles)
        for mode in (TWO_MODE, SINGLE_MODE):
            _, sol = solve(cfg, EnergyModel(mode), scen)
            key = (d, sol.alloc.tx_power_w.tobytes())
            if key not in cache:
                cache[key] = simulate_replications(scen, sol.alloc, sim_cfg, seeds)
            rows.append([d * 1e3, mode, sol.eta, empirical_energy_efficiency(cache[key], mode),
                         sol.alloc.tx_power_w.sum()])
    return rows


def cmd_fig5(cfg: ScenarioConfig, out: Path) -> int:
    rows = fig5_rows(cfg)
    write_csv(out / "fig5_ee.csv", FIG5_HEADER, rows)
    print(f"wrote {len(rows)} rows")
    return EXIT_OK


# -- validate ---------------------------------------------------------------

def cmd_validate(cfg: ScenarioConfig, out: Path, properties=None) -> int:
    results = run_checks(cfg, properties)
    write_csv(out / "validate.csv", ["property", "passed", "measured", "threshold", "detail"],
              [[r.name, r.passed, r.measured, r.threshold, r.detail] for r in results])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.measured:.3g} (threshold {r.threshold:g}) {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


# -- plumbing ---------------------------------------------------------------

def _seed(text):
    try:
        val = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _positive_int(text):
    val = int(float(text))
    if val <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noma-ee", description="Energy-efficient power control for "
                                     "delay-constrained uplink NOMA users.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "optimize": "solve for the energy-efficient allocation",
        "fig4": "analytic vs simulated delay-violation probability",
        "fig5": "optimised energy efficiency against the delay bound",
        "validate": "run the property suite",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", default="table1", help="config path or shipped name (table1, twouser)")
        sp.add_argument("--out", default=None, help=f"output directory (default: config, then ${ENV_OUT}, then ./out)")
        sp.add_argument("--seed", type=_seed, default=None, help="base seed, overrides [simulation] seed")
        if name in ("fig4", "fig5"):
            sp.add_argument("--slots", type=_positive_int, default=None, help="slots per replication")
            sp.add_argument("--replications", type=_positive_int, default=None)
        if name == "validate":
            sp.add_argument("--properties", default=None, help="comma-separated property names")
    return parser


def load_config(spec: str) -> ScenarioConfig:
    path = Path(spec)
    if not path.exists() and path.suffix in ("", ".cfg") and path.parent == Path("."):
        path = shipped_config(spec)
    return parse_config(path)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_output(args.out)
    slots = getattr(args, "slots", None)
    reps = getattr(args, "replications", None)
    if args.command == "fig4" and (slots or reps):
        sim = replace(cfg.simulation, n_slots=slots or cfg.simulation.n_slots,
                      replications=reps or cfg.simulation.replications)
        cfg = replace(cfg, simulation=sim)
    if args.command == "fig5" and (slots or reps):
        cfg = replace(cfg, fig5_n_slots=slots or cfg.fig5_n_slots, fig5_replications=reps or cfg.fig5_replications)
    return cfg


def _seeds_used(cfg, command):
    sim = cfg.simulation
    if command == "fig4":
        return sim.seeds
    if command == "fig5":
        return tuple(sim.seed + i for i in range(cfg.fig5_replications))
    return (sim.seed,)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        props = None
        if args.command == "validate" and args.properties is not None:
            props = tuple(p.strip() for p in args.properties.split(",") if p.strip())
            if not props:
                raise InvalidParameterError("empty property selection")
    except (ConfigError, InvalidParameterError) as exc:
        print(f"noma-ee: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, args.command, cfg, _seeds_used(cfg, args.command))
    try:
        if args.command == "optimize":
            return cmd_optimize(cfg, out)
        if args.command == "fig4":
            return cmd_fig4(cfg, out)
        if args.command == "fig5":
            return cmd_fig5(cfg, out)
        return cmd_validate(cfg, out, props)
    except InvalidParameterError as exc:
        print(f"noma-ee: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NomaError as exc:
        print(f"noma-ee: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
