"""Scenario configuration files.

INI-style text (``configparser``), one section per block. Keys carry their
unit as a suffix (``_ms``, ``_s``, ``_dbm``, ``_w``, ``_hz``, ...) and are
converted to SI at parse time. Per-user quantities in ``[users]`` are
comma-separated lists (one entry per user, in decoding order) or a single
value applied to everyone. ``arrival_prob`` and ``mean_burst_bits`` default to
the ``[traffic]`` block.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import Scenario, SystemParams, UserProfile, dbm_to_watts, noise_power_from_density
from .errors import ConfigError, NomaError
from .optimizer import SINGLE_MODE, TWO_MODE, EnergyModel, SolverSettings

PROPERTIES = ("roundtrip", "quadrature", "closed_form", "concavity", "monotonicity", "kkt", "conservation")
# opt-in: known to fail on interference-limited scenarios
EXTRA_PROPERTIES = ("joint_concavity",)

# key -> (canonical name, factor or converter)
_UNIT_KEYS = {
    "system": {
        "slot_duration_s": ("slot_duration_s", 1.0),
        "slot_duration_ms": ("slot_duration_s", 1e-3),
        "bandwidth_hz": ("bandwidth_hz", 1.0),
        "bandwidth_khz": ("bandwidth_hz", 1e3),
        "noise_density_dbm_per_hz": ("noise_density", "raw"),
        "noise_power_w": ("noise_power_w", 1.0),
        "noise_power_dbm": ("noise_power_w", "dbm"),
        "peak_power_w": ("peak_power_w", 1.0),
        "peak_power_dbm": ("peak_power_w", "dbm"),
    },
    "traffic": {
        "arrival_prob": ("arrival_prob", 1.0),
        "mean_burst_bits": ("mean_burst_bits", 1.0),
    },
    "users": {
        "distance_m": ("distance_m", 1.0),
        "path_loss_exp": ("path_loss_exp", 1.0),
        "arrival_prob": ("arrival_prob", 1.0),
        "mean_burst_bits": ("mean_burst_bits", 1.0),
        "circuit_power_w": ("circuit_power_w", 1.0),
        "circuit_power_dbm": ("circuit_power_w", "dbm"),
        "delay_bound_s": ("delay_bound_s", 1.0),
        "delay_bound_ms": ("delay_bound_s", 1e-3),
        "delay_tolerance": ("delay_tolerance", 1.0),
    },
}

_OPTIMIZER_KEYS = {
    "dinkelbach_tol": float,
    "dinkelbach_max_iter": int,
    "dual_max_iter": int,
    "dual_tol": float,
    "power_rtol": float,
    "max_passes": int,
    "line_search_rtol": float,
    "step0": float,
    "multiplier_sign": str,
    "qos_rate_constraint": "bool",
    "fd_rel_step": float,
    "energy_model": str,
}
_SIMULATION_KEYS = {"n_slots": int, "seed": int, "replications": int, "warmup_slots": int}
_OUTPUT_KEYS = {"directory": str, "formats": str}
_FIG4_KEYS = {"delay_grid_ms": "list"}
_FIG5_KEYS = {"delay_bounds_ms": "list", "n_slots": int, "replications": int}
_VALIDATE_KEYS = {"properties": "names", "n_configs": int, "mc_samples": int, "n_pairs": int, "n_slots": int}
_SECTIONS = {
    "system": _UNIT_KEYS["system"],
    "traffic": _UNIT_KEYS["traffic"],
    "users": _UNIT_KEYS["users"],
    "optimizer": _OPTIMIZER_KEYS,
    "simulation": _SIMULATION_KEYS,
    "output": _OUTPUT_KEYS,
    "fig4": _FIG4_KEYS,
    "fig5": _FIG5_KEYS,
    "validate": _VALIDATE_KEYS,
}
_REQUIRED = ("system", "users")

ENV_OUT = "NOMA_EE_OUT"


@dataclass(frozen=True)
class SimulationSettings:
    n_slots: int = 10_000_000
    seed: int = 0
    replications: int = 5
    warmup_slots: int = 10_000

    @property
    def seeds(self) -> tuple:
        return tuple(self.seed + i for i in range(self.replications))


@dataclass(frozen=True)
class ValidateSettings:
    properties: tuple = PROPERTIES
    n_configs: int = 10
    mc_samples: int = 1_000_000
    n_pairs: int = 200
    n_slots: int = 200_000


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    solver: SolverSettings = SolverSettings()
    energy: EnergyModel = EnergyModel()
    simulation: SimulationSettings = SimulationSettings()
    output_dir: str = "out"
    formats: tuple = ("csv",)
    fig4_delay_grid_s: tuple | None = None
    fig5_delay_bounds_s: tuple = (0.005, 0.01, 0.015, 0.02, 0.025, 0.03, 0.04, 0.05)
    fig5_n_slots: int = 1_000_000
    fig5_replications: int = 1
    validate: ValidateSettings = ValidateSettings()
    source: str | None = None
    resolved: dict = field(default_factory=dict, compare=False)

    @property
    def params(self) -> SystemParams:
        return self.scenario.params

    @property
    def profiles(self):
        return self.scenario.profiles

    def fig4_grid(self):
        if self.fig4_delay_grid_s is not None:
            return np.array(self.fig4_delay_grid_s)
        ts = self.params.slot_duration_s
        top = 2 * max(p.delay_bound_s for p in self.profiles)
        n = int(round(top / 1e-3))
        return np.arange(1, n + 1) * 1e-3 if ts <= 1e-3 else np.arange(1, int(top / ts) + 1) * ts

    def with_seed(self, seed: int) -> "ScenarioConfig":
        sim = SimulationSettings(self.simulation.n_slots, seed, self.simulation.replications,
                                 self.simulation.warmup_slots)
        resolved = dict(self.resolved)
        resolved["simulation.seed"] = str(seed)
        return replace(self, simulation=sim, resolved=resolved)

    def with_output(self, directory: str) -> "ScenarioConfig":
        # where the files go is not part of what they contain
        return replace(self, output_dir=directory)


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number; (section, None) for headers."""
    index = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index[(section, None)] = n
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), n)
    return index


class _Reader:
    def __init__(self, path, text):
        self.path = str(path)
        self.lines = _line_index(text)
        self.resolved = {}

    def fail(self, section, key, message):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        raise ConfigError(message, key=f"{section}.{key}" if key else section, line=line, path=self.path)

    def number(self, section, key, raw, kind=float):
        try:
            if kind is int:
                val = float(raw)
                if val != int(val):
                    raise ValueError
                return int(val)
            return float(raw)
        except ValueError:
            self.fail(section, key, f"{section}.{key}: expected a number, got {raw!r}")

    def numbers(self, section, key, raw):
        parts = [p for p in (s.strip() for s in raw.split(",")) if p]
        if not parts:
            self.fail(section, key, f"{section}.{key}: empty list")
        return [self.number(section, key, p) for p in parts]


def _convert(reader, section, key, value, how):
    if how == "raw":
        return value
    if how == "dbm":
        return dbm_to_watts(value)
    return value * how


def _unit_block(reader, cp, section, listed=False):
    out = {}
    table = _UNIT_KEYS[section]
    if not cp.has_section(section):
        return out
    for key, raw in cp.items(section):
        canon, how = table[key]
        if canon in out:
            reader.fail(section, key, f"{section}.{key}: {canon} is given twice (with different units)")
        if listed:
            vals = reader.numbers(section, key, raw)
            out[canon] = [_convert(reader, section, key, v, how) for v in vals]
        else:
            out[canon] = _convert(reader, section, key, reader.number(section, key, raw), how)
        out[canon + "@"] = key
        reader.resolved[f"{section}.{key}"] = raw.strip()
    return out


def _typed_block(reader, cp, section, table):
    out = {}
    if not cp.has_section(section):
        return out
    for key, raw in cp.items(section):
        kind = table[key]
        raw = raw.strip()
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "on", "off", "1", "0"):
                reader.fail(section, key, f"{section}.{key}: expected true/false, got {raw!r}")
            out[key] = low in ("true", "yes", "on", "1")
        elif kind == "list":
            out[key] = reader.numbers(section, key, raw)
        elif kind == "names":
            out[key] = tuple(p.strip() for p in raw.split(",") if p.strip())
        elif kind is str:
            out[key] = raw
        else:
            out[key] = reader.number(section, key, raw, kind)
        reader.resolved[f"{section}.{key}"] = raw
    return out


def parse_config_text(text: str, path="<string>") -> ScenarioConfig:
    reader = _Reader(path, text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", path=str(path)) from exc

    for section in cp.sections():
        if section not in _SECTIONS:
            reader.fail(section, None, f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SECTIONS[section]:
                hint = ""
                if section in _UNIT_KEYS:
                    stems = [k for k in _SECTIONS[section] if k.startswith(key + "_")]
                    if stems:
                        hint = f" (unit suffix required, e.g. {stems[0]})"
                reader.fail(section, key, f"unknown key {section}.{key}{hint}")
    for section in _REQUIRED:
        if not cp.has_section(section):
            raise ConfigError(f"missing [{section}] block", key=section, path=str(path))

    sysb = _unit_block(reader, cp, "system")
    traffic = _unit_block(reader, cp, "traffic")
    users = _unit_block(reader, cp, "users", listed=True)

    for need in ("slot_duration_s", "bandwidth_hz", "peak_power_w"):
        if need not in sysb:
            reader.fail("system", None, f"[system] needs {need.rsplit('_', 1)[0]} (with a unit suffix)")
    if "noise_power_w" in sysb and "noise_density" in sysb:
        reader.fail("system", sysb["noise_density@"], "give either noise power or noise density, not both")
    try:
        if "noise_power_w" in sysb:
            noise = sysb["noise_power_w"]
        elif "noise_density" in sysb:
            noise = noise_power_from_density(sysb["noise_density"], sysb["bandwidth_hz"])
        else:
            reader.fail("system", None, "[system] needs noise_density_dbm_per_hz or noise_power_w/_dbm")
        params = SystemParams(sysb["slot_duration_s"], sysb["bandwidth_hz"], noise, sysb["peak_power_w"])
    except ConfigError:
        raise
    except NomaError as exc:
        name = str(exc).split()[0]
        canon = [c for c in ("slot_duration_s", "bandwidth_hz", "noise_power_w", "peak_power_w")
                 if c.startswith(name) and c + "@" in sysb]
        bad = sysb[canon[0] + "@"] if canon else sysb.get("noise_density@")
        reader.fail("system", bad, f"system.{bad}: {exc}")

    if "distance_m" not in users:
        reader.fail("users", None, "[users] needs distance_m (one entry per user)")
    n = len(users["distance_m"])
    fields = ("distance_m", "path_loss_exp", "arrival_prob", "mean_burst_bits", "circuit_power_w",
              "delay_bound_s", "delay_tolerance")
    columns = {}
    for name in fields:
        if name in users:
            vals = users[name]
            if len(vals) == 1:
                vals = vals * n
            if len(vals) != n:
                reader.fail("users", users[name + "@"], f"users.{users[name + '@']}: {len(vals)} entries for {n} users")
            columns[name] = vals
        elif name in traffic:
            columns[name] = [traffic[name]] * n
        else:
            reader.fail("users", None, f"[users] needs {name} (or a [traffic] default)")
    profiles = []
    for i in range(n):
        kwargs = {name: columns[name][i] for name in fields}
        try:
            profiles.append(UserProfile(**kwargs))
        except NomaError as exc:
            name = str(exc).split()[0]
            if name + "@" in users:
                reader.fail("users", users[name + "@"], f"users.{users[name + '@']} (user {i + 1}): {exc}")
            key = traffic.get(name + "@")
            reader.fail("traffic", key, f"traffic.{key} (user {i + 1}): {exc}")

    opt = _typed_block(reader, cp, "optimizer", _OPTIMIZER_KEYS)
    mode = opt.pop("energy_model", TWO_MODE)
    if mode not in (TWO_MODE, SINGLE_MODE):
        reader.fail("optimizer", "energy_model", f"optimizer.energy_model must be {TWO_MODE} or {SINGLE_MODE}")
    try:
        solver = SolverSettings(**opt)
    except NomaError as exc:
        reader.fail("optimizer", "multiplier_sign", str(exc))
    for key, val in opt.items():
        if isinstance(val, (int, float)) and not isinstance(val, bool) and val <= 0:
            reader.fail("optimizer", key, f"optimizer.{key} must be positive")

    sim = _typed_block(reader, cp, "simulation", _SIMULATION_KEYS)
    for key, val in sim.items():
        if val < (0 if key in ("seed", "warmup_slots") else 1):
            reader.fail("simulation", key, f"simulation.{key} out of range: {val}")
    simulation = SimulationSettings(**sim)

    outb = _typed_block(reader, cp, "output", _OUTPUT_KEYS)
    formats = tuple(f.strip() for f in outb.get("formats", "csv").split(",") if f.strip())
    if formats != ("csv",):
        reader.fail("output", "formats", "output.formats: only csv is supported")
    out_dir = outb.get("directory") or os.environ.get(ENV_OUT, "out")

    f4 = _typed_block(reader, cp, "fig4", _FIG4_KEYS)
    grid4 = None
    if "delay_grid_ms" in f4:
        grid4 = tuple(v * 1e-3 for v in f4["delay_grid_ms"])
        if any(np.diff(grid4) <= 0) or grid4[0] <= 0:
            reader.fail("fig4", "delay_grid_ms", "fig4.delay_grid_ms must be positive and increasing")
    f5 = _typed_block(reader, cp, "fig5", _FIG5_KEYS)
    grid5 = ScenarioConfig.fig5_delay_bounds_s
    if "delay_bounds_ms" in f5:
        grid5 = tuple(v * 1e-3 for v in f5["delay_bounds_ms"])
        if any(np.diff(grid5) <= 0) or grid5[0] <= 0:
            reader.fail("fig5", "delay_bounds_ms", "fig5.delay_bounds_ms must be positive and increasing")
    val = _typed_block(reader, cp, "validate", _VALIDATE_KEYS)
    if "properties" in val:
        if not val["properties"]:
            reader.fail("validate", "properties", "validate.properties: empty selection")
        unknown = [p for p in val["properties"] if p not in PROPERTIES + EXTRA_PROPERTIES]
        if unknown:
            reader.fail("validate", "properties", f"validate.properties: unknown {', '.join(unknown)}")

    return ScenarioConfig(
        scenario=Scenario(params, tuple(profiles)),
        solver=solver,
        energy=EnergyModel(mode),
        simulation=simulation,
        output_dir=out_dir,
        formats=formats,
        fig4_delay_grid_s=grid4,
        fig5_delay_bounds_s=grid5,
        fig5_n_slots=f5.get("n_slots", ScenarioConfig.fig5_n_slots),
        fig5_replications=f5.get("replications", ScenarioConfig.fig5_replications),
        validate=ValidateSettings(**val),
        source=str(path),
        resolved=reader.resolved,
    )


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from exc
    return parse_config_text(text, path)


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``table1`` or ``twouser``)."""
    path = Path(__file__).parent / "configs" / f"{name.removesuffix('.cfg')}.cfg"
    if not path.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return path
