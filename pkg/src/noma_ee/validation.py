"""Property checks behind ``noma-ee validate``.

Each check returns a :class:`PropertyResult` with the measured margin and the
threshold it was held to. Checks take their sample sizes from
``ValidateSettings`` so the CLI can run a quick gate while the acceptance
tests run the full-size versions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import EXTRA_PROPERTIES, PROPERTIES, ScenarioConfig
from .core import PowerAllocation, Scenario, SystemParams, UserProfile
from .effcap import (EffCapQuery, effcap_k_user, effcap_monte_carlo, effcap_two_user_first,
                     effcap_two_user_second, effcap_user)
from .errors import InvalidParameterError
from .optimizer import EEProblem, dinkelbach_solve, ee_vs_exponent_curve
from .qos import delay_violation_approx, optimal_qos_exponent, qos_state
from .queuesim import SimConfig, simulate


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


def check_roundtrip(cfg: ScenarioConfig, n: int = 10_000, seed: int = 0) -> PropertyResult:
    """optimal_qos_exponent then delay_violation_approx returns epsilon."""
    rng = np.random.default_rng(seed)
    params = SystemParams(1e-3, 18e3, 1e-16, 10.0)
    worst = 0.0
    for _ in range(n):
        prof = UserProfile(
            distance_m=100.0, path_loss_exp=4.0,
            arrival_prob=rng.uniform(0.01, 1.0),
            mean_burst_bits=10 ** rng.uniform(0, 4),
            circuit_power_w=0.01,
            delay_bound_s=params.slot_duration_s * rng.integers(1, 1000),
            delay_tolerance=10 ** rng.uniform(-6, -0.01),
        )
        u = optimal_qos_exponent(prof, params)
        eps = delay_violation_approx(u, prof, params, prof.delay_bound_s)
        worst = max(worst, abs(eps - prof.delay_tolerance))
    return PropertyResult("roundtrip", worst <= 1e-12, worst, 1e-12, f"{n} random profiles")


def random_effcap_query(rng: np.random.Generator, max_users: int = 4) -> EffCapQuery:
    """A random K <= max_users configuration with moderate exponents."""
    params = SystemParams.from_table()
    k_users = int(rng.integers(1, max_users + 1))
    dist = np.sort(rng.uniform(100.0, 1000.0, k_users))
    profiles = tuple(UserProfile(d, 4.0, 0.6, 150.0, 0.01, 0.02, 0.1) for d in dist)
    # receive SNRs between -10 and 40 dB
    snr_db = rng.uniform(-10.0, 40.0, k_users)
    powers = 10 ** (snr_db / 10) * params.noise_power_w * dist ** 4.0
    probs = rng.uniform(0.2, 1.0, k_users)
    th = 10 ** rng.uniform(-2, math.log10(3.0))
    u = th * math.log(2.0) / (params.slot_duration_s * params.bandwidth_hz)
    k = int(rng.integers(0, k_users))
    return EffCapQuery(k, PowerAllocation(powers), probs, u, params, profiles)


def check_quadrature(cfg: ScenarioConfig, n_configs: int | None = None, n_samples: int | None = None,
                     seed: int = 0, evaluator=effcap_k_user) -> PropertyResult:
    """Quadrature effective capacity against Monte Carlo on random configurations.

    Agreement means |quad - mc| <= max(1% of mc, 3 standard errors).
    ``evaluator`` can be swapped for a deliberately wrong formula as a
    negative control.
    """
    n_configs = cfg.validate.n_configs if n_configs is None else n_configs
    n_samples = cfg.validate.mc_samples if n_samples is None else n_samples
    rng = np.random.default_rng(seed)
    worst = 0.0
    fails = 0
    for _ in range(n_configs):
        q = random_effcap_query(rng)
        quad = evaluator(q)
        mc, se = effcap_monte_carlo(q, n_samples, rng)
        allowed = max(0.01 * abs(mc), 3.0 * se)
        ratio = abs(quad - mc) / allowed
        worst = max(worst, ratio)
        fails += ratio > 1.0
    return PropertyResult("quadrature", fails == 0, worst, 1.0,
                          f"{n_configs} configs, {n_samples} samples; measured = max |quad-mc| / allowance")


def check_closed_form(cfg: ScenarioConfig, n_configs: int = 20, seed: int = 0) -> PropertyResult:
    """Two-user closed forms against the K-user integral (1% relative)."""
    rng = np.random.default_rng(seed)
    params = cfg.params
    worst = 0.0
    for _ in range(n_configs):
        snr_db = rng.uniform(-10.0, 40.0, 2)
        powers = 10 ** (snr_db / 10) * params.noise_power_w
        p2 = rng.uniform(0.1, 1.0)
        u = 10 ** rng.uniform(-2, math.log10(3.0)) * math.log(2.0) / (params.slot_duration_s * params.bandwidth_hz)
        alloc = PowerAllocation(powers)
        probs = np.array([1.0, p2])
        ref1 = effcap_k_user(EffCapQuery(0, alloc, probs, u, params))
        ref2 = effcap_k_user(EffCapQuery(1, alloc, probs, u, params))
        c1 = effcap_two_user_first(alloc, p2, u, params)
        c2 = effcap_two_user_second(alloc, u, params)
        worst = max(worst, abs(c1 - ref1) / ref1, abs(c2 - ref2) / ref2)
    return PropertyResult("closed_form", worst <= 0.01, worst, 0.01, f"{n_configs} two-user configs")


def _effcap_parts(cfg):
    scen = cfg.scenario
    states = [qos_state(p, cfg.params) for p in scen.profiles]
    u = np.array([s.u_star for s in states])
    probs = np.array([s.tx_prob for s in states])
    return scen, u, probs


def check_own_power_concavity(cfg: ScenarioConfig, n_pairs: int | None = None, seed: int = 0) -> PropertyResult:
    """Each alpha_k is midpoint-concave in its own power with the others held fixed."""
    n_pairs = cfg.validate.n_pairs if n_pairs is None else n_pairs
    scen, u, probs = _effcap_parts(cfg)
    rng = np.random.default_rng(seed)
    pmax = cfg.params.peak_power_w
    worst = math.inf
    for _ in range(n_pairs):
        base = rng.uniform(0, pmax, scen.n_users)
        k = int(rng.integers(scen.n_users))
        a, b = rng.uniform(0, pmax, 2)
        vals = []
        for x in (a, b, 0.5 * (a + b)):
            p = base.copy()
            p[k] = x
            vals.append(effcap_user(k, p, u[k], probs, scen))
        worst = min(worst, (vals[2] - 0.5 * (vals[0] + vals[1])) / max(vals[2], 1.0))
    return PropertyResult("concavity", worst >= -1e-9, worst, -1e-9,
                          f"{n_pairs} own-power segments; measured = min relative midpoint slack")


def joint_concavity_slack(scen: Scenario, u, probs, a, b) -> float:
    def total(p):
        return sum(effcap_user(k, p, u[k], probs, scen) for k in range(scen.n_users))
    return total(0.5 * (a + b)) - 0.5 * (total(a) + total(b))


def check_joint_concavity(cfg: ScenarioConfig, n_pairs: int | None = None, seed: int = 0) -> PropertyResult:
    """Sum effective capacity midpoint-concave on random pairs in [0, P_max]^K (absolute slack)."""
    n_pairs = cfg.validate.n_pairs if n_pairs is None else n_pairs
    scen, u, probs = _effcap_parts(cfg)
    rng = np.random.default_rng(seed)
    pmax = cfg.params.peak_power_w
    slacks = [joint_concavity_slack(scen, u, probs, rng.uniform(0, pmax, scen.n_users),
                                    rng.uniform(0, pmax, scen.n_users)) for _ in range(n_pairs)]
    worst = float(min(slacks))
    bad = int(sum(s < -1e-9 for s in slacks))
    return PropertyResult("joint_concavity", bad == 0, worst, -1e-9, f"{bad}/{n_pairs} pairs below threshold")


def check_monotonicity(cfg: ScenarioConfig, n_points: int = 8) -> PropertyResult:
    """Optimised eta is non-increasing in a common scaling of the QoS exponents."""
    ul_max = max(p.mean_burst_bits * qos_state(p, cfg.params).u_star for p in cfg.profiles)
    top = min(2.0, 0.95 / ul_max)
    scales = np.geomspace(0.25, top, n_points)
    curve = ee_vs_exponent_curve(cfg.scenario, scales, cfg.energy, cfg.solver)
    etas = np.array([e for _, e in curve])
    worst = float(np.max(np.diff(etas) / etas[:-1])) if len(etas) > 1 else -math.inf
    return PropertyResult("monotonicity", worst <= 0.01, worst, 0.01,
                          "measured = largest relative increase between neighbouring grid points")


def check_kkt(cfg: ScenarioConfig) -> PropertyResult:
    problem = EEProblem(cfg.scenario, model=cfg.energy, settings=cfg.solver)
    sol = dinkelbach_solve(problem)
    stat = sol.kkt.max_interior_residual
    qs = sol.trace.q_values
    monotone = bool(np.all(np.diff(qs) >= -1e-9 * np.abs(qs[1:])))
    final_ok = abs(sol.trace.F_values[-1]) <= cfg.solver.dinkelbach_tol * problem.denominator(sol.alloc.tx_power_w)
    slack = float(np.max(np.abs(sol.kkt.slackness_gap)))
    recomputed = problem.eta(sol.alloc.tx_power_w)
    eta_ok = abs(recomputed - sol.eta) <= 1e-9 * abs(sol.eta)
    passed = stat <= 1e-4 and monotone and final_ok and slack <= 1e-9 and eta_ok
    return PropertyResult("kkt", passed, stat, 1e-4,
                          f"q monotone={monotone}, terminal F ok={final_ok}, slackness={slack:.3g}, eta ok={eta_ok}")


def check_conservation(cfg: ScenarioConfig) -> PropertyResult:
    problem = EEProblem(cfg.scenario, model=cfg.energy, settings=cfg.solver)
    sol = dinkelbach_solve(problem)
    sc = SimConfig(cfg.validate.n_slots, seed=cfg.simulation.seed, warmup_slots=min(10_000, cfg.validate.n_slots // 10))
    a = simulate(cfg.scenario, sol.alloc, sc)
    b = simulate(cfg.scenario, sol.alloc, sc)
    same = bool(np.array_equal(a.delay_hist, b.delay_hist) and np.array_equal(a.total_delivered_quanta,
                                                                             b.total_delivered_quanta))
    leak = int(np.max(np.abs(a.total_arrived_quanta - a.total_delivered_quanta - a.backlog_quanta)))
    return PropertyResult("conservation", leak == 0 and same, float(leak), 0.0,
                          f"deterministic={same}; measured = max bit-quanta imbalance")


CHECKS = {
    "roundtrip": check_roundtrip,
    "quadrature": check_quadrature,
    "closed_form": check_closed_form,
    "concavity": check_own_power_concavity,
    "monotonicity": check_monotonicity,
    "kkt": check_kkt,
    "conservation": check_conservation,
    "joint_concavity": check_joint_concavity,
}


def run_checks(cfg: ScenarioConfig, names=None) -> list:
    names = cfg.validate.properties if names is None else tuple(names)
    if not names:
        raise InvalidParameterError("empty property selection")
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise InvalidParameterError(f"unknown properties: {', '.join(unknown)} "
                                    f"(choose from {', '.join(PROPERTIES + EXTRA_PROPERTIES)})")
    return [CHECKS[n](cfg) for n in names]
