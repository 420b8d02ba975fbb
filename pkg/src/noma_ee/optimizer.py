"""Energy-efficiency maximisation under per-user delay-QoS and peak-power limits.

The objective is eta(P) = sum_k alpha_k(P; u_k*) / sum_k (P_c,k + w_k P_k) with
w_k = p_tx,k (two-mode circuitry) or 1 (single-mode). Dinkelbach's method
turns the ratio into a sequence of parametric problems

    F(q) = max_P  sum_k alpha_k(P) - q * sum_k (P_c,k + w_k P_k),

each solved by cyclic per-user golden-section line searches inside a
projected-subgradient loop on the peak-power multipliers.

QoS constraint. A user only meets its delay target when its effective
capacity at u_k* reaches the effective bandwidth of its traffic at u_k*
(the balance condition that defines u_k*). With ``qos_rate_constraint`` on,
every point the line searches visit is feasible: user k's power is
``max(x_k, phi_k(P_{>k}))`` where phi_k is the smallest power meeting the
requirement given the users decoded after it. The map is applied from the
last-decoded user to the first (SIC makes the constraints triangular), so
the searches run over the box x in [0, P_max]^K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import PowerAllocation, Scenario, SystemParams, UserProfile
from .effcap import effcap_user, effective_bandwidth
from .errors import ConvergenceError, InvalidParameterError, LineSearchError, QosInfeasibleError
from .qos import QosState, qos_state, qos_state_for_exponent

TWO_MODE = "two-mode"
SINGLE_MODE = "single-mode"
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EnergyModel:
    mode: str = TWO_MODE
    circuit_power_w: tuple | None = None  # None: take each profile's circuit power

    def __post_init__(self):
        if self.mode not in (TWO_MODE, SINGLE_MODE):
            raise InvalidParameterError(f"unknown energy model {self.mode!r}")
        if self.circuit_power_w is not None and any(c < 0 for c in self.circuit_power_w):
            raise InvalidParameterError("circuit power must be >= 0")


def total_power(profile: UserProfile, state: QosState, p_tx_w: float, model: EnergyModel) -> float:
    """Average power drawn by one user: circuit power plus (duty-cycled) transmit power."""
    if model.mode == TWO_MODE:
        return profile.circuit_power_w + state.tx_prob * p_tx_w
    return profile.circuit_power_w + p_tx_w


@dataclass(frozen=True)
class SolverSettings:
    dinkelbach_tol: float = 1e-6
    dinkelbach_max_iter: int = 50
    dual_max_iter: int = 500
    dual_tol: float = 1e-12
    power_rtol: float = 1e-6
    max_passes: int = 200
    line_search_rtol: float = 1e-7
    step0: float = 1e-2
    multiplier_sign: str = "standard"  # or "printed"
    qos_rate_constraint: bool = True
    fd_rel_step: float = 1e-5
    min_power_frac: float = 1e-12

    def __post_init__(self):
        if self.multiplier_sign not in ("standard", "printed"):
            raise InvalidParameterError(f"multiplier_sign must be 'standard' or 'printed', got {self.multiplier_sign!r}")


class EEProblem:
    """A scenario with fixed QoS exponents, an energy model and solver settings.

    Effective capacities are memoised on the powers they depend on
    (alpha_k only sees P_k..P_K).
    """

    def __init__(self, scenario: Scenario, qos_states=None, model: EnergyModel | None = None,
                 settings: SolverSettings | None = None):
        self.scenario = scenario
        self.params = scenario.params
        self.model = model or EnergyModel()
        self.settings = settings or SolverSettings()
        if qos_states is None:
            qos_states = [qos_state(p, self.params) for p in scenario.profiles]
        self.qos = tuple(qos_states)
        if len(self.qos) != scenario.n_users:
            raise InvalidParameterError("need one QoS state per user")
        self.u = np.array([s.u_star for s in self.qos])
        self.tx_probs = np.array([s.tx_prob for s in self.qos])
        if self.model.circuit_power_w is not None:
            self.circuit = np.array(self.model.circuit_power_w, dtype=float)
        else:
            self.circuit = np.array([p.circuit_power_w for p in scenario.profiles])
        self.weights = self.tx_probs.copy() if self.model.mode == TWO_MODE else np.ones(scenario.n_users)
        self.required = np.array([effective_bandwidth(p, u, self.params) for p, u in zip(scenario.profiles, self.u)])
        self._alpha_cache: dict = {}
        self._phi_cache: dict = {}

    @classmethod
    def with_exponents(cls, scenario: Scenario, exponents, model=None, settings=None):
        states = [qos_state_for_exponent(p, u) for p, u in zip(scenario.profiles, exponents)]
        return cls(scenario, states, model, settings)

    @property
    def n_users(self):
        return self.scenario.n_users

    @property
    def peak(self):
        return self.params.peak_power_w

    # -- objective pieces -------------------------------------------------
    def effcap(self, k: int, P: np.ndarray) -> float:
        key = (k, P[k:].tobytes())
        val = self._alpha_cache.get(key)
        if val is None:
            if len(self._alpha_cache) > 200_000:
                self._alpha_cache.clear()
            val = effcap_user(k, P, self.u[k], self.tx_probs, self.scenario)
            self._alpha_cache[key] = val
        return val

    def effcaps(self, P) -> np.ndarray:
        P = np.asarray(P, dtype=float)
        return np.array([self.effcap(k, P) for k in range(self.n_users)])

    def numerator(self, P) -> float:
        return float(self.effcaps(P).sum())

    def denominator(self, P) -> float:
        return float(self.circuit.sum() + self.weights @ np.asarray(P, dtype=float))

    def eta(self, P) -> float:
        den = self.denominator(P)
        if not den > 0:
            raise InvalidParameterError("total consumed power is zero")
        return self.numerator(P) / den

    def lagrangian(self, P, q, lam) -> float:
        sign = -1.0 if self.settings.multiplier_sign == "standard" else 1.0
        return self.numerator(P) - q * self.denominator(P) + sign * float(lam @ (P - self.peak))

    # -- QoS feasibility map ----------------------------------------------
    def min_power(self, k: int, P: np.ndarray) -> float:
        """Smallest P_k meeting user k's required effective capacity given P_{>k}.

        Returns 0 when the constraint is disabled and +inf when even P_max
        falls short.
        """
        if not self.settings.qos_rate_constraint:
            return 0.0
        key = (k, P[k + 1:].tobytes())
        if key in self._phi_cache:
            return self._phi_cache[key]
        work = np.array(P, dtype=float)
        target = self.required[k]

        def gap(z):
            work[k] = math.exp(z)
            return self.effcap(k, work) - target

        z_hi = math.log(self.peak)
        z_lo = math.log(self.peak * 1e-15)
        if gap(z_hi) < 0:
            phi = math.inf
        elif gap(z_lo) >= 0:
            phi = math.exp(z_lo)
        else:
            phi = math.exp(optimize.brentq(gap, z_lo, z_hi, xtol=1e-13, rtol=1e-15))
        if len(self._phi_cache) > 200_000:
            self._phi_cache.clear()
        self._phi_cache[key] = phi
        return phi

    def repair(self, x, P=None, top: int | None = None):
        """Feasible powers for search point x, recomputing users top, top-1, ..., 0.

        Users above ``top`` keep their entries in ``P``. Returns
        ``(powers, tight)`` or ``(None, None)`` when some user cannot meet its
        requirement.
        """
        n = self.n_users
        top = n - 1 if top is None else top
        out = np.zeros(n) if P is None else np.array(P, dtype=float)
        tight = np.zeros(n, dtype=bool)
        for k in range(top, -1, -1):
            phi = self.min_power(k, out)
            if not math.isfinite(phi):
                return None, None
            tight[k] = self.settings.qos_rate_constraint and x[k] <= phi
            out[k] = min(max(x[k], phi), self.peak)
        return out, tight

    def tight_flags(self, x, P) -> np.ndarray:
        return np.array([self.settings.qos_rate_constraint and x[k] <= self.min_power(k, P)
                         for k in range(self.n_users)])


# -- subgradient and closed-form diagnostics ------------------------------

def subgradient_step(lam, alloc: PowerAllocation, j: int, params: SystemParams, step0: float = 1e-2,
                     sign: str = "printed") -> np.ndarray:
    """One projected subgradient update of the peak-power multipliers.

    ``sign="printed"``: lambda + beta_j (P_max - P); ``"standard"``:
    lambda + beta_j (P - P_max), the dual-descent direction for
    L = f - lambda (P - P_max). beta_j = step0 / sqrt(j).
    """
    if j < 1:
        raise InvalidParameterError("iteration index starts at 1")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise InvalidParameterError("multipliers must be >= 0")
    beta = step0 / math.sqrt(j)
    slack = params.peak_power_w - alloc.tx_power_w
    if sign == "printed":
        return np.maximum(lam + beta * slack, 0.0)
    if sign == "standard":
        return np.maximum(lam - beta * slack, 0.0)
    raise InvalidParameterError(f"unknown sign convention {sign!r}")


def closed_form_power(gamma_k: float, q: float, p_k: float, lambda_k: float, params: SystemParams):
    """Stationary power [B gamma / (ln2 (1 + gamma) (q p - lambda))]^+ clipped to P_max.

    Returns ``(power, unbounded)``; ``unbounded`` is True when q p <= lambda
    and the map has no finite value (P_max is returned).
    """
    denom = q * p_k - lambda_k
    if denom <= 0:
        return params.peak_power_w, True
    val = params.bandwidth_hz * gamma_k / (math.log(2.0) * (1.0 + gamma_k) * denom)
    return min(max(val, 0.0), params.peak_power_w), False


# -- results --------------------------------------------------------------

@dataclass
class TraceEntry:
    q: float
    F: float
    powers: np.ndarray
    dual_iterations: int
    passes: int
    multipliers: np.ndarray


@dataclass
class DinkelbachTrace:
    iterations: list = field(default_factory=list)

    def append(self, entry: TraceEntry):
        self.iterations.append(entry)

    @property
    def q_values(self):
        return np.array([e.q for e in self.iterations])

    @property
    def F_values(self):
        return np.array([e.F for e in self.iterations])

    def __len__(self):
        return len(self.iterations)


@dataclass
class InnerResult:
    alloc: PowerAllocation
    x: np.ndarray
    multipliers: np.ndarray
    tight: np.ndarray
    dual_iterations: int
    passes: int
    dual_converged: bool


@dataclass
class KktReport:
    stationarity: np.ndarray  # |dL/dP_k| / (q w_k); nan where a bound multiplier absorbs it
    peak_multipliers: np.ndarray
    rate_multipliers: np.ndarray
    slackness_gap: np.ndarray  # lambda_k (P_k - P_max)
    rate_slackness_gap: np.ndarray  # mu_k (alpha_k - r_k) / r_k
    interior: np.ndarray

    @property
    def max_interior_residual(self) -> float:
        vals = self.stationarity[self.interior]
        return float(vals.max()) if vals.size else 0.0


@dataclass
class OptimalAllocation:
    alloc: PowerAllocation
    qos: tuple
    eta: float
    trace: DinkelbachTrace
    kkt: KktReport
    tight: np.ndarray
    effcaps: np.ndarray
    required: np.ndarray
    user_power_w: np.ndarray  # P_c + w P per user
    multipliers: np.ndarray
    mode: str = TWO_MODE

    @property
    def kkt_residuals(self):
        return self.kkt.stationarity


# -- inner problem ----------------------------------------------------------

def _line_search(problem: EEProblem, k, x, P, q, lam):
    """Maximise the Lagrangian over x_k with the other search coordinates fixed."""
    s = problem.settings
    # below phi_k the repaired power is flat at phi_k, and a plateau would
    # mislead the bracket, so the search starts at the QoS floor
    floor = max(problem.peak * s.min_power_frac, problem.min_power(k, P))
    z_lo = math.log(min(floor, problem.peak))
    z_hi = math.log(problem.peak)
    seen = {}

    def value(xk):
        if xk in seen:
            return seen[xk]
        x2 = x.copy()
        x2[k] = xk
        P2, _ = problem.repair(x2, P, top=k)
        v = -math.inf if P2 is None else problem.lagrangian(P2, q, lam)
        seen[xk] = (v, P2)
        return seen[xk]

    a, b = z_lo, z_hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = value(math.exp(c))[0]
    fd = value(math.exp(d))[0]
    while (b - a) > s.line_search_rtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = value(math.exp(c))[0]
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = value(math.exp(d))[0]
    z_best = c if fc >= fd else d
    current = x[k]
    for cand in (0.0, math.exp(z_lo), problem.peak, current):
        value(cand)
    v_cur = seen[current][0]
    v_max = max(v for v, _ in seen.values())
    scale = abs(problem.numerator(P)) + abs(q) * problem.denominator(P) + 1.0
    tol = 1e-13 * scale
    # a point outside the final bracket beating it by a clear margin means the
    # coordinate function is not unimodal
    v_bracket = seen[math.exp(z_best)][0]
    if v_max > v_bracket + 1e-9 * scale:
        outside = [xk for xk, (v, _) in seen.items()
                   if v > v_bracket + 1e-9 * scale and xk > 0 and not (a <= math.log(xk) <= b)]
        if outside and all(xk not in (0.0, current) for xk in outside):
            raise LineSearchError(
                f"user {k}: coordinate objective is not unimodal on [{math.exp(z_lo):.3g}, {problem.peak:.3g}] W")
    if v_cur >= v_max - tol:
        return current, P
    best = min((xk for xk, (v, _) in seen.items() if v >= v_max - tol), key=lambda xk: seen[xk][1][k])
    return best, seen[best][1]


def _coordinate_ascent(problem: EEProblem, q, lam, x, P):
    s = problem.settings
    floor = problem.peak * s.min_power_frac
    passes = 0
    for passes in range(1, s.max_passes + 1):
        before = P.copy()
        for k in range(problem.n_users):
            x[k], P = _line_search(problem, k, x, P, q, lam)
        change = np.max(np.abs(P - before) / np.maximum(before, floor))
        if change < s.power_rtol:
            break
    return x, P, passes


def _start(problem: EEProblem, x0):
    x = np.full(problem.n_users, problem.peak / 2.0) if x0 is None else np.array(x0, dtype=float)
    P, _ = problem.repair(x)
    if P is None:
        # P_max/2 for everyone can drown the early-decoded users; fall back to
        # the minimal feasible powers
        x = np.zeros(problem.n_users)
        P, _ = problem.repair(x)
    if P is None:
        raise QosInfeasibleError("some user cannot reach its required effective capacity at peak power")
    return x, P


def inner_maximize(q: float, problem: EEProblem, x0=None, lam0=None) -> InnerResult:
    """Maximise sum alpha - q * sum P_total over the feasible powers."""
    if q < 0:
        raise InvalidParameterError(f"q must be >= 0, got {q}")
    s = problem.settings
    x, P = _start(problem, x0)
    lam = np.zeros(problem.n_users) if lam0 is None else np.array(lam0, dtype=float)
    converged = False
    total_passes = 0
    j = 0
    for j in range(1, s.dual_max_iter + 1):
        x, P, passes = _coordinate_ascent(problem, q, lam, x, P)
        total_passes += passes
        new = subgradient_step(lam, PowerAllocation(P), j, problem.params, s.step0, s.multiplier_sign)
        delta = float(np.max(np.abs(new - lam)))
        lam = new
        if delta <= s.dual_tol * max(1.0, q):
            converged = True
            break
    tight = problem.tight_flags(x, P)
    return InnerResult(PowerAllocation(P), x, lam, tight, j, total_passes, converged)


# -- KKT --------------------------------------------------------------------

def effcap_jacobian(problem: EEProblem, P) -> np.ndarray:
    """J[j, k] = d alpha_j / d P_k by central differences (zero for j > k)."""
    n = problem.n_users
    h_rel = problem.settings.fd_rel_step
    J = np.zeros((n, n))
    for k in range(n):
        h = h_rel * max(P[k], problem.peak * 1e-12)
        up = np.array(P, dtype=float)
        dn = np.array(P, dtype=float)
        up[k] += h
        dn[k] = max(P[k] - h, 0.0)
        for j in range(k + 1):
            J[j, k] = (effcap_user(j, up, problem.u[j], problem.tx_probs, problem.scenario)
                       - effcap_user(j, dn, problem.u[j], problem.tx_probs, problem.scenario)) / (up[k] - dn[k])
    return J


def kkt_residual(alloc: PowerAllocation, q: float, multipliers, problem: EEProblem, tight=None,
                 rate_multipliers=None) -> KktReport:
    """KKT check at ``alloc`` for the parametric problem with parameter q.

    Stationarity for user k reads
        sum_j dalpha_j/dP_k - q w_k - lambda_k + sum_{j tight} mu_j dalpha_j/dP_k = 0.
    Multipliers of active constraints that are not supplied are recovered
    from these equations in decoding order (the system is triangular).
    """
    P = np.asarray(alloc.tx_power_w, dtype=float)
    n = problem.n_users
    tight = np.zeros(n, dtype=bool) if tight is None else np.asarray(tight, dtype=bool)
    lam = np.zeros(n) if multipliers is None else np.array(multipliers, dtype=float)
    mu = np.zeros(n) if rate_multipliers is None else np.array(rate_multipliers, dtype=float)
    at_peak = alloc.at_peak(problem.params, rtol=1e-9)
    J = effcap_jacobian(problem, P)
    grad = J.sum(axis=0) - q * problem.weights
    stat = np.full(n, np.nan)
    at_zero = P <= 0.0
    interior = ~(tight | at_peak | at_zero)
    for k in range(n):
        g = grad[k] + sum(mu[j] * J[j, k] for j in range(k) if tight[j])
        if tight[k] and rate_multipliers is None:
            mu[k] = max(-g / J[k, k], 0.0) if J[k, k] > 0 else 0.0
        if tight[k]:
            g += mu[k] * J[k, k]
        if at_peak[k] and multipliers is None:
            lam[k] = max(g, 0.0)
        if at_peak[k]:
            g -= lam[k]
        if at_zero[k] and not tight[k]:
            g = max(g, 0.0)  # P_k >= 0 absorbs a negative gradient
        stat[k] = abs(g) / max(q * problem.weights[k], 1e-300)
    alphas = problem.effcaps(P)
    return KktReport(
        stationarity=stat,
        peak_multipliers=lam,
        rate_multipliers=mu,
        slackness_gap=lam * (P - problem.peak),
        rate_slackness_gap=mu * (alphas - problem.required) / problem.required,
        interior=interior,
    )


# -- Dinkelbach -------------------------------------------------------------

def dinkelbach_solve(problem: EEProblem, x0=None) -> OptimalAllocation:
    """Maximise eta by Dinkelbach iterations q_{i+1} = N(P_i) / D(P_i)."""
    s = problem.settings
    x, P = _start(problem, x0)
    q = problem.eta(P)
    trace = DinkelbachTrace()
    lam = np.zeros(problem.n_users)
    inner = None
    for _ in range(s.dinkelbach_max_iter):
        inner = inner_maximize(q, problem, x0=x)
        x = inner.x
        P = np.array(inner.alloc.tx_power_w)
        num, den = problem.numerator(P), problem.denominator(P)
        F = num - q * den
        lam = inner.multipliers
        trace.append(TraceEntry(q, F, P.copy(), inner.dual_iterations, inner.passes, lam.copy()))
        if abs(F) <= s.dinkelbach_tol * den:
            break
        q = num / den
    else:
        raise ConvergenceError(f"Dinkelbach did not converge in {s.dinkelbach_max_iter} iterations", trace)
    eta = problem.eta(P)
    alloc = PowerAllocation(P)
    tight = inner.tight
    peak_mult = lam if s.multiplier_sign == "printed" else None
    kkt = kkt_residual(alloc, eta, peak_mult, problem, tight=tight)
    return OptimalAllocation(
        alloc=alloc,
        qos=problem.qos,
        eta=eta,
        trace=trace,
        kkt=kkt,
        tight=tight,
        effcaps=problem.effcaps(P),
        required=problem.required.copy(),
        user_power_w=problem.circuit + problem.weights * P,
        multipliers=kkt.peak_multipliers,
        mode=problem.model.mode,
    )


def energy_efficiency(alloc: PowerAllocation, problem: EEProblem) -> float:
    """Sum effective capacity over total consumed power (bits/J)."""
    return problem.eta(np.asarray(alloc.tx_power_w))


def ee_vs_exponent_curve(scenario: Scenario, u_scales, model: EnergyModel | None = None,
                         settings: SolverSettings | None = None):
    """Optimised eta when every user's exponent is scaled from its delay-optimal value."""
    scales = np.asarray(u_scales, dtype=float)
    if np.any(np.diff(scales) <= 0):
        raise InvalidParameterError("u grid must be increasing")
    base = np.array([qos_state(p, scenario.params).u_star for p in scenario.profiles])
    L = np.array([p.mean_burst_bits for p in scenario.profiles])
    if np.any(scales[-1] * base * L >= 1):
        raise InvalidParameterError("largest exponent violates u*L < 1")
    curve = []
    x0 = None
    for c in scales:
        problem = EEProblem.with_exponents(scenario, c * base, model, settings)
        sol = dinkelbach_solve(problem, x0=x0)
        curve.append((float(c), sol.eta))
    return curve
