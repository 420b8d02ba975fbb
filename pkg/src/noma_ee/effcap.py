"""Effective bandwidth of Bernoulli-exponential arrivals and effective
capacity of the SIC uplink service process.

For user k with exponent u (per bit), slot T_s and bandwidth B the service
in one slot is S_k = T_s B log2(1 + gamma_k) and

    alpha_k(u) = -log E[exp(-u S_k)] / (u T_s) = -log E[(1 + gamma_k)^(-theta)] / (u T_s)

with theta = u T_s B / ln 2.  Writing t = (1 + x)^(-theta) turns the
expectation into 1 - int_0^1 P(gamma_k > x(t)) dt, and under Rayleigh
fading the SINR tail factorises over the interferers:

    P(gamma_k > x) = exp(-s) * prod_{i>k} [(1 - p_i) + p_i / (1 + s a_i)],   s = x / a_k

where a_i = P_i E|h_i|^2 / sigma^2 is the mean received SNR of user i and
p_i the probability that interferer i is transmitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .core import PowerAllocation, Scenario, SystemParams, UserProfile
from .errors import DivergentMomentError, FormulaDomainError, InvalidParameterError
from .quadrature import adaptive_gauss_legendre

LN2 = math.log(2.0)
LOG_FLOOR = 1e-300


def _check_u(u):
    if not (u > 0 and math.isfinite(u)):
        raise InvalidParameterError(f"QoS exponent must be positive and finite, got {u}")


def theta(u: float, params: SystemParams) -> float:
    """Exponent of (1 + gamma) in E[exp(-u S)]."""
    return u * params.slot_duration_s * params.bandwidth_hz / LN2


def effective_bandwidth(profile: UserProfile, u: float, params: SystemParams) -> float:
    """Effective bandwidth (bits/s) of Bernoulli(p) slots carrying Exp(L) bursts."""
    _check_u(u)
    ul = u * profile.mean_burst_bits
    if ul >= 1.0:
        raise DivergentMomentError(f"u*L = {ul} >= 1: the burst moment generating function diverges")
    # p/(1-uL) + 1 - p  ==  1 + p uL/(1-uL)
    return math.log1p(profile.arrival_prob * ul / (1.0 - ul)) / (u * params.slot_duration_s)


@dataclass(frozen=True)
class EffCapQuery:
    user_index: int
    alloc: PowerAllocation
    tx_probs: np.ndarray
    u: float
    params: SystemParams
    profiles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        probs = np.asarray(self.tx_probs, dtype=float)
        if np.any((probs < 0) | (probs > 1)):
            raise InvalidParameterError(f"tx_probs must lie in [0, 1], got {probs}")
        object.__setattr__(self, "tx_probs", probs)
        object.__setattr__(self, "profiles", tuple(self.profiles))
        n = len(self.alloc)
        if not 0 <= self.user_index < n:
            raise InvalidParameterError(f"user index {self.user_index} out of range for {n} users")
        if len(probs) != n or (self.profiles and len(self.profiles) != n):
            raise InvalidParameterError("alloc, tx_probs and profiles must have equal length")
        _check_u(self.u)

    @property
    def mean_gains(self) -> np.ndarray:
        if not self.profiles:
            return np.ones(len(self.alloc))
        return Scenario(self.params, self.profiles).mean_gains


def _mean_snr(tx_power_w, mean_gains, noise_power_w):
    return np.asarray(tx_power_w, dtype=float) * np.asarray(mean_gains, dtype=float) / noise_power_w


def _log_ccdf_factory(k, snr, tx_probs):
    """log P(gamma_k > x) as a vectorised function of x."""
    a_k = snr[k]
    others = [(a, p) for a, p in zip(snr[k + 1:], tx_probs[k + 1:]) if p > 0 and a > 0]

    def log_ccdf(x):
        s = x / a_k
        out = -s
        for a_i, p_i in others:
            out = out + np.log((1.0 - p_i) + p_i / (1.0 + s * a_i))
        return out

    return log_ccdf


def _t_breakpoints(k, snr, th):
    """Images in t of every decade of x where the integrand can change shape.

    Scales are x ~ 1 (the weight bends), x ~ a_k (own fading) and
    x ~ a_k / a_i (interferer i).
    """
    a_k = snr[k]
    scales = [1.0, a_k] + [a_k / a for a in snr[k + 1:] if a > 0]
    lo = math.floor(math.log10(min(scales))) - 3
    hi = math.ceil(math.log10(max(scales) * 50.0))
    x = 10.0 ** np.arange(lo, hi + 1, dtype=float)
    return np.exp(-th * np.log1p(x))


def log_mgf_service(k, tx_power_w, mean_gains, tx_probs, u, params, rtol=1e-8):
    """log E[exp(-u S_k)] via the single-integral formula on t in (0, 1)."""
    _check_u(u)
    snr = _mean_snr(tx_power_w, mean_gains, params.noise_power_w)
    if snr[k] <= 0:
        return 0.0
    th = theta(u, params)
    log_ccdf = _log_ccdf_factory(k, snr, np.asarray(tx_probs, dtype=float))

    def x_of_t(t):
        with np.errstate(over="ignore"):
            return np.expm1(-np.log(t) / th)

    def ccdf_t(t):
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.exp(log_ccdf(x_of_t(t)))
        return np.nan_to_num(val, nan=0.0)

    def cdf_t(t):
        with np.errstate(over="ignore", invalid="ignore"):
            val = -np.expm1(log_ccdf(x_of_t(t)))
        return np.nan_to_num(val, nan=1.0)

    breaks = _t_breakpoints(k, snr, th)
    # E[(1+gamma)^-theta] = 1 - I; integrate whichever of I and 1 - I is small
    # absolute floor: an error of 1e-18 in log E[.] is far below any rate of interest
    tail, _, _ = adaptive_gauss_legendre(ccdf_t, 0.0, 1.0, rtol=rtol, atol=1e-18, breakpoints=breaks)
    if tail <= 0.5:
        if tail >= 1.0:
            raise FormulaDomainError(f"log argument 1 - {tail} is not positive")
        return math.log1p(-tail)
    body, _, _ = adaptive_gauss_legendre(cdf_t, 0.0, 1.0, rtol=rtol, breakpoints=breaks)
    if not body > LOG_FLOOR:
        raise FormulaDomainError(
            f"log argument {body!r} clamped at {LOG_FLOOR}; effective capacity is unbounded at this u")
    return math.log(body)


def effcap_user(k, tx_power_w, u, tx_probs, scenario: Scenario, rtol=1e-8) -> float:
    """Effective capacity (bits/s) of user ``k`` for a raw power vector."""
    if tx_power_w[k] <= 0:
        return 0.0
    lm = log_mgf_service(k, tx_power_w, scenario.mean_gains, tx_probs, u, scenario.params, rtol=rtol)
    return -lm / (u * scenario.params.slot_duration_s)


def effcap_k_user(query: EffCapQuery) -> float:
    """Effective capacity of ``query.user_index`` from the single-integral formula."""
    k = query.user_index
    p = query.alloc.tx_power_w
    if p[k] <= 0:
        return 0.0
    lm = log_mgf_service(k, p, query.mean_gains, query.tx_probs, query.u, query.params)
    return -lm / (query.u * query.params.slot_duration_s)


def _log_mgf_over_snr(densities, snr_own, th):
    """log E[(1+x)^-theta] for x = snr_own * y, y drawn from a mixture on (0, inf).

    ``densities`` is a list of (weight, pdf). Integrated over z = log y so every
    scale of the integrand is resolved; the smaller of E[1 - w] and E[w] is
    integrated directly to keep relative precision at both extremes.
    """

    def expect(fn):
        def integrand(z):
            y = math.exp(z)
            return fn(y) * sum(wt * pdf(y) for wt, pdf in densities) * y

        z_lo = min(-math.log(snr_own), 0.0) - 50.0
        val, _ = integrate.quad(integrand, z_lo, math.log(60.0), epsabs=0.0, epsrel=1e-10, limit=400,
                                points=sorted({-math.log(snr_own), 0.0}))
        return val

    tail = expect(lambda y: -math.expm1(-th * math.log1p(snr_own * y)))
    if tail <= 0.5:
        return math.log1p(-tail)
    body = expect(lambda y: math.exp(-th * math.log1p(snr_own * y)))
    return math.log(max(body, LOG_FLOOR))


def _two_user_snrs(alloc, params, mean_gains):
    p = alloc.tx_power_w
    if len(p) != 2:
        raise InvalidParameterError("two-user formulas need exactly two powers")
    mg = np.ones(2) if mean_gains is None else np.asarray(mean_gains, dtype=float)
    return _mean_snr(p, mg, params.noise_power_w)


def effcap_two_user_first(alloc: PowerAllocation, tx_prob_2: float, u: float, params: SystemParams,
                          mean_gains=None) -> float:
    """Effective capacity of the first-decoded user of a two-user pair.

    Mixes the SINR density when user 2 sleeps (pure exponential) and when it
    transmits. In normalised units y = x / a_1 those densities are

        sleep:    exp(-y)
        transmit: exp(-y) * [1/(1 + a_2 y) + a_2/(1 + a_2 y)^2]

    ``mean_gains`` defaults to unit-mean channels.
    """
    _check_u(u)
    if not 0.0 <= tx_prob_2 <= 1.0:
        raise InvalidParameterError(f"tx_prob_2 must lie in [0, 1], got {tx_prob_2}")
    a1, a2 = _two_user_snrs(alloc, params, mean_gains)
    if a1 <= 0:
        return 0.0
    th = theta(u, params)

    def sleep_density(y):
        return math.exp(-y)

    def tx_density(y):
        d = 1.0 + a2 * y
        return math.exp(-y) * (1.0 / d + a2 / (d * d))

    lm = _log_mgf_over_snr([(tx_prob_2, tx_density), (1.0 - tx_prob_2, sleep_density)], a1, th)
    return -lm / (u * params.slot_duration_s)


def effcap_two_user_second(alloc: PowerAllocation, u: float, params: SystemParams, mean_gains=None) -> float:
    """Effective capacity of the last-decoded (interference-free) user of a pair."""
    _check_u(u)
    _, a2 = _two_user_snrs(alloc, params, mean_gains)
    if a2 <= 0:
        return 0.0
    lm = _log_mgf_over_snr([(1.0, lambda y: math.exp(-y))], a2, theta(u, params))
    return -lm / (u * params.slot_duration_s)


def sample_service_bits(query: EffCapQuery, n: int, rng: np.random.Generator, fading: bool = True) -> np.ndarray:
    """Draw n slot services S_k (bits) with random gains and interferer modes."""
    k = query.user_index
    p = query.alloc.tx_power_w
    mg = query.mean_gains
    params = query.params
    n_int = len(p) - k - 1
    if fading:
        own = rng.exponential(mg[k], n)
    else:
        own = np.full(n, mg[k])
    interference = np.zeros(n)
    for i in range(k + 1, k + 1 + n_int):
        g = rng.exponential(mg[i], n) if fading else np.full(n, mg[i])
        on = rng.random(n) < query.tx_probs[i]
        interference += p[i] * g * on
    gamma = p[k] * own / (interference + params.noise_power_w)
    return params.slot_duration_s * params.bandwidth_hz * np.log1p(gamma) / LN2


def effcap_monte_carlo(query: EffCapQuery, n_samples: int, rng: np.random.Generator, fading: bool = True,
                       chunk: int = 1 << 20):
    """Plug-in estimate of -log E[exp(-u S)]/(u T_s) and its delta-method standard error."""
    if n_samples < 10_000:
        raise InvalidParameterError(f"n_samples must be >= 1e4, got {n_samples}")
    u = query.u
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        y = np.expm1(-u * sample_service_bits(query, m, rng, fading=fading))
        total += y.sum()
        total_sq += np.dot(y, y)
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    uts = u * query.params.slot_duration_s
    est = -math.log1p(mean) / uts
    se = math.sqrt(var / n_samples) / (1.0 + mean) / uts
    return est, se


def sum_effective_capacity(alloc: PowerAllocation, qos_exponents, scenario: Scenario, tx_probs) -> float:
    """Sum over users of the single-integral effective capacity."""
    u = np.asarray(qos_exponents, dtype=float)
    probs = np.asarray(tx_probs, dtype=float)
    if not (len(u) == len(probs) == len(alloc) == scenario.n_users):
        raise InvalidParameterError("inconsistent vector lengths")
    p = alloc.tx_power_w
    return float(sum(effcap_user(k, p, u[k], probs, scenario) for k in range(scenario.n_users)))
