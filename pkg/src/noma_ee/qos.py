"""Delay-QoS algebra: (D_max, epsilon) -> QoS exponent -> buffer/transmit probabilities.

A delay requirement P(D > D_max) <= epsilon with slot T_s defines
beta = epsilon ** (-T_s / D_max) and the smallest admissible exponent

    u* = (beta - 1) / ((p + beta - 1) L).

The queueing-delay tail used throughout is
P(D_q > t) = r ** (t / T_s + 1) with r = (1 - uL) / (1 - uL + p u L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import SystemParams, UserProfile, mean_arrival_rate
from .effcap import effective_bandwidth
from .errors import InfeasibleDelayError, InvalidParameterError, StabilityInfeasibleError


@dataclass(frozen=True)
class QosState:
    u_star: float
    nonempty_buffer_prob: float
    tx_prob: float

    @property
    def p_b(self):
        return self.nonempty_buffer_prob

    @property
    def p_tx(self):
        return self.tx_prob


def _check_delay(d_max, params):
    if d_max < params.slot_duration_s:
        raise InfeasibleDelayError(
            f"delay bound {d_max} s is below one slot ({params.slot_duration_s} s); "
            "transmission alone takes a slot")


def _check_ul(u, profile):
    if not u > 0:
        raise InvalidParameterError(f"QoS exponent must be positive, got {u}")
    if u * profile.mean_burst_bits >= 1.0:
        raise InvalidParameterError(f"u*L = {u * profile.mean_burst_bits} must be < 1")


def outage_base(profile: UserProfile, params: SystemParams) -> float:
    """beta = epsilon^(-T_s / D_max)."""
    _check_delay(profile.delay_bound_s, params)
    return profile.delay_tolerance ** (-params.slot_duration_s / profile.delay_bound_s)


def optimal_qos_exponent(profile: UserProfile, params: SystemParams) -> float:
    """Smallest QoS exponent (1/bit) that meets the delay-outage requirement."""
    _check_delay(profile.delay_bound_s, params)
    # beta - 1 via expm1 keeps precision when epsilon -> 1
    bm1 = math.expm1(-math.log(profile.delay_tolerance) * params.slot_duration_s / profile.delay_bound_s)
    return bm1 / ((profile.arrival_prob + bm1) * profile.mean_burst_bits)


def _delay_base(u, profile):
    ul = u * profile.mean_burst_bits
    return (1.0 - ul) / (1.0 - ul + profile.arrival_prob * ul)


def delay_violation_approx(u: float, profile: UserProfile, params: SystemParams, d_max: float) -> float:
    """Approximate P(D > d_max) for total delay D = D_q + T_s."""
    _check_ul(u, profile)
    _check_delay(d_max, params)
    return _delay_base(u, profile) ** (d_max / params.slot_duration_s)


def queueing_delay_ccdf(u: float, profile: UserProfile, params: SystemParams, t: float) -> float:
    """Approximate P(D_q > t)."""
    _check_ul(u, profile)
    if t < 0:
        raise InvalidParameterError(f"t must be >= 0, got {t}")
    return _delay_base(u, profile) ** (t / params.slot_duration_s + 1.0)


def backlog_ccdf(state: QosState, threshold_bits: float) -> float:
    if threshold_bits < 0:
        raise InvalidParameterError(f"threshold must be >= 0, got {threshold_bits}")
    return state.nonempty_buffer_prob * math.exp(-state.u_star * threshold_bits)


def qos_state_for_exponent(profile: UserProfile, u: float) -> QosState:
    """Buffer and transmission probabilities implied by an exponent u (u L < 1)."""
    _check_ul(u, profile)
    p_b = 1.0 - u * profile.mean_burst_bits
    p = profile.arrival_prob
    # p + p_b - p p_b, written so that p = 1 gives exactly 1
    return QosState(u_star=u, nonempty_buffer_prob=p_b, tx_prob=1.0 - (1.0 - p) * (1.0 - p_b))


def qos_state(profile: UserProfile, params: SystemParams) -> QosState:
    return qos_state_for_exponent(profile, optimal_qos_exponent(profile, params))


def balance_qos_exponent(profile: UserProfile, effcap_evaluator, params: SystemParams, xtol: float = 1e-10) -> float:
    """Root u* of effective_bandwidth(u) = effcap_evaluator(u) on (0, 1/L).

    ``effcap_evaluator`` maps an exponent to the effective capacity of the
    service process (bits/s).
    """
    L = profile.mean_burst_bits

    def gap(u):
        return effective_bandwidth(profile, u, params) - effcap_evaluator(u)

    lo = 1e-9 / L
    hi = (1.0 - 1e-9) / L
    g_lo = gap(lo)
    if g_lo >= 0:
        raise StabilityInfeasibleError(
            f"mean arrival rate {mean_arrival_rate(profile, params):.6g} bit/s is not below "
            f"the service's effective capacity near u=0 ({effcap_evaluator(lo):.6g} bit/s)")
    if gap(hi) <= 0:
        raise StabilityInfeasibleError("no sign change of the bandwidth/capacity gap on (0, 1/L)")
    return optimize.brentq(gap, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


def required_rate(profile: UserProfile, params: SystemParams, u: float | None = None) -> float:
    """Effective bandwidth at the QoS exponent: the effective capacity a user must reach."""
    if u is None:
        u = optimal_qos_exponent(profile, params)
    return effective_bandwidth(profile, u, params)
