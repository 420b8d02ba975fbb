import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma_ee.core import SystemParams, UserProfile
from noma_ee.effcap import effective_bandwidth
from noma_ee.errors import InfeasibleDelayError, InvalidParameterError, StabilityInfeasibleError
from noma_ee.qos import (QosState, backlog_ccdf, balance_qos_exponent, delay_violation_approx,
                         optimal_qos_exponent, outage_base, qos_state, qos_state_for_exponent,
                         queueing_delay_ccdf, required_rate)

PARAMS = SystemParams.from_table()


def prof(p=0.5, L=1000.0, d_max=0.01, eps=0.1):
    return UserProfile(300.0, 4.0, p, L, 0.01, d_max, eps)


class TestExponent:
    def test_example(self):
        beta = 10 ** 0.1
        assert outage_base(prof(), PARAMS) == pytest.approx(1.258925, rel=1e-6)
        u = optimal_qos_exponent(prof(), PARAMS)
        assert u == pytest.approx((beta - 1) / ((0.5 + beta - 1) * 1000), rel=1e-12)
        assert u == pytest.approx(3.4118e-4, rel=1e-4)
        assert delay_violation_approx(u, prof(), PARAMS, 0.01) == pytest.approx(0.1, abs=1e-12)

    def test_loose_tolerance_gives_small_exponent(self):
        us = [optimal_qos_exponent(prof(eps=e), PARAMS) for e in (0.9, 0.99, 1 - 1e-6, 1 - 1e-12)]
        assert np.all(np.diff(us) < 0)
        assert us[-1] < 1e-14

    def test_full_activity(self):
        beta = 10 ** 0.1
        assert optimal_qos_exponent(prof(p=1.0), PARAMS) == pytest.approx((beta - 1) / (beta * 1000), rel=1e-12)

    def test_delay_below_slot(self):
        with pytest.raises(InfeasibleDelayError):
            optimal_qos_exponent(prof(d_max=0.5e-3), PARAMS)
        assert optimal_qos_exponent(prof(d_max=1e-3), PARAMS) * 1000 < 1

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 1.0), st.floats(0, 4), st.integers(1, 1000), st.floats(-6, -0.01))
    def test_roundtrip(self, p, log_l, n_slots, log_eps):
        pr = prof(p, 10 ** log_l, n_slots * 1e-3, 10 ** log_eps)
        u = optimal_qos_exponent(pr, PARAMS)
        assert 0 < u * pr.mean_burst_bits < 1
        assert delay_violation_approx(u, pr, PARAMS, pr.delay_bound_s) == pytest.approx(pr.delay_tolerance, abs=1e-12)

    def test_stricter_requirement_larger_exponent(self):
        eps = np.geomspace(0.5, 1e-6, 30)
        u_eps = [optimal_qos_exponent(prof(eps=e), PARAMS) for e in eps]
        assert np.all(np.diff(u_eps) > 0)
        delays = np.arange(50, 0, -1) * 1e-3
        u_d = [optimal_qos_exponent(prof(d_max=d), PARAMS) for d in delays]
        assert np.all(np.diff(u_d) > 0)


class TestDelayTail:
    def test_no_exponent_no_guarantee(self):
        assert delay_violation_approx(1e-15, prof(), PARAMS, 0.01) == pytest.approx(1.0, abs=1e-10)

    def test_domain(self):
        with pytest.raises(InvalidParameterError):
            delay_violation_approx(1e-3, prof(), PARAMS, 0.01)
        with pytest.raises(InvalidParameterError):
            delay_violation_approx(-1e-4, prof(), PARAMS, 0.01)
        with pytest.raises(InfeasibleDelayError):
            delay_violation_approx(1e-4, prof(), PARAMS, 1e-4)
        with pytest.raises(InvalidParameterError):
            queueing_delay_ccdf(1e-4, prof(), PARAMS, -1.0)

    def test_queueing_tail(self):
        u = optimal_qos_exponent(prof(), PARAMS)
        ul = u * 1000
        base = (1 - ul) / (1 - ul + 0.5 * ul)
        assert queueing_delay_ccdf(u, prof(), PARAMS, 0.0) == pytest.approx(base, rel=1e-14)
        assert queueing_delay_ccdf(u, prof(), PARAMS, 9e-3) == pytest.approx(0.1, rel=1e-12)
        grid = [queueing_delay_ccdf(u, prof(), PARAMS, t) for t in np.linspace(0, 0.1, 101)]
        assert np.all(np.diff(grid) < 0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-7, 0.999), st.floats(0.01, 1), st.floats(0, 0.2))
    def test_tail_and_violation_coincide(self, ul, p, t):
        pr = prof(p=p)
        u = ul / pr.mean_burst_bits
        assert queueing_delay_ccdf(u, pr, PARAMS, t) == delay_violation_approx(u, pr, PARAMS, t + 1e-3) \
            or queueing_delay_ccdf(u, pr, PARAMS, t) == pytest.approx(
                delay_violation_approx(u, pr, PARAMS, t + 1e-3), rel=1e-13)


class TestState:
    def test_example(self):
        s = qos_state(prof(), PARAMS)
        assert s.u_star == pytest.approx(3.4118e-4, rel=1e-4)
        assert s.p_b == pytest.approx(0.65882, abs=1e-5)
        assert s.p_tx == pytest.approx(0.82941, abs=1e-5)
        assert s.p_tx == pytest.approx(0.5 + s.p_b - 0.5 * s.p_b, rel=1e-15)

    def test_always_traffic(self):
        assert qos_state(prof(p=1.0, eps=0.3), PARAMS).tx_prob == 1.0

    def test_saturation_limit(self):
        s = qos_state(prof(p=0.01, eps=1e-12, d_max=1e-3), PARAMS)
        assert s.p_b < 1e-8
        assert s.p_tx == pytest.approx(0.01, rel=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(1e-6, 0.999))
    def test_probability_ranges(self, p, ul):
        s = qos_state_for_exponent(prof(p=p), ul / 1000.0)
        assert 0 < s.p_b < 1
        assert p < s.p_tx <= 1

    def test_backlog(self):
        s = QosState(3.4118e-4, 0.6588, 0.0)
        assert backlog_ccdf(s, 0.0) == 0.6588
        assert backlog_ccdf(s, 1000.0) == pytest.approx(0.4684, abs=1e-4)
        assert backlog_ccdf(s, 1e9) == 0.0
        with pytest.raises(InvalidParameterError):
            backlog_ccdf(s, -1.0)

    def test_required_rate(self):
        pr = prof()
        u = optimal_qos_exponent(pr, PARAMS)
        assert required_rate(pr, PARAMS) == effective_bandwidth(pr, u, PARAMS)


class TestBalance:
    @pytest.mark.parametrize("ul", [0.01, 0.3, 0.9])
    def test_constant_service(self, ul):
        pr = prof()
        u0 = ul / pr.mean_burst_bits
        rate = effective_bandwidth(pr, u0, PARAMS)
        u = balance_qos_exponent(pr, lambda _u: rate, PARAMS)
        assert u == pytest.approx(u0, abs=1e-10)
        assert abs(effective_bandwidth(pr, u, PARAMS) - rate) <= 1e-6 * rate

    def test_unstable_queue(self):
        pr = prof()
        with pytest.raises(StabilityInfeasibleError):
            balance_qos_exponent(pr, lambda _u: 0.9 * 0.5 * 1000 / 1e-3, PARAMS)
