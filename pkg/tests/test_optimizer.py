import math

import numpy as np
import pytest
from conftest import make_scenario
from oracles import fixed_point_power, multi_user_grid, single_user_grid

from noma_ee.core import PowerAllocation, SystemParams, UserProfile
from noma_ee.errors import InvalidParameterError, LineSearchError, QosInfeasibleError
from noma_ee.optimizer import (SINGLE_MODE, TWO_MODE, EEProblem, EnergyModel, SolverSettings, closed_form_power,
                               dinkelbach_solve, ee_vs_exponent_curve, energy_efficiency, inner_maximize,
                               kkt_residual, subgradient_step, total_power)
from noma_ee.qos import QosState

PARAMS = SystemParams.from_table()
FREE = SolverSettings(qos_rate_constraint=False)
SHIPPED_USERS = [(300.0, 0.01), (600.0, 0.02), (900.0, 0.03)]


def single(d, dmax, settings=None, model=None):
    return EEProblem(make_scenario(150.0, delays=(dmax,), distances=(d,)), model=model, settings=settings)


class TestTotalPower:
    prof = UserProfile(300.0, 4.0, 0.5, 1000.0, 0.01, 0.01, 0.1)
    state = QosState(3.4118e-4, 0.65882, 0.82941)

    def test_example(self):
        assert total_power(self.prof, self.state, 1.0, EnergyModel()) == pytest.approx(0.83941, abs=1e-12)
        assert total_power(self.prof, self.state, 1.0, EnergyModel(SINGLE_MODE)) == pytest.approx(1.01)

    def test_always_on_modes_agree(self):
        st = QosState(1e-4, 0.9, 1.0)
        for p in (0.0, 0.3, 7.0):
            assert total_power(self.prof, st, p, EnergyModel()) == total_power(self.prof, st, p, EnergyModel(SINGLE_MODE))

    def test_no_transmit_power(self):
        assert total_power(self.prof, self.state, 0.0, EnergyModel()) == 0.01

    def test_model_validation(self):
        with pytest.raises(InvalidParameterError):
            EnergyModel("three-mode")
        with pytest.raises(InvalidParameterError):
            EnergyModel(circuit_power_w=(0.01, -1.0))


class TestEnergyEfficiency:
    def test_zero_power_zero_eta(self, table1):
        assert energy_efficiency(PowerAllocation([0, 0, 0]), EEProblem(table1)) == 0.0

    def test_circuit_power_lowers_eta(self, table1):
        alloc = PowerAllocation([0.1, 0.03, 0.004])
        a = energy_efficiency(alloc, EEProblem(table1, model=EnergyModel(circuit_power_w=(0.01,) * 3)))
        b = energy_efficiency(alloc, EEProblem(table1, model=EnergyModel(circuit_power_w=(0.02,) * 3)))
        assert b < a

    def test_zero_denominator(self, table1):
        pr = EEProblem(table1, model=EnergyModel(circuit_power_w=(0.0,) * 3))
        with pytest.raises(InvalidParameterError):
            energy_efficiency(PowerAllocation([0, 0, 0]), pr)

    def test_recomputed_from_parts(self, table1_solution):
        problem, sol = table1_solution
        num = sol.effcaps.sum()
        den = sol.user_power_w.sum()
        assert sol.eta == pytest.approx(num / den, rel=1e-9)
        assert energy_efficiency(sol.alloc, problem) == pytest.approx(sol.eta, rel=1e-9)


class TestSingleUserOracle:
    @pytest.mark.parametrize("d,dmax", SHIPPED_USERS)
    @pytest.mark.parametrize("constrained", [True, False])
    def test_matches_grid(self, d, dmax, constrained):
        pr = single(d, dmax, SolverSettings(qos_rate_constraint=constrained))
        sol = dinkelbach_solve(pr)
        _, eta = single_user_grid(pr)
        assert sol.eta == pytest.approx(eta, rel=1e-3)
        assert sol.eta >= eta * (1 - 1e-9)

    def test_single_mode_matches_grid(self):
        pr = single(600.0, 0.02, FREE, EnergyModel(SINGLE_MODE))
        assert dinkelbach_solve(pr).eta == pytest.approx(single_user_grid(pr)[1], rel=1e-3)


class TestMultiUserOracle:
    def test_light_traffic_matches_grid(self, light_solution):
        problem, sol = light_solution
        eta, _ = multi_user_grid(problem)
        assert sol.eta == pytest.approx(eta, rel=5e-3)
        assert sol.eta >= eta * (1 - 1e-9)


class TestTrace:
    @pytest.mark.parametrize("fixture", ["table1_solution", "light_solution"])
    def test_trace_properties(self, fixture, request):
        problem, sol = request.getfixturevalue(fixture)
        qs, fs = sol.trace.q_values, sol.trace.F_values
        assert np.all(np.diff(qs) >= -1e-9 * qs[1:])
        assert np.all(np.diff(fs) <= 1e-9 * np.abs(fs[:-1]) + 1e-6)
        assert abs(fs[-1]) <= 1e-6 * problem.denominator(sol.alloc.tx_power_w)
        assert len(sol.trace) <= 50

    def test_shipped_start_is_optimal(self, table1_solution):
        _, sol = table1_solution
        assert len(sol.trace) == 1
        assert np.all(sol.tight)
        np.testing.assert_allclose(sol.alloc.tx_power_w, [0.1338118, 0.03014637, 0.00348029], rtol=5e-6)

    def test_feasible_and_slack(self, table1_solution, light_solution):
        for problem, sol in (table1_solution, light_solution):
            P = sol.alloc.tx_power_w
            assert np.all((P >= 0) & (P <= problem.peak))
            assert np.all(sol.effcaps >= sol.required * (1 - 1e-9))
            assert np.max(np.abs(sol.kkt.slackness_gap)) <= 1e-9


class TestKkt:
    def test_interior_residual(self, light_solution):
        _, sol = light_solution
        assert not sol.tight[0]
        assert sol.kkt.interior[0]
        assert sol.kkt.max_interior_residual <= 1e-4

    def test_unconstrained_single_user(self):
        pr = single(600.0, 0.02, FREE)
        sol = dinkelbach_solve(pr)
        assert sol.kkt.interior.all()
        assert sol.kkt.max_interior_residual <= 1e-4

    def test_non_optimal_point_worse(self, light_solution):
        problem, sol = light_solution
        rng = np.random.default_rng(5)
        base = sol.kkt.stationarity[0]
        for _ in range(5):
            P = sol.alloc.tx_power_w.copy()
            P[0] *= rng.uniform(1.5, 3.0)
            rep = kkt_residual(PowerAllocation(P), sol.eta, None, problem, tight=sol.tight)
            assert rep.stationarity[0] > base

    def test_active_peak_has_zero_gap(self):
        # with q = 0 and no interference the single user sits at P_max
        pr = single(900.0, 0.03, FREE)
        alloc = PowerAllocation([pr.peak])
        rep = kkt_residual(alloc, 1.0, None, pr)
        assert rep.peak_multipliers[0] > 0
        assert rep.slackness_gap[0] == 0.0


class TestInner:
    def test_free_single_user_at_zero_price(self):
        pr = single(300.0, 0.01, FREE)
        res = inner_maximize(0.0, pr)
        assert res.alloc.tx_power_w[0] == pytest.approx(pr.peak, rel=1e-12)

    def test_own_power_raises_capacity(self, table1):
        pr = EEProblem(table1, settings=FREE)
        res = inner_maximize(0.0, pr)
        P = res.alloc.tx_power_w
        for k in range(3):
            up = P.copy()
            up[k] = min(P[k] * 1.1, pr.peak)
            if up[k] > P[k]:
                assert pr.effcap(k, up) > pr.effcap(k, P)

    def test_huge_price_switches_off(self, table1):
        res = inner_maximize(1e15, EEProblem(table1, settings=FREE))
        assert np.all(res.alloc.tx_power_w <= 1e-9)

    def test_huge_price_keeps_qos_floor(self, table1, table1_solution):
        _, sol = table1_solution
        res = inner_maximize(1e15, EEProblem(table1))
        np.testing.assert_allclose(res.alloc.tx_power_w, sol.alloc.tx_power_w, rtol=1e-6)

    def test_negative_price(self, table1):
        with pytest.raises(InvalidParameterError):
            inner_maximize(-1.0, EEProblem(table1))

    def test_infeasible_requirement(self):
        pr = EEProblem(make_scenario(1000.0))
        with pytest.raises(QosInfeasibleError):
            inner_maximize(1.0, pr)

    def test_multimodal_coordinate_detected(self):
        pr = single(300.0, 0.01, FREE)
        z_mid = 0.5 * (math.log(pr.peak * 1e-12) + math.log(pr.peak))

        def bumpy(P, q, lam):
            z = math.log(max(P[0], 1e-300))
            return 2.0 if P[0] >= pr.peak else math.exp(-(z - z_mid) ** 2)

        pr.lagrangian = bumpy
        with pytest.raises(LineSearchError):
            inner_maximize(1.0, pr, x0=[pr.peak * 1e-6])


class TestClosedForm:
    def test_no_sinr(self):
        assert closed_form_power(0.0, 1e6, 0.9, 0.0, PARAMS) == (0.0, False)

    def test_high_sinr_limit(self):
        p, flag = closed_form_power(1e15, 1e6, 0.9, 2.0, PARAMS)
        assert not flag
        assert p == pytest.approx(18e3 / (math.log(2) * (1e6 * 0.9 - 2.0)), rel=1e-12)

    def test_unbounded(self):
        assert closed_form_power(5.0, 1.0, 0.5, 0.5, PARAMS) == (PARAMS.peak_power_w, True)

    def test_clipped(self):
        assert closed_form_power(5.0, 1e-6, 1.0, 0.0, PARAMS) == (PARAMS.peak_power_w, False)

    def fixed_point_gap(self, d, dmax):
        pr = single(d, dmax, FREE)
        q = dinkelbach_solve(pr).eta
        best = inner_maximize(q, pr).alloc.tx_power_w[0]
        return abs(fixed_point_power(pr, q) - best) / best

    def test_fixed_point_near_user(self):
        assert self.fixed_point_gap(300.0, 0.01) <= 0.01

    @pytest.mark.parametrize("d,dmax", SHIPPED_USERS[1:])
    def test_fixed_point_gap_grows_with_distance(self, d, dmax):
        # averaging the SINR before the log overstates the far users' slope
        assert self.fixed_point_gap(d, dmax) > 0.01


class TestSubgradient:
    alloc = PowerAllocation([PARAMS.peak_power_w, 1.0])

    def test_peak_user_unchanged(self):
        new = subgradient_step(np.array([0.3, 0.0]), self.alloc, 4, PARAMS)
        assert new[0] == 0.3

    def test_printed_sign_grows_when_slack(self):
        new = subgradient_step(np.zeros(2), self.alloc, 1, PARAMS)
        assert new[1] == pytest.approx(1e-2 * (PARAMS.peak_power_w - 1.0))

    def test_projection(self):
        new = subgradient_step(np.array([0.0, 0.01]), self.alloc, 1, PARAMS, sign="standard")
        assert new[1] == 0.0

    def test_step_schedule(self):
        a = subgradient_step(np.zeros(2), self.alloc, 4, PARAMS, step0=0.5)
        assert a[1] == pytest.approx(0.25 * (PARAMS.peak_power_w - 1.0))

    def test_errors(self):
        with pytest.raises(InvalidParameterError):
            subgradient_step(np.zeros(2), self.alloc, 0, PARAMS)
        with pytest.raises(InvalidParameterError):
            subgradient_step(np.array([-1.0, 0.0]), self.alloc, 1, PARAMS)
        with pytest.raises(InvalidParameterError):
            subgradient_step(np.zeros(2), self.alloc, 1, PARAMS, sign="sideways")

    def test_printed_pair_breaks_slackness(self, table1, table1_solution):
        _, ref = table1_solution
        pr = EEProblem(table1, settings=SolverSettings(multiplier_sign="printed", dual_max_iter=40))
        sol = dinkelbach_solve(pr)
        np.testing.assert_allclose(sol.alloc.tx_power_w, ref.alloc.tx_power_w, rtol=1e-9)
        assert np.all(sol.multipliers > 1.0)
        assert np.all(sol.kkt.slackness_gap < -1.0)


class TestExponentCurve:
    def test_single_point(self, table1, table1_solution):
        _, sol = table1_solution
        curve = ee_vs_exponent_curve(table1, [1.0])
        assert curve == [(1.0, pytest.approx(sol.eta, rel=1e-9))]

    def test_non_increasing(self, table1):
        curve = ee_vs_exponent_curve(table1, np.geomspace(0.25, 2.0, 5))
        etas = np.array([e for _, e in curve])
        assert np.all(np.diff(etas) <= 0.01 * etas[:-1])
        assert etas[0] == etas.max()

    def test_grid_errors(self, table1):
        with pytest.raises(InvalidParameterError):
            ee_vs_exponent_curve(table1, [1.0, 0.5])
        with pytest.raises(InvalidParameterError):
            ee_vs_exponent_curve(table1, [1.0, 100.0])


class TestModes:
    @pytest.mark.parametrize("L", [100.0, 150.0])
    def test_two_mode_beats_single_mode(self, L):
        sc = make_scenario(L)
        two = dinkelbach_solve(EEProblem(sc, model=EnergyModel(TWO_MODE)))
        one = dinkelbach_solve(EEProblem(sc, model=EnergyModel(SINGLE_MODE)))
        assert two.eta > one.eta
        assert one.mode == SINGLE_MODE
