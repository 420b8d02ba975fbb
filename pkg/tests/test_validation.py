import numpy as np
import pytest

from noma_ee import validation as v
from noma_ee.config import EXTRA_PROPERTIES, PROPERTIES
from noma_ee.errors import InvalidParameterError


def test_registry_covers_properties():
    assert set(v.CHECKS) == set(PROPERTIES + EXTRA_PROPERTIES)


def test_roundtrip(table1_cfg):
    r = v.check_roundtrip(table1_cfg, n=500)
    assert r.passed and r.measured <= 1e-12


def test_random_queries_are_valid():
    rng = np.random.default_rng(0)
    sizes = {len(v.random_effcap_query(rng).alloc) for _ in range(200)}
    assert sizes == {1, 2, 3, 4}


def test_quadrature_small(table1_cfg):
    r = v.check_quadrature(table1_cfg, n_configs=5, n_samples=200_000)
    assert r.passed and r.threshold == 1.0


def test_quadrature_negative_control(table1_cfg):
    r = v.check_quadrature(table1_cfg, n_configs=5, n_samples=200_000, evaluator=lambda q: 1.1 * v.effcap_k_user(q))
    assert not r.passed


def test_closed_form(table1_cfg):
    r = v.check_closed_form(table1_cfg, n_configs=10)
    assert r.passed and r.measured < 1e-6


def test_own_power_concavity(table1_cfg):
    assert v.check_own_power_concavity(table1_cfg, n_pairs=50).passed


def test_joint_slack_is_zero_on_a_point(table1_cfg):
    scen, u, probs = v._effcap_parts(table1_cfg)
    a = np.array([0.1, 0.03, 0.004])
    assert v.joint_concavity_slack(scen, u, probs, a, a) == pytest.approx(0.0, abs=1e-9)


def test_monotonicity(table1_cfg):
    r = v.check_monotonicity(table1_cfg, n_points=4)
    assert r.passed and r.measured < 0


def test_kkt_and_conservation(table1_cfg):
    assert v.check_kkt(table1_cfg).passed
    r = v.check_conservation(table1_cfg)
    assert r.passed and r.measured == 0.0


def test_run_checks_selection(table1_cfg):
    res = v.run_checks(table1_cfg, ["roundtrip"])
    assert [r.name for r in res] == ["roundtrip"]
    with pytest.raises(InvalidParameterError):
        v.run_checks(table1_cfg, [])
    with pytest.raises(InvalidParameterError):
        v.run_checks(table1_cfg, ["roundtrip", "typo"])
