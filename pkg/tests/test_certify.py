import numpy as np
import pytest

from monotone_io.certify import (
    CERTIFIED,
    FALSIFIED,
    TOL_CERT,
    TOL_TRAJ,
    SamplePlan,
    competitive_test,
    conjugate_to_cooperative,
    incremental_positivity_test,
    kamke_test,
    recheck,
    sign_pattern_certify,
    time_reversed,
    trajectory_monotonicity_test,
)
from monotone_io.integrate import integrate
from monotone_io.model import builtin
from monotone_io.signals import Constant

from conftest import make_model

SMALL = SamplePlan(seed=42, n_points=300)


@pytest.fixture(scope="module")
def mapk():
    return builtin("mapk_stage")


def test_sign_pattern_mapk(mapk):
    r = sign_pattern_certify(mapk)
    assert r.verdict == CERTIFIED and r.n_checked == 2000
    assert r.worst_margin >= -TOL_CERT
    assert "not a proof" in r.notes[0]
    bad = sign_pattern_certify(mapk.with_orders(state=(0, 0)), SMALL)
    assert bad.verdict == FALSIFIED
    assert bad.counterexample["value"] < -TOL_CERT


def test_sign_pattern_linear(coop_linear, noncoop):
    assert sign_pattern_certify(coop_linear, SMALL).verdict == CERTIFIED
    r = sign_pattern_certify(noncoop, SMALL)
    assert r.verdict == FALSIFIED
    c = r.counterexample
    assert (c["matrix"], c["i"], c["j"]) == ("A", 0, 1)
    assert c["value"] == pytest.approx(-1.0, abs=1e-9)


def test_mapk_signs_by_hand(mapk):
    # the four inequalities, read straight off the Jacobian
    from monotone_io.integrate import jacobian_fd

    rng = np.random.default_rng(0)
    for x, u in zip(mapk.state_domain.sample_interior(rng, 50), mapk.input_domain.sample(rng, 50)):
        A, B = jacobian_fd(mapk, x, u)
        assert A[0, 1] <= 1e-8 and A[1, 0] <= 1e-8
        assert B[0, 0] <= 1e-8 and B[1, 0] >= -1e-8


def test_kamke_mapk(mapk):
    r = kamke_test(mapk, SMALL)
    assert r.verdict == CERTIFIED
    # sample 0 is an exact tie with equal inputs
    assert r.worst_margin <= 0.0


def test_kamke_noncoop(noncoop):
    r = kamke_test(noncoop, SMALL)
    assert r.verdict == FALSIFIED
    assert recheck(noncoop, r) < -TOL_CERT


def test_kamke_explicit_pair(noncoop):
    # xi1 = (0, 1) and xi2 = (0, 0) tie in coordinate 1
    d = noncoop.rhs([0.0, 1.0], [0.0]) - noncoop.rhs([0.0, 0.0], [0.0])
    assert d[0] == -1.0


def test_kamke_identical_pair_has_zero_margin(coop_linear):
    r = kamke_test(coop_linear, SamplePlan(seed=1, n_points=1))
    assert r.worst_margin == 0.0


def test_trajectory_mapk(mapk):
    r = trajectory_monotonicity_test(mapk, SamplePlan(n_points=30), horizon=20.0)
    assert r.verdict == CERTIFIED
    assert r.worst_margin >= -TOL_TRAJ


def test_trajectory_identical_pair(mapk):
    r = trajectory_monotonicity_test(mapk, SamplePlan(n_points=1), horizon=5.0)
    assert r.worst_margin == 0.0


def test_trajectory_noncoop(noncoop):
    r = trajectory_monotonicity_test(noncoop, SamplePlan(n_points=40))
    assert r.verdict == FALSIFIED
    c = r.counterexample
    assert c["first_violation_time"] < 5.0
    assert recheck(noncoop, r) < -TOL_TRAJ


def test_trajectory_noncoop_explicit_pair(noncoop):
    # x1 = (0, 1) is above x2 = (0, 0); the first coordinate goes negative at once
    a = integrate(noncoop, [0.0, 1.0], Constant([0.0]), 5.0)
    b = integrate(noncoop, [0.0, 0.0], Constant([0.0]), 5.0)
    diff = a.states - b.states
    crossing = a.times[np.flatnonzero(diff.min(axis=1) < -TOL_TRAJ)[0]]
    assert 0.0 < crossing < 5.0


def test_competitive_examples(mapk):
    comp = make_model(["-x1 - x2 + 0*u1", "-x1 - x2"])
    assert competitive_test(comp, SMALL).verdict == CERTIFIED
    r = competitive_test(mapk, SMALL)
    assert r.verdict == FALSIFIED
    assert r.counterexample["component"] in ("sign-pattern", "kamke")
    assert recheck(mapk, r) < -TOL_CERT


def test_diagonal_system_is_both():
    diag = make_model(["-x1^3 + 0*u1", "-2*x2"])
    assert sign_pattern_certify(diag, SMALL).verdict == CERTIFIED
    assert kamke_test(diag, SMALL).verdict == CERTIFIED
    assert competitive_test(diag, SMALL).verdict == CERTIFIED


def test_competitive_duality(mapk, noncoop):
    for m in (mapk, noncoop, make_model(["-x1 - x2 + 0*u1", "-x1 - x2"])):
        r = competitive_test(m, SMALL)
        rev = time_reversed(m)
        parts = [sign_pattern_certify(rev, SMALL).verdict, kamke_test(rev, SMALL).verdict]
        want = FALSIFIED if FALSIFIED in parts else CERTIFIED
        assert r.verdict == want


def test_incremental_positivity_mapk(mapk):
    r = incremental_positivity_test(mapk)
    assert r.verdict == CERTIFIED
    assert r.worst_margin >= -TOL_CERT


def test_incremental_positivity_linear():
    # the box is forward invariant for both fields
    good = make_model(["-x1 + 2*x2 + u1", "-3*x2"], lo=[-4, -1], hi=[4, 1])
    assert incremental_positivity_test(good).verdict == CERTIFIED
    bad = make_model(["-x1 - 2*x2 + u1", "-3*x2"], lo=[-4, -1], hi=[4, 1])
    r = incremental_positivity_test(bad)
    assert r.verdict == FALSIFIED
    c = r.counterexample
    assert (c["matrix"], c["i"], c["j"]) == ("A", 0, 1)
    assert c["value"] == pytest.approx(-2.0, abs=1e-8)
    assert recheck(bad, r) < -TOL_CERT


def test_incremental_positivity_exit_is_inconclusive():
    m = make_model(["-x1 + 2*x2 + u1", "-3*x2"])
    r = incremental_positivity_test(m)
    assert r.verdict == "inconclusive"
    assert any("left the state domain" in n for n in r.notes)


def test_conjugation_trivial_orders(coop_linear):
    c = conjugate_to_cooperative(coop_linear)
    rng = np.random.default_rng(0)
    for x in coop_linear.state_domain.sample_interior(rng, 10):
        np.testing.assert_array_equal(c.rhs(x, [0.3]), coop_linear.rhs(x, [0.3]))


def test_conjugated_mapk_is_cooperative(mapk):
    c = conjugate_to_cooperative(mapk)
    assert c.orders.state.eps == (0, 0)
    assert sign_pattern_certify(c, SMALL).verdict == CERTIFIED


def test_conjugation_field_identity(mapk):
    c = conjugate_to_cooperative(mapk)
    P = mapk.orders.state.signs
    rng = np.random.default_rng(0)
    for x, u in zip(mapk.state_domain.sample_interior(rng, 20), mapk.input_domain.sample(rng, 20)):
        np.testing.assert_array_equal(c.rhs(P * x, u), P * mapk.rhs(x, u))
        assert c.state_domain.contains(P * x)


def test_double_conjugation(mapk):
    # conjugating twice with the original orders put back is the identity
    once = conjugate_to_cooperative(mapk)
    back = conjugate_to_cooperative(once.with_orders(state=mapk.orders.state.eps))
    rng = np.random.default_rng(1)
    for x, u in zip(mapk.state_domain.sample_interior(rng, 20), mapk.input_domain.sample(rng, 20)):
        np.testing.assert_array_equal(back.rhs(x, u), mapk.rhs(x, u))


@pytest.mark.parametrize("test", [sign_pattern_certify, kamke_test])
def test_conjugation_duality(test, mapk, noncoop):
    for m in (mapk, noncoop, mapk.with_orders(state=(0, 0))):
        assert test(m, SMALL).verdict == test(conjugate_to_cooperative(m), SMALL).verdict


def test_conjugation_duality_trajectory(mapk):
    plan = SamplePlan(n_points=10)
    a = trajectory_monotonicity_test(mapk, plan, horizon=5.0)
    b = trajectory_monotonicity_test(conjugate_to_cooperative(mapk), plan, horizon=5.0)
    assert a.verdict == b.verdict


def test_falsified_reports_recheck(mapk, noncoop):
    reports = [
        (noncoop, sign_pattern_certify(noncoop, SMALL)),
        (noncoop, kamke_test(noncoop, SMALL)),
        (mapk.with_orders(state=(0, 0)), sign_pattern_certify(mapk.with_orders(state=(0, 0)), SMALL)),
        (mapk, competitive_test(mapk, SMALL)),
    ]
    for m, r in reports:
        assert r.verdict == FALSIFIED
        assert recheck(m, r) == pytest.approx(r.counterexample["value"], abs=1e-12)


def test_recheck_without_counterexample(coop_linear):
    with pytest.raises(ValueError):
        recheck(coop_linear, sign_pattern_certify(coop_linear, SMALL))


def test_determinism(mapk):
    a = kamke_test(mapk, SMALL).to_dict()
    b = kamke_test(mapk, SMALL).to_dict()
    assert a == b


def test_sample_plan_validation():
    with pytest.raises(ValueError):
        SamplePlan(n_points=0)
    with pytest.raises(ValueError):
        SamplePlan(boundary_fraction=1.5)
