import numpy as np
import pytest
from scipy.optimize import bisect

from monotone_io.certify import CERTIFIED, SamplePlan, sign_pattern_certify, trajectory_monotonicity_test
from monotone_io.characteristic import compute_characteristic, newton_equilibrium
from monotone_io.interconnect import (
    FeedbackLoop,
    PreconditionError,
    cascade,
    cascade_characteristic,
    closed_loop_verify,
    feedback_model,
    small_gain_certify,
)
from monotone_io.model import ModelError, builtin

from conftest import REVERSED, flip_loop, make_model, sqrt3_loop

W_STAR = bisect(lambda w: w * w + 2 * w - 2, 0.0, 1.0, xtol=1e-15)


@pytest.fixture(scope="module")
def sqrt3_report():
    loop = sqrt3_loop()
    return loop, small_gain_certify(loop)


@pytest.fixture(scope="module")
def sqrt3_verified(sqrt3_report):
    loop, rep = sqrt3_report
    return closed_loop_verify(loop, rep)


def test_oracle_value():
    assert abs(W_STAR - (np.sqrt(3) - 1)) < 1e-12


def test_single_stage_cascade_is_the_stage():
    s = builtin("mapk_stage")
    c = cascade([s]).composite
    rng = np.random.default_rng(0)
    for x, u in zip(s.state_domain.sample_interior(rng, 20), s.input_domain.sample(rng, 20)):
        np.testing.assert_array_equal(c.rhs(x, u), s.rhs(x, u))
        np.testing.assert_array_equal(c.output(x), s.output(x))


def test_two_linear_stages():
    s = builtin("linear_toy_pos")
    casc = cascade([s, s])
    assert casc.composite.n == 2 and casc.offsets == [0, 1]
    ch = cascade_characteristic(casc, [[0.0], [1.0], [2.0], [4.0]])
    np.testing.assert_allclose(ch.direct.outputs[:, 0], [0.0, 0.25, 0.5, 1.0], atol=1e-9)
    np.testing.assert_allclose(ch.composed.outputs[:, 0], ch.direct.outputs[:, 0], atol=1e-9)
    assert ch.max_discrepancy < 1e-9


def test_single_stage_characteristic_is_identity_wrapper():
    s = builtin("linear_toy_pos")
    ch = cascade_characteristic(cascade([s]), 5)
    np.testing.assert_allclose(ch.composed.states, ch.direct.states, atol=1e-12)
    assert len(ch.stages) == 1


def test_mapk_cascade3_orders_and_monotonicity():
    m = builtin("mapk_cascade3")
    assert m.n == 6
    assert m.orders.state.eps == (1, 0, 1, 0, 1, 0)
    assert sign_pattern_certify(m, SamplePlan(n_points=300)).verdict == CERTIFIED
    built = cascade([builtin("mapk_stage")] * 3).composite
    assert built.orders.state.eps == m.orders.state.eps
    rng = np.random.default_rng(2)
    for x, u in zip(m.state_domain.sample_interior(rng, 10), m.input_domain.sample(rng, 10)):
        np.testing.assert_allclose(built.rhs(x, u), m.rhs(x, u), atol=1e-14)


def test_cascade_of_certified_stages_passes_trajectory_test():
    casc = cascade([builtin("mapk_stage"), builtin("mapk_stage")])
    r = trajectory_monotonicity_test(casc.composite, SamplePlan(n_points=20), horizon=10.0)
    assert r.verdict == CERTIFIED


def test_mapk_cascade_characteristic():
    casc = cascade([builtin("mapk_stage")] * 3)
    ch = cascade_characteristic(casc, 11, n_gas=4)
    assert ch.max_discrepancy < 1e-3
    assert np.all(ch.direct.residuals < 1e-10)


def test_cascade_errors():
    s = builtin("mapk_stage")
    with pytest.raises(ValueError):
        cascade([])
    two_in = make_model(["-x1 + u1 + u2"], u_lo=(0.0, 0.0), u_hi=(1.0, 1.0))
    with pytest.raises(ModelError, match="expects"):
        cascade([s, two_in])
    with pytest.raises(ModelError, match="order"):
        cascade([s, s.with_orders(input=(1,))])
    small = make_model(["-x1 + u1"], lo=[0.0], hi=[1.0], u_lo=(0.0,), u_hi=(0.5,))
    with pytest.raises(ModelError, match="input domain"):
        cascade([s, small])


def test_small_gain_sqrt3(sqrt3_report):
    _, rep = sqrt3_report
    assert rep.attractive
    assert abs(rep.fixed_point - W_STAR) < 1e-6
    assert len(rep.starts) == 64
    assert all(abs(r["terminal"] - W_STAR) < 1e-5 for r in rep.starts)
    assert rep.fixed_point_residual < 1e-9
    assert rep.output_fixed_point == pytest.approx(W_STAR / 2, abs=1e-6)


def test_small_gain_rho_csv(sqrt3_report):
    _, rep = sqrt3_report
    lines = rep.rho_csv().splitlines()
    assert lines[0] == "u,ky,kw_of_ky"
    assert len(lines) == 102
    u, ky, kw = map(float, lines[51].split(","))
    assert ky == pytest.approx(u / 2, abs=1e-8)
    assert kw == pytest.approx(1 / (1 + u / 2), abs=1e-8)


def test_closed_loop_sqrt3(sqrt3_verified):
    rep = sqrt3_verified
    assert rep.verified and not rep.unbounded
    assert rep.closed_loop["max_output_error"] < 1e-5
    assert rep.closed_loop["max_state_error"] < 1e-5
    x_e, z_e = rep.closed_loop_equilibrium
    np.testing.assert_allclose(x_e + z_e, [W_STAR / 2, W_STAR], atol=1e-6)


def test_equilibrium_correspondence(sqrt3_report):
    loop, rep = sqrt3_report
    m = feedback_model(loop)
    x_e, z_e = rep.closed_loop_equilibrium
    rng = np.random.default_rng(5)
    for start in m.state_domain.sample_interior(rng, 5):
        found, res = newton_equilibrium(m, start, [0.0])
        assert res < 1e-10
        np.testing.assert_allclose(found, x_e + z_e, atol=1e-8)


def test_feedback_model_wiring():
    m = feedback_model(sqrt3_loop())
    assert (m.n, m.p) == (2, 2)
    np.testing.assert_allclose(m.rhs([0.2, 0.5], [0.0]), [-0.4 + 0.5, -0.5 + 1 / 1.2])
    np.testing.assert_allclose(m.output([0.2, 0.5]), [0.2, 0.5])
    assert m.orders.output.eps == (0, 1)


def test_small_gain_period_two():
    rep = small_gain_certify(flip_loop(), grid=21, starts=16)
    assert not rep.attractive
    assert any(r["period2"] for r in rep.starts)
    assert any("period-2" in n for n in rep.notes)
    with pytest.raises(PreconditionError):
        closed_loop_verify(flip_loop(), rep)


def test_small_gain_constant_controller():
    plant = make_model(["-2*x1 + u1"], lo=[0.0], hi=[1.0])
    ctrl = make_model(["-x1 + 0.3 + 0*u1"], lo=[0.0], hi=[1.0], orders=REVERSED)
    loop = FeedbackLoop(plant, ctrl)
    rep = small_gain_certify(loop, grid=21, starts=16)
    assert rep.attractive
    assert rep.fixed_point == pytest.approx(0.3, abs=1e-9)
    assert rep.max_iterations_used <= 2
    rep = closed_loop_verify(loop, rep, SamplePlan(n_points=6), horizon=60.0)
    assert rep.verified
    x_e, z_e = rep.closed_loop_equilibrium
    np.testing.assert_allclose(x_e + z_e, [0.15, 0.3], atol=1e-8)


def _iterate_oracle(rho, u, n=20000):
    for _ in range(n):
        u = rho(u)
    return u


def test_small_gain_mapk_with_decreasing_controller():
    plant = builtin("mapk_stage")
    ctrl = make_model(["-x1 + 0.8/(1 + 4*u1)"], lo=[0.0], hi=[1.0], orders=REVERSED)
    loop = FeedbackLoop(plant, ctrl)
    rep = small_gain_certify(loop, grid=41, starts=16, n_gas=4)

    def rho(w):
        y = compute_characteristic(plant, [[w]], n_gas=0).outputs[0, 0]
        return 0.8 / (1 + 4 * y)

    oracle = _iterate_oracle(rho, 1.0, 60)
    assert rep.attractive
    assert abs(rep.fixed_point - oracle) < 1e-6
    rep = closed_loop_verify(loop, rep, SamplePlan(n_points=6))
    assert rep.verified


def test_feedback_loop_preconditions():
    good_plant = make_model(["-2*x1 + u1"], lo=[0.0], hi=[1.0])
    good_ctrl = make_model(["-x1 + 1/(1 + u1)"], lo=[0.0], hi=[1.0], orders=REVERSED)
    with pytest.raises(PreconditionError):
        FeedbackLoop(builtin("mapk_cascade3").with_orders(output=(1,)), good_ctrl)
    with pytest.raises(PreconditionError):
        FeedbackLoop(good_plant, good_ctrl.with_orders(output=(0,)))
    two = make_model(["-x1 + u1 + u2"], u_lo=(0.0, 0.0), u_hi=(1.0, 1.0))
    with pytest.raises(PreconditionError):
        FeedbackLoop(two, good_ctrl)


def test_small_gain_rejects_non_monotone_controller():
    plant = make_model(["-2*x1 + u1"], lo=[0.0], hi=[1.0])
    # declared decreasing but actually increasing in y
    ctrl = make_model(["-x1 + u1/2"], lo=[0.0], hi=[1.0], orders=REVERSED)
    with pytest.raises(PreconditionError, match="not monotone"):
        small_gain_certify(FeedbackLoop(plant, ctrl), grid=11, starts=4)


def test_small_gain_rejects_grid_overflow():
    plant = make_model(["-2*x1 + u1"], lo=[0.0], hi=[1.0], u_lo=(0.0,), u_hi=(0.5,))
    ctrl = make_model(["-x1 + 1/(1 + u1)"], lo=[0.0], hi=[1.0], orders=REVERSED)
    with pytest.raises(PreconditionError, match="grid range"):
        small_gain_certify(FeedbackLoop(plant, ctrl), grid=11, starts=4)


def test_report_to_dict(sqrt3_verified):
    d = sqrt3_verified.to_dict()
    assert d["attractive"] is True and d["verified"] is True
    assert d["fixed_point"] == pytest.approx(W_STAR, abs=1e-6)
