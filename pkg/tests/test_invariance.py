import numpy as np
import pytest

from monotone_io.certify import CERTIFIED, FALSIFIED, SamplePlan, recheck
from monotone_io.invariance import (
    active_set,
    invariance_certify,
    polytope_tangent_vectors_ok,
    trajectory_containment_check,
)
from monotone_io.model import builtin
from monotone_io.polytope import Box, DomainError, Polytope

from conftest import make_model

SIMPLEX = Polytope.simplex(2)


def test_interior_accepts_everything():
    rng = np.random.default_rng(0)
    for v in rng.normal(size=(20, 2)) * 10:
        assert polytope_tangent_vectors_ok(SIMPLEX, [0.2, 0.2], v)


def test_box_face():
    box = Polytope.box([-1, -1], [1, 1])
    assert polytope_tangent_vectors_ok(box, [1.0, 0.0], [-1.0, 0.0])
    assert not polytope_tangent_vectors_ok(box, [1.0, 0.0], [1.0, 0.0])
    # tangent directions along the face are allowed
    assert polytope_tangent_vectors_ok(box, [1.0, 0.0], [0.0, 5.0])


def test_simplex_diagonal():
    assert polytope_tangent_vectors_ok(SIMPLEX, [0.5, 0.5], [-1.0, -1.0])
    assert not polytope_tangent_vectors_ok(SIMPLEX, [0.5, 0.5], [1.0, 0.0])
    assert active_set(SIMPLEX, [0.5, 0.5]).indices == (2,)


def test_vertex_needs_all_incident_facets():
    # at the origin both x >= 0 and y >= 0 are active
    assert sorted(active_set(SIMPLEX, [0.0, 0.0]).indices) == [0, 1]
    assert polytope_tangent_vectors_ok(SIMPLEX, [0.0, 0.0], [1.0, 1.0])
    assert not polytope_tangent_vectors_ok(SIMPLEX, [0.0, 0.0], [1.0, -1e-3])
    assert not polytope_tangent_vectors_ok(SIMPLEX, [0.0, 0.0], [-1e-3, 1.0])


def test_cone_tolerance():
    box = Polytope.box([0.0], [1.0])
    assert polytope_tangent_vectors_ok(box, [1.0], [1e-9])
    assert not polytope_tangent_vectors_ok(box, [1.0], [1e-7])


def test_point_outside_raises():
    with pytest.raises(DomainError):
        polytope_tangent_vectors_ok(SIMPLEX, [0.8, 0.8], [0.0, 0.0])


def test_row_scaling_does_not_change_answers():
    scaled = Polytope(SIMPLEX.G * np.array([[3.0], [0.1], [7.0]]), SIMPLEX.g * np.array([3.0, 0.1, 7.0]))
    rng = np.random.default_rng(1)
    for x in ([0.0, 0.0], [0.5, 0.5], [0.0, 0.3], [0.2, 0.1]):
        for v in rng.normal(size=(10, 2)):
            assert polytope_tangent_vectors_ok(SIMPLEX, x, v) == polytope_tangent_vectors_ok(scaled, x, v)


def test_triangle_invariant_under_figure4():
    m = builtin("mapk_figure4")
    r = invariance_certify(m, SIMPLEX)
    assert r.verdict == CERTIFIED
    # 3 vertices plus 500 points on each of 3 facets, 3 inputs each
    assert r.n_checked == (3 + 3 * 500) * 3
    assert "not a proof" in r.notes[0]


def test_triangle_invariant_under_stage_for_all_inputs():
    m = builtin("mapk_stage")
    assert invariance_certify(m, u_box=Box([0.0], [2.0]), samples_per_facet=100).verdict == CERTIFIED


def test_contracting_box():
    m = make_model(["-x1 + 0*u1", "-x2"])
    assert invariance_certify(m, samples_per_facet=50).verdict == CERTIFIED
    assert trajectory_containment_check(m, plan=SamplePlan(n_points=10), horizon=5.0).verdict == CERTIFIED


def test_expanding_field_falsified():
    m = make_model(["x1 + 0*u1"], u_lo=(0.0,), u_hi=(0.0,))
    r = invariance_certify(m, samples_per_facet=10)
    assert r.verdict == FALSIFIED
    c = r.counterexample
    assert abs(c["x"][0]) == 1.0 and c["value"] == pytest.approx(-1.0)
    assert recheck(m, r) == pytest.approx(-1.0)


def test_expanding_field_exit_time():
    m = make_model(["x1 + 0*u1"], lo=[-1.0], hi=[1.0], u_lo=(0.0,), u_hi=(0.0,))
    for x0 in (0.5, 0.9):
        r = trajectory_containment_check(m, starts=[[x0]], horizon=5.0)
        assert r.verdict == FALSIFIED
        assert r.counterexample["exit_time"] == pytest.approx(np.log(1 / x0), abs=1e-5)


def test_figure4_containment():
    r = trajectory_containment_check(builtin("mapk_figure4"), SIMPLEX, SamplePlan(n_points=50), horizon=50.0)
    assert r.verdict == CERTIFIED and r.n_checked == 50
    assert r.worst_margin >= -1e-6


def test_certified_implies_contained():
    m = builtin("mapk_stage")
    plan = SamplePlan(seed=3, n_points=10)
    if invariance_certify(m, plan=plan, samples_per_facet=50).verdict == CERTIFIED:
        assert trajectory_containment_check(m, plan=plan, horizon=20.0).verdict == CERTIFIED


def test_polytope_must_lie_in_domain():
    m = builtin("mapk_figure4")
    with pytest.raises(DomainError):
        invariance_certify(m, Polytope.box([0, 0], [1, 1]))
    with pytest.raises(ValueError):
        invariance_certify(m, SIMPLEX, u_box=Box([0.0, 0.0], [1.0, 1.0]))


def test_determinism():
    m = builtin("mapk_figure4")
    a = invariance_certify(m, samples_per_facet=50).to_dict()
    b = invariance_certify(m, samples_per_facet=50).to_dict()
    assert a == b
