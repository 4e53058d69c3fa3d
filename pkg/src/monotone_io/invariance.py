"""Forward invariance of polytopes: tangent-cone sampling and trajectory containment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certify import CERTIFIED, FALSIFIED, CertificationReport, SamplePlan
from .integrate import TOL_DOMAIN, integrate
from .model import SystemModel
from .polytope import Box, DomainError, Polytope
from .signals import Constant

__all__ = [
    "ActiveSet",
    "Polytope",
    "active_set",
    "invariance_certify",
    "polytope_tangent_vectors_ok",
    "trajectory_containment_check",
]

TOL_ACTIVE = 1e-9
TOL_CONE = 1e-8
SAMPLES_PER_FACET = 500


@dataclass(frozen=True)
class ActiveSet:
    x: np.ndarray
    indices: tuple[int, ...]


def active_set(P: Polytope, x, tol_active: float = TOL_ACTIVE) -> ActiveSet:
    x = np.asarray(x, dtype=float)
    if not P.contains(x, tol_active):
        raise DomainError(f"point {x.tolist()} is not in the polytope")
    return ActiveSet(x, tuple(int(i) for i in P.active(x, tol_active)))


def _cone_margin(P: Polytope, x, v, tol_active: float) -> tuple[float, int | None]:
    """``-max G_i v`` over active rows (``inf`` in the interior) and the worst row."""
    idx = active_set(P, x, tol_active).indices
    if not idx:
        return np.inf, None
    vals = P.G[list(idx)] @ np.asarray(v, dtype=float)
    k = int(np.argmax(vals))
    return float(-vals[k]), idx[k]


def polytope_tangent_vectors_ok(
    P: Polytope, x, v, tol_active: float = TOL_ACTIVE, tol_cone: float = TOL_CONE
) -> bool:
    """Is ``v`` in the tangent cone ``{v : G_i v <= 0, i active}`` of ``P`` at ``x``?"""
    margin, _ = _cone_margin(P, x, v, tol_active)
    return margin >= -tol_cone


def _check_inside(P: Polytope, model: SystemModel) -> None:
    if P.n != model.n:
        raise DomainError(f"polytope has dimension {P.n}, model has {model.n} states")
    for v in P.vertices:
        if not model.state_domain.contains(v, TOL_DOMAIN):
            raise DomainError(f"polytope vertex {v.tolist()} lies outside the state domain")


def _input_samples(box: Box, rng: np.random.Generator) -> np.ndarray:
    return np.vstack([box.lo, box.hi, box.sample(rng, 1)])


def invariance_certify(
    model: SystemModel,
    P: Polytope | None = None,
    u_box: Box | None = None,
    plan: SamplePlan | None = None,
    samples_per_facet: int = SAMPLES_PER_FACET,
    *,
    tol_active: float = TOL_ACTIVE,
    tol_cone: float = TOL_CONE,
) -> CertificationReport:
    """Check ``f(x, u)`` against the tangent cone of ``P`` at sampled boundary points.

    Points are all vertices plus ``samples_per_facet`` points on every facet;
    each is paired with the input box corners ``lo``, ``hi`` and one random
    input.  Rows that meet ``P`` only in a lower-dimensional face are covered
    by the vertex checks.
    """
    P = P if P is not None else model.state_domain
    u_box = u_box if u_box is not None else model.input_domain
    plan = plan or SamplePlan()
    _check_inside(P, model)
    if u_box.m != model.m:
        raise ValueError(f"input box has dimension {u_box.m}, model has {model.m} inputs")
    rng = plan.rng()
    points = [(v, None) for v in P.vertices]
    n_facets = 0
    for i in range(P.q):
        pts = P.sample_facet(i, rng, samples_per_facet)
        if len(pts):
            n_facets += 1
        points.extend((x, i) for x in pts)
    worst = np.inf
    cex = None
    n_checked = 0
    for x, facet in points:
        if not P.contains(x, tol_active):
            x = P.retract(x)
        for u in _input_samples(u_box, rng):
            margin, row = _cone_margin(P, x, model.rhs(x, u), tol_active)
            n_checked += 1
            if margin < worst:
                worst = margin
                if margin < -tol_cone:
                    cex = {
                        "x": x.tolist(),
                        "u": u.tolist(),
                        "facet": row,
                        "normal": P.G[row].tolist(),
                        "value": margin,
                    }
    verdict = CERTIFIED if worst >= -tol_cone else FALSIFIED
    return CertificationReport(
        verdict=verdict,
        condition="invariance",
        n_checked=n_checked,
        worst_margin=float(worst),
        counterexample=cex if verdict == FALSIFIED else None,
        notes=[
            f"tangent-cone condition checked at {len(points)} boundary points ({n_facets} facets) "
            "with sampled inputs; sufficient direction only, not a proof",
        ],
    )


def trajectory_containment_check(
    model: SystemModel,
    P: Polytope | None = None,
    plan: SamplePlan | None = None,
    horizon: float = 50.0,
    *,
    u_box: Box | None = None,
    starts=None,
    tol_domain: float = TOL_DOMAIN,
) -> CertificationReport:
    """Simulate from interior and boundary starts; any exit from ``P`` falsifies invariance.

    Half the starts are interior samples, half lie on randomly chosen facets.
    Each run uses a constant input drawn from ``u_box``.  ``starts`` overrides
    the sampled initial states.
    """
    P = P if P is not None else model.state_domain
    u_box = u_box if u_box is not None else model.input_domain
    plan = plan or SamplePlan(n_points=50)
    _check_inside(P, model)
    rng = plan.rng()
    if starts is None:
        k_in = plan.n_points - plan.n_points // 2
        pts = [P.sample_interior(rng, k_in)]
        facets = [i for i in range(P.q) if P.facet_dimension(i) == P.n - 1]
        for i in rng.choice(facets, size=plan.n_points - k_in):
            pts.append(P.sample_facet(int(i), rng, 1))
        starts = np.vstack(pts)
    else:
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
    inputs = u_box.sample(rng, len(starts))
    exits = []
    worst = np.inf
    for x0, u in zip(starts, inputs):
        x0 = P.retract(x0)
        traj = integrate(model, x0, Constant(u), horizon, domain=P, stop_on_exit=True, tol_domain=tol_domain)
        margin = -max(P.violation(x) for x in traj.states)
        worst = min(worst, margin)
        if traj.exited:
            exits.append({"x0": x0.tolist(), "u": u.tolist(), "exit_time": traj.exit_time})
    verdict = FALSIFIED if exits else CERTIFIED
    notes = [f"{len(starts)} simulations over [0, {horizon:g}]; containment is evidence, not a proof"]
    if exits:
        notes.append(f"{len(exits)} trajectories left the polytope")
    return CertificationReport(
        verdict=verdict,
        condition="containment",
        n_checked=len(starts),
        worst_margin=float(worst),
        counterexample=min(exits, key=lambda e: e["exit_time"]) if exits else None,
        notes=notes,
    )

