"""Sampling certificates (and counterexamples) for monotonicity.

All tests are *sampling* certificates: the conditions are universally
quantified over the domain, and a ``certified`` verdict only means no
violation beyond the tolerance was found at the sampled points.  A
``falsified`` verdict always carries a counterexample that :func:`recheck`
reproduces.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from .integrate import integrate, jacobian_fd
from .model import SystemModel, SystemOrders
from .order import OrthantOrder
from .polytope import DomainError
from .signals import Constant, PiecewiseConstant, signal_from_dict

TOL_CERT = 1e-8
TOL_TRAJ = 1e-6

CERTIFIED = "certified"
FALSIFIED = "falsified"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SamplePlan:
    seed: int = 42
    n_points: int = 2000
    boundary_fraction: float = 0.25

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be at least 1")
        if not 0.0 <= self.boundary_fraction <= 1.0:
            raise ValueError("boundary_fraction must lie in [0, 1]")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class CertificationReport:
    verdict: str
    condition: str
    n_checked: int
    worst_margin: float
    counterexample: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_dict(self) -> dict:
        d = {
            "verdict": self.verdict,
            "condition": self.condition,
            "n_checked": self.n_checked,
            "worst_margin": float(self.worst_margin),
            "notes": list(self.notes),
        }
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample
        return d


def _sampling_note(n: int, tol: float) -> str:
    return f"sampling certificate at {n} points with tolerance {tol:g}; not a proof"


def _verdict(worst: float, tol: float) -> str:
    return CERTIFIED if worst >= -tol else FALSIFIED


def conjugate_to_cooperative(model: SystemModel) -> SystemModel:
    """Rewrite ``model`` in coordinates ``z = P x, v = Q u`` with trivial orders.

    The new field is ``P f(P z, Q v)`` and the new output is ``R h(P z)``,
    where ``P, Q, R`` are the sign matrices of the state, input and output
    orders.
    """
    o = model.orders
    ps, qs, rs = o.state.signs, o.input.signs, o.output.signs
    mapping: dict[str, ex.Expr] = {}
    for i, s in enumerate(ps):
        if s < 0:
            mapping[f"x{i + 1}"] = ex.Neg(ex.Var(f"x{i + 1}"))
    for j, s in enumerate(qs):
        if s < 0:
            mapping[f"u{j + 1}"] = ex.Neg(ex.Var(f"u{j + 1}"))

    def flip(e, s):
        e = ex.substitute(e, mapping) if mapping else e
        return ex.negate(e) if s < 0 else e

    return replace(
        model,
        f=tuple(flip(e, s) for e, s in zip(model.f, ps)),
        h=tuple(flip(e, s) for e, s in zip(model.h, rs)),
        state_domain=model.state_domain.flip(ps) if o.state.eps.count(1) else model.state_domain,
        input_domain=model.input_domain.flip(qs) if o.input.eps.count(1) else model.input_domain,
        orders=SystemOrders(
            OrthantOrder.standard(model.n), OrthantOrder.standard(model.m), OrthantOrder.standard(model.p)
        ),
        name=f"{model.name}:cooperative" if model.name else "cooperative",
    )


def time_reversed(model: SystemModel) -> SystemModel:
    """Same model with the field ``f`` replaced by ``-f``."""
    return replace(model, f=tuple(ex.negate(e) for e in model.f), name=f"{model.name}:reversed")


def _signed_jacobians(model, x, u):
    A, B = jacobian_fd(model, x, u)
    P = model.orders.state.signs
    Q = model.orders.input.signs
    SA = P[:, None] * A * P[None, :]
    SB = P[:, None] * B * Q[None, :]
    return SA, SB


def _jacobian_margin(model, x, u):
    """Smallest signed entry among off-diagonal ``P A P`` and all of ``P B Q``."""
    SA, SB = _signed_jacobians(model, x, u)
    n = model.n
    off = SA.copy()
    off[np.diag_indices(n)] = np.inf
    best = (np.inf, None)
    if n > 1:
        i, j = np.unravel_index(np.argmin(off), off.shape)
        best = (float(off[i, j]), ("A", int(i), int(j)))
    i, j = np.unravel_index(np.argmin(SB), SB.shape)
    if SB[i, j] < best[0]:
        best = (float(SB[i, j]), ("B", int(i), int(j)))
    return best


def _interior_inputs(model, rng, k):
    return model.input_domain.sample(rng, k)


def sign_pattern_certify(
    model: SystemModel, plan: SamplePlan | None = None, tol_cert: float = TOL_CERT
) -> CertificationReport:
    """Check the orthant sign conditions on ``df/dx`` (off-diagonal) and ``df/du``."""
    plan = plan or SamplePlan()
    rng = plan.rng()
    xs = model.state_domain.sample_interior(rng, plan.n_points)
    us = _interior_inputs(model, rng, plan.n_points)
    worst = np.inf
    cex = None
    for x, u in zip(xs, us):
        margin, where = _jacobian_margin(model, x, u)
        if margin < worst:
            worst = margin
            if margin < -tol_cert:
                kind, i, j = where
                cex = {"x": x.tolist(), "u": u.tolist(), "matrix": kind, "i": i, "j": j, "value": margin}
    verdict = _verdict(worst, tol_cert)
    return CertificationReport(
        verdict=verdict,
        condition="sign-pattern",
        n_checked=len(xs),
        worst_margin=float(worst),
        counterexample=cex if verdict == FALSIFIED else None,
        notes=[_sampling_note(len(xs), tol_cert)],
    )


def _ordered_increment(pt, dom, free, rng, max_halvings=30):
    """Nonnegative increment on coordinates ``free`` keeping ``pt + d`` in ``dom``."""
    lo, hi = dom.bbox
    d = np.zeros_like(pt)
    if not free.any():
        return d
    d[free] = rng.uniform(0.0, 1.0, size=int(free.sum())) * (hi - lo)[free]
    for _ in range(max_halvings):
        if dom.contains(pt + d):
            return d
        d *= 0.5
    return None


def _ordered_input_pair(box, rng):
    v2 = box.sample(rng, 1)[0]
    v1 = v2 + rng.uniform(0.0, 1.0, size=box.m) * (box.hi - v2)
    return v1, v2


def _active_set(n, rng, boundary_fraction):
    """Coordinates tied between the two states of a Kamke pair (never empty)."""
    tied = np.zeros(n, dtype=bool)
    if n == 1 or rng.uniform() < boundary_fraction:
        tied[:] = True
        if n > 1:
            tied[rng.integers(n)] = False
        return tied
    size = int(rng.integers(1, n + 1))
    tied[rng.choice(n, size=size, replace=False)] = True
    return tied


def _kamke_margin(coop, z1, z2, v1, v2, tied):
    d = coop.rhs(z1, v1) - coop.rhs(z2, v2)
    idx = np.flatnonzero(tied)
    k = int(idx[np.argmin(d[idx])])
    return float(d[k]), k


def kamke_test(model: SystemModel, plan: SamplePlan | None = None, tol_cert: float = TOL_CERT) -> CertificationReport:
    """Boundary (Kamke) test in cooperative coordinates.

    Pairs ``z1 >= z2`` agree on a random nonempty set of coordinates ``I``;
    with ``v1 >= v2`` the field must satisfy ``g_i(z1, v1) >= g_i(z2, v2)``
    for ``i`` in ``I``.  Sample 0 is the tie ``z1 = z2, v1 = v2``.
    """
    plan = plan or SamplePlan()
    rng = plan.rng()
    coop = conjugate_to_cooperative(model)
    dom = coop.state_domain
    P = model.orders.state.signs
    Q = model.orders.input.signs
    worst = np.inf
    cex = None
    valid = 0
    for k in range(plan.n_points):
        z2 = dom.sample_interior(rng, 1)[0]
        if k == 0:
            tied = np.ones(model.n, dtype=bool)
            z1 = z2.copy()
            v2 = coop.input_domain.sample(rng, 1)[0]
            v1 = v2.copy()
        else:
            tied = _active_set(model.n, rng, plan.boundary_fraction)
            d = _ordered_increment(z2, dom, ~tied, rng)
            if d is None:
                continue
            z1 = z2 + d
            v1, v2 = _ordered_input_pair(coop.input_domain, rng)
        valid += 1
        margin, i = _kamke_margin(coop, z1, z2, v1, v2, tied)
        if margin < worst:
            worst = margin
            if margin < -tol_cert:
                cex = {
                    "xi1": (P * z1).tolist(),
                    "xi2": (P * z2).tolist(),
                    "u1": (Q * v1).tolist(),
                    "u2": (Q * v2).tolist(),
                    "tied": np.flatnonzero(tied).tolist(),
                    "i": i,
                    "value": margin,
                }
    if valid < plan.n_points / 10:
        raise DomainError(f"domain too thin: only {valid} ordered pairs out of {plan.n_points}")
    verdict = _verdict(worst, tol_cert)
    return CertificationReport(
        verdict=verdict,
        condition="kamke",
        n_checked=valid,
        worst_margin=float(worst),
        counterexample=cex if verdict == FALSIFIED else None,
        notes=[_sampling_note(valid, tol_cert)],
    )


def _ordered_signal_pair(box, rng, horizon, n_pieces):
    breaks = np.sort(rng.uniform(0.0, horizon, size=n_pieces - 1))
    breaks = np.unique(breaks[breaks > 0])
    hi_vals, lo_vals = [], []
    for _ in range(breaks.size + 1):
        v1, v2 = _ordered_input_pair(box, rng)
        hi_vals.append(v1)
        lo_vals.append(v2)
    return breaks, np.array(hi_vals), np.array(lo_vals)


def _pair_margins(model, x1, x2, u1, u2, horizon, n_grid):
    t1 = integrate(model, x1, u1, horizon, n_grid=n_grid)
    t2 = integrate(model, x2, u2, horizon, n_grid=n_grid)
    P = model.orders.state.signs
    margins = np.min(P[None, :] * (t1.states - t2.states), axis=1)
    return t1, t2, margins


def trajectory_monotonicity_test(
    model: SystemModel,
    plan: SamplePlan | None = None,
    horizon: float = 20.0,
    tol_traj: float = TOL_TRAJ,
    n_pieces: int = 4,
    n_grid: int = 400,
) -> CertificationReport:
    """Integrate ordered pairs (states and piecewise-constant inputs) and compare."""
    plan = plan or SamplePlan(n_points=100)
    rng = plan.rng()
    coop = conjugate_to_cooperative(model)
    dom = coop.state_domain
    P = model.orders.state.signs
    Q = model.orders.input.signs
    worst = np.inf
    cex = None
    exits = 0
    checked = 0
    for k in range(plan.n_points):
        z2 = dom.sample_interior(rng, 1)[0]
        if k == 0:
            z1 = z2.copy()
            v = coop.input_domain.sample(rng, 1)[0]
            breaks, hi_vals, lo_vals = np.array([]), v[None, :], v[None, :]
        else:
            free = ~_active_set(model.n, rng, plan.boundary_fraction) if rng.uniform() < 0.5 else np.ones(model.n, bool)
            d = _ordered_increment(z2, dom, free, rng)
            if d is None:
                continue
            z1 = z2 + d
            breaks, hi_vals, lo_vals = _ordered_signal_pair(coop.input_domain, rng, horizon, n_pieces)
        u1 = PiecewiseConstant(breaks, hi_vals * Q[None, :])
        u2 = PiecewiseConstant(breaks, lo_vals * Q[None, :])
        x1, x2 = P * z1, P * z2
        t1, t2, margins = _pair_margins(model, x1, x2, u1, u2, horizon, n_grid)
        checked += 1
        if t1.exited or t2.exited:
            exits += 1
        j = int(np.argmin(margins))
        if margins[j] < worst:
            worst = float(margins[j])
            if worst < -tol_traj:
                first = int(np.flatnonzero(margins < -tol_traj)[0])
                cex = {
                    "x1": x1.tolist(),
                    "x2": x2.tolist(),
                    "u1": u1.to_dict(),
                    "u2": u2.to_dict(),
                    "horizon": horizon,
                    "n_grid": n_grid,
                    "first_violation_time": float(t1.times[first]),
                    "value": worst,
                }
    notes = [_sampling_note(checked, tol_traj)]
    verdict = _verdict(worst, tol_traj)
    if verdict == CERTIFIED and exits:
        verdict = INCONCLUSIVE
        notes.append(f"{exits} trajectory pair(s) left the state domain")
    return CertificationReport(
        verdict=verdict,
        condition="trajectory",
        n_checked=checked,
        worst_margin=float(worst),
        counterexample=cex if verdict == FALSIFIED else None,
        notes=notes,
    )


def competitive_test(model: SystemModel, plan: SamplePlan | None = None, tol_cert: float = TOL_CERT) -> CertificationReport:
    """Monotonicity in backward time: sign-pattern and Kamke tests on ``-f``."""
    rev = time_reversed(model)
    parts = [("sign-pattern", sign_pattern_certify(rev, plan, tol_cert)), ("kamke", kamke_test(rev, plan, tol_cert))]
    worst = min(r.worst_margin for _, r in parts)
    cex = None
    for name, r in parts:
        if r.verdict == FALSIFIED:
            cex = dict(r.counterexample, component=name)
            break
    return CertificationReport(
        verdict=FALSIFIED if cex else CERTIFIED,
        condition="competitive",
        n_checked=sum(r.n_checked for _, r in parts),
        worst_margin=float(worst),
        counterexample=cex,
        notes=[f"{name}: {r.verdict}" for name, r in parts] + [_sampling_note(parts[0][1].n_checked, tol_cert)],
    )


def incremental_positivity_test(
    model: SystemModel,
    plan: SamplePlan | None = None,
    horizon: float = 20.0,
    tol_cert: float = TOL_CERT,
    n_times: int = 50,
) -> CertificationReport:
    """Check the conjugated linearisation along trajectories.

    Along each simulated trajectory with constant input, ``P A(t) P`` must
    be Metzler and ``P B(t) Q`` entrywise nonnegative.
    """
    plan = plan or SamplePlan(n_points=20)
    rng = plan.rng()
    xs = model.state_domain.sample_interior(rng, plan.n_points)
    us = model.input_domain.sample(rng, plan.n_points)
    worst = np.inf
    cex = None
    checked = 0
    exits = 0
    for x0, u in zip(xs, us):
        traj = integrate(model, x0, Constant(u), horizon, stop_on_exit=True)
        last = len(traj.times) - 1
        if traj.exited:
            # only the part of the trajectory inside the domain is sampled
            exits += 1
            last = int(np.searchsorted(traj.times, traj.exit_time, side="right")) - 1
            while last > 0 and not model.state_domain.contains(traj.states[last]):
                last -= 1
        idx = np.unique(np.linspace(0, last, n_times).round().astype(int))
        for k in idx:
            margin, where = _jacobian_margin(model, traj.states[k], u)
            checked += 1
            if margin < worst:
                worst = margin
                if margin < -tol_cert:
                    kind, i, j = where
                    cex = {
                        "x0": x0.tolist(),
                        "u": u.tolist(),
                        "t": float(traj.times[k]),
                        "x": traj.states[k].tolist(),
                        "matrix": kind,
                        "i": i,
                        "j": j,
                        "value": margin,
                    }
    verdict = _verdict(worst, tol_cert)
    notes = [_sampling_note(checked, tol_cert)]
    if exits:
        notes.append(f"{exits} trajectory(ies) left the state domain and were truncated")
        if verdict == CERTIFIED:
            verdict = INCONCLUSIVE
    return CertificationReport(
        verdict=verdict,
        condition="incremental-positivity",
        n_checked=checked,
        worst_margin=float(worst),
        counterexample=cex if verdict == FALSIFIED else None,
        notes=notes,
    )


def recheck(model: SystemModel, report: CertificationReport) -> float:
    """Re-evaluate the stored counterexample and return its margin."""
    c = report.counterexample
    if c is None:
        raise ValueError("report has no counterexample")
    cond = report.condition
    if cond == "competitive":
        model = time_reversed(model)
        cond = c["component"]
    if cond in ("sign-pattern", "incremental-positivity"):
        SA, SB = _signed_jacobians(model, np.array(c["x"]), np.array(c["u"]))
        return float((SA if c["matrix"] == "A" else SB)[c["i"], c["j"]])
    if cond == "kamke":
        coop = conjugate_to_cooperative(model)
        P = model.orders.state.signs
        Q = model.orders.input.signs
        tied = np.zeros(model.n, dtype=bool)
        tied[c["tied"]] = True
        z1, z2 = P * np.array(c["xi1"]), P * np.array(c["xi2"])
        v1, v2 = Q * np.array(c["u1"]), Q * np.array(c["u2"])
        d = coop.rhs(z1, v1) - coop.rhs(z2, v2)
        return float(d[c["i"]])
    if cond == "invariance":
        return float(-np.dot(c["normal"], model.rhs(np.array(c["x"]), np.array(c["u"]))))
    if cond == "trajectory":
        u1, u2 = signal_from_dict(c["u1"]), signal_from_dict(c["u2"])
        _, _, margins = _pair_margins(model, c["x1"], c["x2"], u1, u2, c["horizon"], c["n_grid"])
        return float(margins.min())
    raise ValueError(f"cannot recheck condition {cond!r}")


TESTS = {
    "sign-pattern": sign_pattern_certify,
    "kamke": kamke_test,
    "trajectory": trajectory_monotonicity_test,
    "competitive": competitive_test,
    "incremental-positivity": incremental_positivity_test,
}
