"""Cascades of monotone systems and small-gain analysis of SISO negative feedback."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .certify import CERTIFIED, SamplePlan, sign_pattern_certify
from .characteristic import (
    Characteristic,
    CharacteristicError,
    compute_characteristic,
    equilibrium_at,
    input_grid,
    newton_equilibrium,
)
from .integrate import integrate
from .model import EvaluationError, ModelError, SystemModel, SystemOrders, validate
from .order import OrthantOrder
from .polytope import Box
from .signals import Constant

TOL_FP = 1e-9
TOL_CL = 1e-5
N_SG_GRID = 101
N_SG_STARTS = 64


class PreconditionError(ValueError):
    """Hypotheses of the analysis do not hold (not a falsification of its conclusion)."""


def _relabel(model: SystemModel, offset: int) -> tuple[list[ex.Expr], list[ex.Expr]]:
    """Shift state indices by ``offset`` and inline parameters as literals."""
    mapping: dict[str, ex.Expr] = {k: ex.Num(float(v)) for k, v in model.params.items()}
    mapping.update({f"x{i + 1}": ex.Var(f"x{i + 1 + offset}") for i in range(model.n)})
    f = [ex.substitute(e, mapping) for e in model.f]
    h = [ex.substitute(e, mapping) for e in model.h]
    return f, h


def _output_range(model: SystemModel, n_samples: int = 256) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    pts = np.vstack([model.state_domain.vertices, model.state_domain.sample_interior(rng, n_samples)])
    ys = np.array([model.output(x) for x in pts])
    return ys.min(axis=0), ys.max(axis=0)


@dataclass(frozen=True, eq=False)
class CascadeModel:
    stages: tuple[SystemModel, ...]
    composite: SystemModel

    @property
    def offsets(self) -> list[int]:
        out, k = [], 0
        for s in self.stages:
            out.append(k)
            k += s.n
        return out


def cascade(stages) -> CascadeModel:
    """Series connection: the output of stage ``k`` drives the input of stage ``k + 1``."""
    stages = tuple(stages)
    if not stages:
        raise ValueError("a cascade needs at least one stage")
    for k, (a, b) in enumerate(zip(stages[:-1], stages[1:])):
        if a.p != b.m:
            raise ModelError(f"stage {k + 1} has {a.p} outputs but stage {k + 2} expects {b.m} inputs")
        if a.orders.output != b.orders.input:
            raise ModelError(f"output order of stage {k + 1} differs from input order of stage {k + 2}")
        lo, hi = _output_range(a)
        if not (b.input_domain.contains(lo, 1e-9) and b.input_domain.contains(hi, 1e-9)):
            raise ModelError(f"outputs of stage {k + 1} leave the input domain of stage {k + 2}")
    f_all: list[ex.Expr] = []
    offset = 0
    prev_h: list[ex.Expr] | None = None
    domain = None
    for stage in stages:
        f, h = _relabel(stage, offset)
        if prev_h is not None:
            wire = {f"u{j + 1}": prev_h[j] for j in range(stage.m)}
            f = [ex.substitute(e, wire) for e in f]
        f_all.extend(f)
        prev_h = h
        domain = stage.state_domain if domain is None else domain.product(stage.state_domain)
        offset += stage.n
    eps = sum((s.orders.state.eps for s in stages), ())
    composite = SystemModel(
        f=tuple(f_all),
        h=tuple(prev_h),
        state_domain=domain,
        input_domain=stages[0].input_domain,
        orders=SystemOrders(OrthantOrder(eps), stages[0].orders.input, stages[-1].orders.output),
        params={},
        name="cascade(" + ", ".join(s.name or "?" for s in stages) + ")",
    )
    return CascadeModel(stages, validate(composite))


@dataclass(frozen=True, eq=False)
class CascadeCharacteristic:
    composed: Characteristic
    direct: Characteristic
    stages: tuple[Characteristic, ...]
    max_discrepancy: float


def _compose(casc: CascadeModel, grid: np.ndarray, **kw) -> tuple[Characteristic, list[Characteristic]]:
    count = len(grid)
    first = compute_characteristic(casc.stages[0], grid, **kw)
    stage_chars = [first]
    pieces_x = [first.states]
    outputs = first.outputs
    status = [s == "gas" for s in first.status]
    for stage in casc.stages[1:]:
        if stage.m == 1:
            lo, hi = float(outputs.min()), float(outputs.max())
            sub_grid = input_grid(stage, count, lo, hi)
            ch = compute_characteristic(stage, sub_grid, **kw)
            xs = np.array([ch.state_at(y) for y in outputs])
            outputs = np.array([ch.output_at(y) for y in outputs])
            # interpolated values are only as trustworthy as the whole sub-table
            ok = np.full(count, all(ch.gas_evidenced))
        else:
            ch = compute_characteristic(stage, outputs, **kw)
            xs, outputs = ch.states, ch.outputs
            ok = ch.gas_evidenced
        stage_chars.append(ch)
        pieces_x.append(xs)
        status = [a and bool(b) for a, b in zip(status, ok)]
    states = np.hstack(pieces_x)
    model = casc.composite
    residuals = np.array([np.max(np.abs(model.rhs(x, u))) for x, u in zip(states, grid)])
    composed = Characteristic(
        inputs=grid,
        states=states,
        outputs=outputs,
        residuals=residuals,
        gas_starts=first.gas_starts,
        gas_max_dist=np.full(count, max(float(c.gas_max_dist.max()) for c in stage_chars)),
        status=tuple("gas" if s else "unconfirmed" for s in status),
    )
    return composed, stage_chars


def cascade_characteristic(casc: CascadeModel, grid=None, **kw) -> CascadeCharacteristic:
    """Characteristic of a cascade computed twice: by composing stages and directly.

    Later stages are tabulated on uniform grids spanning the range their
    input takes, then interpolated (scalar links) or tabulated at the exact
    induced points (vector links).
    """
    model = casc.composite
    if grid is None:
        grid = input_grid(model)
    elif np.isscalar(grid):
        grid = input_grid(model, int(grid))
    grid = np.atleast_2d(np.asarray(grid, dtype=float)).reshape(-1, model.m)
    composed, stage_chars = _compose(casc, grid, **kw)
    direct = compute_characteristic(model, grid, **kw)
    gap = max(
        float(np.max(np.abs(composed.states - direct.states))),
        float(np.max(np.abs(composed.outputs - direct.outputs))),
    )
    return CascadeCharacteristic(composed, direct, tuple(stage_chars), gap)


@dataclass(frozen=True, eq=False)
class FeedbackLoop:
    """Plant ``x' = f_x(x, w), y = h_x(x)`` closed by controller ``z' = f_z(z, y), w = h_z(z)``."""

    plant: SystemModel
    controller: SystemModel

    def __post_init__(self):
        for label, mdl in (("plant", self.plant), ("controller", self.controller)):
            if mdl.m != 1 or mdl.p != 1:
                raise PreconditionError(f"{label} must be single-input single-output")
        po, co = self.plant.orders, self.controller.orders
        if po.input.eps != (0,) or po.output.eps != (0,):
            raise PreconditionError("plant input and output must carry the standard order")
        if co.input.eps != (0,) or co.output.eps != (1,):
            raise PreconditionError("controller input must be ordered by <= and its output by >=")


def feedback_model(loop: FeedbackLoop) -> SystemModel:
    """Closed-loop system on ``(x, z)`` with outputs ``(y, w)``.

    The loop has no external input; a dummy input pinned to 0 keeps the model
    shape uniform.
    """
    P, C = loop.plant, loop.controller
    fx, hx = _relabel(P, 0)
    fz, hz = _relabel(C, P.n)
    fx = [ex.substitute(e, {"u1": hz[0]}) for e in fx]
    fz = [ex.substitute(e, {"u1": hx[0]}) for e in fz]
    model = SystemModel(
        f=tuple(fx + fz),
        h=(hx[0], hz[0]),
        state_domain=P.state_domain.product(C.state_domain),
        input_domain=Box([0.0], [0.0]),
        orders=SystemOrders(
            OrthantOrder(P.orders.state.eps + C.orders.state.eps), OrthantOrder((0,)), OrthantOrder((0, 1))
        ),
        params={},
        name=f"feedback({P.name or 'plant'}, {C.name or 'controller'})",
    )
    return validate(model)


@dataclass
class SmallGainReport:
    ky_table: Characteristic
    kw_table: Characteristic
    rho_grid: np.ndarray
    rho_values: np.ndarray
    fixed_point: float | None
    fixed_point_tabulated: float | None
    fixed_point_residual: float | None
    output_fixed_point: float | None
    starts: list[dict]
    max_iterations_used: int
    attractive: bool
    closed_loop_equilibrium: tuple[list[float], list[float]] | None
    verified: bool | None = None
    unbounded: bool = False
    closed_loop: dict | None = None
    notes: list[str] = field(default_factory=list)

    def rho_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "ky", "kw_of_ky"])
        ky = self.ky_table.outputs[:, 0]
        for u, y, r in zip(self.rho_grid, ky, self.rho_values):
            w.writerow([f"{u:.17g}", f"{y:.17g}", f"{r:.17g}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "fixed_point": self.fixed_point,
            "fixed_point_tabulated": self.fixed_point_tabulated,
            "fixed_point_residual": self.fixed_point_residual,
            "output_fixed_point": self.output_fixed_point,
            "attractive": self.attractive,
            "max_iterations_used": self.max_iterations_used,
            "starts": self.starts,
            "closed_loop_equilibrium": self.closed_loop_equilibrium,
            "verified": self.verified,
            "unbounded": self.unbounded,
            "closed_loop": self.closed_loop,
            "ky_table": self.ky_table.to_dict(),
            "kw_table": self.kw_table.to_dict(),
            "rho": {"u": self.rho_grid.tolist(), "rho": self.rho_values.tolist()},
            "notes": list(self.notes),
        }


def _iterate(rho, u0: float, max_iter: int, tol_fp: float) -> dict:
    """Run ``u <- rho(u)``; stop on convergence or on a detected 2-cycle."""
    prev, u = None, u0
    for k in range(1, max_iter + 1):
        nxt = rho(u)
        if abs(nxt - u) < tol_fp:
            return {"start": u0, "terminal": nxt, "iterations": k, "converged": True, "period2": False}
        if prev is not None and abs(nxt - prev) < tol_fp and abs(nxt - u) > 1e3 * tol_fp:
            return {"start": u0, "terminal": nxt, "iterations": k, "converged": False, "period2": True}
        prev, u = u, nxt
    return {"start": u0, "terminal": u, "iterations": max_iter, "converged": False, "period2": False}


def _exact_state(model: SystemModel, char: Characteristic, u: float) -> np.ndarray:
    guess = char.state_at(u)
    try:
        x, _ = newton_equilibrium(model, guess, [u])
        if model.state_domain.contains(x, 1e-6):
            return x
    except (CharacteristicError, EvaluationError):
        pass
    return equilibrium_at(model, [u], x_start=model.state_domain.retract(guess))[0]


def _check_monotone_table(char: Characteristic, sign: float, label: str, tol: float) -> None:
    y = char.outputs[:, 0]
    steps = sign * np.diff(y)
    if steps.size and steps.min() < -tol:
        kind = "nondecreasing" if sign > 0 else "nonincreasing"
        raise PreconditionError(f"{label} characteristic is not {kind} on the grid (worst step {steps.min():.3g})")
    if "absent" in char.status:
        raise PreconditionError(f"{label} characteristic is absent at some grid input")


def small_gain_certify(
    loop: FeedbackLoop,
    grid: int = N_SG_GRID,
    starts: int = N_SG_STARTS,
    *,
    max_iter: int = 10_000,
    tol_fp: float = TOL_FP,
    tol_monotone: float = 1e-6,
    certify_plan: SamplePlan | None = None,
    **char_kw,
) -> SmallGainReport:
    """Tabulate both characteristics and test global attractivity of ``u <- k_w(k_y(u))``.

    The scalar map is iterated on the linearly interpolated tables from
    ``starts`` grid-spanning initial values; a 2-cycle anywhere means not
    attractive.  The common limit is then polished by root-finding
    ``k_w(k_y(u)) = u`` with characteristics evaluated exactly (Newton solves)
    rather than interpolated.  All of this is numerical evidence, not proof.
    """
    plant, ctrl = loop.plant, loop.controller
    plan = certify_plan or SamplePlan(n_points=500)
    for label, mdl in (("plant", plant), ("controller", ctrl)):
        rep = sign_pattern_certify(mdl, plan)
        if rep.verdict != CERTIFIED:
            raise PreconditionError(f"{label} is not monotone under its declared orders ({rep.verdict})")
    notes = []
    ugrid = input_grid(plant, grid)
    ky = compute_characteristic(plant, ugrid, **char_kw)
    _check_monotone_table(ky, 1.0, "plant I/O", tol_monotone)
    ylo, yhi = float(ky.outputs.min()), float(ky.outputs.max())
    if not (ctrl.input_domain.contains([ylo], 1e-9) and ctrl.input_domain.contains([yhi], 1e-9)):
        raise PreconditionError("plant outputs leave the controller input domain")
    kw = compute_characteristic(ctrl, input_grid(ctrl, grid, ylo, yhi), **char_kw)
    _check_monotone_table(kw, -1.0, "controller I/O", tol_monotone)
    for ch, label in ((ky, "plant"), (kw, "controller")):
        if not all(ch.gas_evidenced):
            notes.append(f"{label} characteristic not GAS-evidenced at every grid point")
    u_lo, u_hi = float(ugrid[0, 0]), float(ugrid[-1, 0])
    wlo, whi = float(kw.outputs.min()), float(kw.outputs.max())
    if wlo < u_lo - 1e-9 or whi > u_hi + 1e-9:
        raise PreconditionError("iteration leaves the grid range: controller outputs exceed the plant input grid")

    yg, yv = ky.inputs[:, 0], ky.outputs[:, 0]
    wg, wv = kw.inputs[:, 0], kw.outputs[:, 0]

    def rho_tab(u):
        return float(np.interp(np.interp(u, yg, yv), wg, wv))

    rho_values = np.array([rho_tab(u) for u in yg])
    runs = [_iterate(rho_tab, float(u0), max_iter, tol_fp) for u0 in np.linspace(u_lo, u_hi, starts)]
    terminals = np.array([r["terminal"] for r in runs])
    converged = all(r["converged"] for r in runs)
    period2 = any(r["period2"] for r in runs)
    common = converged and float(np.ptp(terminals)) < 1e3 * tol_fp
    attractive = bool(converged and common and not period2)
    if period2:
        notes.append("period-2 orbit detected for the tabulated map")

    fixed = fixed_tab = resid = y_fixed = None
    eq = None

    def rho_exact(u):
        x = _exact_state(plant, ky, u)
        y = float(plant.output(x)[0])
        z = _exact_state(ctrl, kw, y)
        return float(ctrl.output(z)[0])

    if attractive:
        fixed_tab = float(np.median(terminals))
        # each start finishes on the exact map, removing the table's interpolation error
        finished: dict[float, dict] = {}
        for r in runs:
            t = r["terminal"]
            if t not in finished:
                finished[t] = _iterate(rho_exact, t, 200, tol_fp)
            r["terminal_exact"] = finished[t]["terminal"]
            r["exact_iterations"] = finished[t]["iterations"]
        if not all(f["converged"] for f in finished.values()):
            notes.append("exact-map continuation did not settle within 200 iterations for some starts")

        spacing = (u_hi - u_lo) / max(grid - 1, 1)
        a, b = max(u_lo, fixed_tab - 2 * spacing), min(u_hi, fixed_tab + 2 * spacing)
        fa, fb = rho_exact(a) - a, rho_exact(b) - b
        while fa * fb > 0 and (a > u_lo or b < u_hi):
            a, b = max(u_lo, a - 2 * spacing), min(u_hi, b + 2 * spacing)
            fa, fb = rho_exact(a) - a, rho_exact(b) - b
        if fa == 0.0:
            fixed = a
        elif fb == 0.0:
            fixed = b
        elif fa * fb < 0:
            fixed = float(brentq(lambda s: rho_exact(s) - s, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps))
        else:
            notes.append("exact fixed point not bracketed; keeping the tabulated one")
            fixed = fixed_tab
        resid = abs(rho_exact(fixed) - fixed)
        if resid >= tol_fp:
            attractive = False
            notes.append(f"exact fixed-point residual {resid:.3g} exceeds tolerance")
        x_e = _exact_state(plant, ky, fixed)
        y_fixed = float(plant.output(x_e)[0])
        z_e = _exact_state(ctrl, kw, y_fixed)
        eq = (x_e.tolist(), z_e.tolist())
        for r in runs:
            r["fixed_point"] = fixed
        if min(abs(fixed - u_lo), abs(fixed - u_hi)) < spacing:
            notes.append("fixed point sits at the edge of the plant input grid; consider extending the grid")
    notes.append(f"attractivity tested from {starts} starts; evidence, not a proof")
    return SmallGainReport(
        ky_table=ky,
        kw_table=kw,
        rho_grid=yg,
        rho_values=rho_values,
        fixed_point=fixed,
        fixed_point_tabulated=fixed_tab,
        fixed_point_residual=resid,
        output_fixed_point=y_fixed,
        starts=runs,
        max_iterations_used=max(r["iterations"] for r in runs),
        attractive=attractive,
        closed_loop_equilibrium=eq,
        notes=notes,
    )


def closed_loop_verify(
    loop: FeedbackLoop,
    report: SmallGainReport,
    plan: SamplePlan | None = None,
    horizon: float = 200.0,
    tol_cl: float = TOL_CL,
) -> SmallGainReport:
    """Simulate the closed loop from sampled states and compare with the predicted equilibrium."""
    if not report.attractive:
        raise PreconditionError("closed-loop verification needs an attractive small-gain report")
    plan = plan or SamplePlan(n_points=20)
    model = feedback_model(loop)
    rng = plan.rng()
    dom = model.state_domain
    starts = np.vstack([dom.vertices[: plan.n_points // 2], dom.sample_interior(rng, plan.n_points - min(len(dom.vertices), plan.n_points // 2))])
    x_e, z_e = report.closed_loop_equilibrium
    eta = np.array(x_e + z_e)
    y_star, w_star = report.output_fixed_point, report.fixed_point
    center = dom.chebyshev[0]
    bound = 10.0 * dom.diameter
    worst_state = worst_y = worst_w = 0.0
    unbounded = False
    for s in starts:
        traj = integrate(model, s, Constant([0.0]), horizon)
        if np.max(np.linalg.norm(traj.states - center, axis=1)) > bound:
            unbounded = True
            break
        worst_state = max(worst_state, float(np.max(np.abs(traj.final_state - eta))))
        y_T, w_T = traj.outputs[-1]
        worst_y = max(worst_y, abs(y_T - y_star))
        worst_w = max(worst_w, abs(w_T - w_star))
    verified = (not unbounded) and max(worst_state, worst_y, worst_w) < tol_cl
    notes = list(report.notes)
    if unbounded:
        notes.append("closed-loop trajectory left 10x the domain diameter: bounded-solutions hypothesis fails")
    return replace(
        report,
        verified=bool(verified),
        unbounded=unbounded,
        closed_loop={
            "n_runs": len(starts),
            "horizon": horizon,
            "max_state_error": worst_state,
            "max_output_error": worst_y,
            "max_feedback_error": worst_w,
        },
        notes=notes,
    )
