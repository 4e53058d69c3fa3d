"""Static input/state and input/output characteristics.

For each constant input the equilibrium is found by simulating from the
Chebyshev centre of the state domain and polishing with Newton's method.
Global asymptotic stability is only *evidenced*, by simulating from a batch
of further initial conditions and checking they all end up at the same point.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .integrate import TOL_DOMAIN, integrate, jacobian_fd
from .model import EvaluationError, SystemModel
from .order import OrthantOrder
from .signals import Constant, InputSignal

TOL_EQ = 1e-10
TOL_GAS = 1e-5
TOL_SAND = 1e-3
T_SETTLE = 200.0
N_GAS = 16
N_CHAR_GRID = 25


class CharacteristicError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Characteristic:
    inputs: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    residuals: np.ndarray
    gas_starts: np.ndarray
    gas_max_dist: np.ndarray
    status: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def gas_evidenced(self) -> np.ndarray:
        return np.array([s == "gas" for s in self.status])

    def _interp(self, table: np.ndarray, u) -> np.ndarray:
        if self.inputs.shape[1] != 1:
            raise ValueError("interpolation needs a scalar input grid")
        grid = self.inputs[:, 0]
        u = float(np.asarray(u).reshape(-1)[0])
        return np.array([np.interp(u, grid, col) for col in table.T])

    def state_at(self, u) -> np.ndarray:
        return self._interp(self.states, u)

    def output_at(self, u) -> np.ndarray:
        return self._interp(self.outputs, u)

    def to_csv(self) -> str:
        n, p = self.states.shape[1], self.outputs.shape[1]
        m = self.inputs.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        ucols = ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]
        w.writerow(ucols + [f"kx_{i + 1}" for i in range(n)] + [f"ky_{k + 1}" for k in range(p)] + ["residual", "gas_max_dist"])
        for row in zip(self.inputs, self.states, self.outputs, self.residuals, self.gas_max_dist):
            u, x, y, r, d = row
            w.writerow([f"{v:.17g}" for v in (*u, *x, *y, r, d)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "states": self.states.tolist(),
            "outputs": self.outputs.tolist(),
            "residuals": self.residuals.tolist(),
            "gas_starts": self.gas_starts.tolist(),
            "gas_max_dist": self.gas_max_dist.tolist(),
            "status": list(self.status),
        }


def input_grid(model: SystemModel, count: int = N_CHAR_GRID, lo=None, hi=None) -> np.ndarray:
    """Tensor grid with ``count`` points per input channel over the input box."""
    box = model.input_domain
    lo = box.lo if lo is None else np.broadcast_to(np.asarray(lo, dtype=float), box.lo.shape)
    hi = box.hi if hi is None else np.broadcast_to(np.asarray(hi, dtype=float), box.hi.shape)
    axes = [np.linspace(a, b, count if b > a else 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([mg.reshape(-1) for mg in mesh], axis=1)


def newton_equilibrium(model: SystemModel, x0, u, tol_eq: float = TOL_EQ, max_iter: int = 50) -> tuple[np.ndarray, float]:
    """Solve ``f(x, u) = 0`` from ``x0`` with finite-difference Newton steps."""
    x = np.asarray(x0, dtype=float).copy()
    u = np.asarray(u, dtype=float)
    dom = model.state_domain
    fx = model.rhs(x, u)
    res = float(np.max(np.abs(fx)))
    for _ in range(max_iter):
        if res < tol_eq:
            return x, res
        A, _ = jacobian_fd(model, x, u)
        try:
            dx = np.linalg.solve(A, -fx)
        except np.linalg.LinAlgError as exc:
            raise CharacteristicError(f"singular Jacobian at {x.tolist()}") from exc
        lam = 1.0
        for _ in range(30):
            xn = x + lam * dx
            if dom.contains(xn, TOL_DOMAIN):
                fn = model.rhs(xn, u)
                rn = float(np.max(np.abs(fn)))
                if rn < res or rn < tol_eq:
                    break
            lam *= 0.5
        else:
            raise CharacteristicError(f"Newton line search failed at {x.tolist()} (residual {res:.3g})")
        x, fx, res = xn, fn, rn
    if res < tol_eq:
        return x, res
    raise CharacteristicError(f"Newton did not converge in {max_iter} iterations (residual {res:.3g})")


def _gas_starts(model: SystemModel, rng, n_gas: int) -> np.ndarray:
    verts = model.state_domain.vertices
    k = min(len(verts), n_gas // 2)
    pick = verts[rng.choice(len(verts), size=k, replace=False)] if k else np.empty((0, model.n))
    rest = model.state_domain.sample_interior(rng, n_gas - k) if n_gas - k > 0 else np.empty((0, model.n))
    return np.vstack([pick, rest])


def equilibrium_at(
    model: SystemModel,
    u,
    *,
    t_settle: float = T_SETTLE,
    tol_eq: float = TOL_EQ,
    x_start=None,
) -> tuple[np.ndarray, float]:
    """Simulate-then-Newton equilibrium for the constant input ``u``."""
    start = model.state_domain.chebyshev[0] if x_start is None else np.asarray(x_start, dtype=float)
    traj = integrate(model, start, Constant(u), t_settle, n_grid=2, stop_on_exit=True)
    if traj.exited:
        raise CharacteristicError(
            f"settling run for u={list(np.atleast_1d(u))} left the state domain at t={traj.exit_time:.6g}"
        )
    x, res = newton_equilibrium(model, traj.final_state, u, tol_eq)
    if not model.state_domain.contains(x, TOL_DOMAIN):
        raise CharacteristicError(f"equilibrium {x.tolist()} for u={list(np.atleast_1d(u))} lies outside the state domain")
    return x, res


def compute_characteristic(
    model: SystemModel,
    grid=None,
    *,
    t_settle: float = T_SETTLE,
    n_gas: int = N_GAS,
    tol_eq: float = TOL_EQ,
    tol_gas: float = TOL_GAS,
    seed: int = 42,
) -> Characteristic:
    """Tabulate ``u -> (k_x(u), k_y(u))`` over ``grid`` (array of inputs or a count).

    Per point ``status`` is ``"gas"`` when all ``n_gas`` extra starts end within
    ``tol_gas`` of the equilibrium, ``"absent"`` when one of them converges to a
    different equilibrium (farther than ``100 * tol_gas``), and
    ``"unconfirmed"`` otherwise.
    """
    if grid is None:
        grid = input_grid(model)
    elif np.isscalar(grid):
        grid = input_grid(model, int(grid))
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != model.m:
        grid = grid.reshape(-1, model.m)
    rng = np.random.default_rng(seed)
    states, outputs, residuals, dists, status = [], [], [], [], []
    for u in grid:
        if not model.input_domain.contains(u, 1e-12):
            raise CharacteristicError(f"grid input {u.tolist()} lies outside the input domain")
        x, res = equilibrium_at(model, u, t_settle=t_settle, tol_eq=tol_eq)
        starts = _gas_starts(model, rng, n_gas)
        worst = 0.0
        point_status = "gas"
        # a start counts as settled once it is well inside the tol_gas ball
        arrived = lambda y, f, x=x: float(np.linalg.norm(y - x)) < 1e-2 * tol_gas
        for s in starts:
            end = integrate(model, s, Constant(u), t_settle, n_grid=2, stop_when=arrived).final_state
            dist = float(np.linalg.norm(end - x))
            worst = max(worst, dist)
            if dist >= tol_gas:
                try:
                    other, _ = newton_equilibrium(model, end, u, tol_eq)
                except (CharacteristicError, EvaluationError):
                    other = None
                if other is not None and np.linalg.norm(other - x) > 100 * tol_gas:
                    point_status = "absent"
                elif point_status == "gas":
                    point_status = "unconfirmed"
        states.append(x)
        outputs.append(model.output(x))
        residuals.append(res)
        dists.append(worst)
        status.append(point_status)
    return Characteristic(
        inputs=grid,
        states=np.array(states),
        outputs=np.array(outputs),
        residuals=np.array(residuals),
        gas_starts=np.full(len(grid), len(starts) if len(grid) else 0),
        gas_max_dist=np.array(dists),
        status=tuple(status),
    )


def monotonicity_margin(model: SystemModel, char: Characteristic, which: str = "states") -> float:
    """Worst order slack between grid-adjacent points of a scalar-input characteristic.

    Nonnegative iff the tabulated characteristic is nondecreasing under
    the model's input order and the state (or output) order.
    """
    if char.inputs.shape[1] != 1:
        raise ValueError("monotonicity check needs a scalar input grid")
    table = char.states if which == "states" else char.outputs
    order: OrthantOrder = model.orders.state if which == "states" else model.orders.output
    u = char.inputs[:, 0]
    in_sign = model.orders.input.signs[0]
    worst = np.inf
    for k in range(len(u) - 1):
        hi, lo = (k + 1, k) if in_sign * (u[k + 1] - u[k]) >= 0 else (k, k + 1)
        worst = min(worst, float(np.min(order.margin(table[hi], table[lo]))))
    return worst


def max_adjacent_jump(char: Characteristic) -> float:
    return float(np.max(np.linalg.norm(np.diff(char.states, axis=0), axis=1))) if len(char) > 1 else 0.0


@dataclass
class PlanarGasReport:
    verdict: bool
    n_samples: int
    max_trace: float
    min_det: float
    worst_sample: dict
    n_starts: int
    max_pairwise_distance: float
    limit_point: list[float]
    residual: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_planar_gas(
    model: SystemModel,
    u,
    plan=None,
    *,
    grid: int = 10,
    t_settle: float = T_SETTLE,
    tol_gas: float = TOL_GAS,
    tol_eq: float = TOL_EQ,
) -> PlanarGasReport:
    """Trace/determinant sampling plus a start-grid convergence sweep for planar systems.

    Negative trace everywhere also rules out periodic orbits (the divergence of
    a planar field is the trace of its Jacobian).  Starts come from a
    ``grid x grid`` lattice over the bounding box, retracted into the domain.
    """
    from .certify import SamplePlan

    if model.n != 2:
        raise ValueError("planar GAS check needs n = 2")
    plan = plan or SamplePlan(n_points=1000)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    rng = plan.rng()
    xs = model.state_domain.sample_interior(rng, plan.n_points)
    max_tr, min_det = -np.inf, np.inf
    worst = {}
    for x in xs:
        A, _ = jacobian_fd(model, x, u)
        tr, det = float(np.trace(A)), float(np.linalg.det(A))
        if tr > max_tr or det < min_det:
            worst = {"x": x.tolist(), "trace": tr, "det": det}
        max_tr = max(max_tr, tr)
        min_det = min(min_det, det)
    lo, hi = model.state_domain.bbox
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    starts = np.array([model.state_domain.retract([a, b]) for a in axes[0] for b in axes[1]])
    ends = np.array([integrate(model, s, Constant(u), t_settle, n_grid=2).final_state for s in starts])
    diffs = ends[:, None, :] - ends[None, :, :]
    spread = float(np.max(np.linalg.norm(diffs, axis=2)))
    notes = []
    try:
        limit, res = newton_equilibrium(model, ends.mean(axis=0), u, tol_eq)
    except CharacteristicError as exc:
        limit, res = ends.mean(axis=0), float(np.max(np.abs(model.rhs(ends.mean(axis=0), u))))
        notes.append(str(exc))
    ok = max_tr < 0 and min_det > 0 and spread < tol_gas and res < tol_eq
    if max_tr >= 0:
        notes.append("trace of the Jacobian is not negative at every sample")
    if min_det <= 0:
        notes.append("determinant of the Jacobian is not positive at every sample")
    if spread >= tol_gas:
        notes.append("start-grid trajectories did not reach a common point")
    notes.append(f"sampled at {len(xs)} interior points; evidence, not a proof")
    return PlanarGasReport(
        verdict=bool(ok),
        n_samples=len(xs),
        max_trace=max_tr,
        min_det=min_det,
        worst_sample=worst,
        n_starts=len(starts),
        max_pairwise_distance=spread,
        limit_point=limit.tolist(),
        residual=float(res),
        notes=notes,
    )


@dataclass
class LimitBounds:
    u_inf: float
    u_sup: float
    y_tail_lo: float
    y_tail_hi: float
    bound_lo: float
    bound_hi: float
    increasing: bool
    verdict: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _siso(model):
    if model.m != 1 or model.p != 1:
        raise ValueError("this check needs a single-input single-output model")


def limit_sandwich_check(
    model: SystemModel,
    char: Characteristic,
    x0,
    u: InputSignal,
    horizon: float = 300.0,
    tail_fraction: float = 0.5,
    *,
    tol_sand: float = TOL_SAND,
    n_grid: int = 4001,
) -> LimitBounds:
    """Compare tail extrema of ``y`` against the characteristic at the tail extrema of ``u``.

    When input and output orders agree the characteristic is increasing and
    ``k_y(u_inf) <= liminf y <= limsup y <= k_y(u_sup)``; otherwise the roles of
    ``u_inf`` and ``u_sup`` swap.
    """
    _siso(model)
    traj = integrate(model, x0, u, horizon, n_grid=n_grid)
    tail = traj.times >= (1.0 - tail_fraction) * horizon
    if tail.sum() < 10:
        raise ValueError("tail window has fewer than 10 output samples")
    t_tail = traj.times[tail]
    fine = np.linspace(t_tail[0], horizon, 20 * len(t_tail))
    u_vals = u.sample(fine)[:, 0]
    u_inf, u_sup = float(u_vals.min()), float(u_vals.max())
    y = traj.outputs[tail, 0]
    increasing = model.orders.input.eps[0] == model.orders.output.eps[0]
    k_inf = float(char.output_at(u_inf)[0])
    k_sup = float(char.output_at(u_sup)[0])
    lo_b, hi_b = (k_inf, k_sup) if increasing else (k_sup, k_inf)
    y_lo, y_hi = float(y.min()), float(y.max())
    ok = lo_b - tol_sand <= y_lo and y_hi <= hi_b + tol_sand
    return LimitBounds(u_inf, u_sup, y_lo, y_hi, lo_b, hi_b, bool(increasing), bool(ok))


@dataclass
class ReachabilityReport:
    verdict: bool
    c: list[float]
    d: list[float]
    worst_margin: float
    first_violation_time: float | None
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    asymptotic_envelope: tuple[list[float], list[float]] | None = None

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "c": self.c,
            "d": self.d,
            "worst_margin": self.worst_margin,
            "first_violation_time": self.first_violation_time,
            "asymptotic_envelope": self.asymptotic_envelope,
        }


def bounded_reachability_check(
    model: SystemModel,
    x0,
    u: InputSignal,
    horizon: float = 100.0,
    c=None,
    d=None,
    *,
    characteristic: Characteristic | None = None,
    tol_traj: float = 1e-6,
    n_grid: int = 400,
) -> ReachabilityReport:
    """Check ``phi(t, x0, c) <= x(t) <= phi(t, x0, d)`` for an input confined to ``[c, d]``.

    ``c`` and ``d`` default to the signal's range, ordered by the input order.
    """
    lo_u, hi_u = u.bounds()
    Q = model.orders.input.signs
    if c is None:
        c = np.where(Q > 0, lo_u, hi_u)
    if d is None:
        d = np.where(Q > 0, hi_u, lo_u)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    iorder = model.orders.input
    if not (iorder.geq(d, c) and iorder.geq(lo_u, c) and iorder.geq(hi_u, c) and iorder.geq(d, lo_u) and iorder.geq(d, hi_u)):
        raise ValueError("input values do not lie in the order interval [c, d]")
    x = integrate(model, x0, u, horizon, n_grid=n_grid)
    lower = integrate(model, x0, Constant(c), horizon, n_grid=n_grid)
    upper = integrate(model, x0, Constant(d), horizon, n_grid=n_grid)
    P = model.orders.state.signs
    m_lo = np.min(P * (x.states - lower.states), axis=1)
    m_hi = np.min(P * (upper.states - x.states), axis=1)
    margins = np.minimum(m_lo, m_hi)
    bad = np.flatnonzero(margins < -tol_traj)
    env = None
    if characteristic is not None and characteristic.inputs.shape[1] == 1:
        env = (characteristic.state_at(c).tolist(), characteristic.state_at(d).tolist())
    return ReachabilityReport(
        verdict=bad.size == 0,
        c=c.tolist(),
        d=d.tolist(),
        worst_margin=float(margins.min()),
        first_violation_time=float(x.times[bad[0]]) if bad.size else None,
        times=x.times,
        lower=lower.states,
        upper=upper.states,
        asymptotic_envelope=env,
    )
