"""Adaptive Dormand-Prince 5(4) integration and finite-difference Jacobians."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import EvaluationError, SystemModel
from .polytope import Polytope
from .signals import Constant, InputSignal

RTOL = 1e-7
ATOL = 1e-9
N_GRID = 400
TOL_DOMAIN = 1e-6

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, 7 stages (FSAL)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's dense output polynomial, y(t + s h) = y + h K^T P [s, s^2, s^3, s^4]
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    input: InputSignal
    max_error_estimate: float
    exited: bool
    exit_time: float | None
    n_steps: int

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        return trajectory_csv(self)


def trajectory_csv(traj: Trajectory) -> str:
    n = traj.states.shape[1]
    p = traj.outputs.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{k + 1}" for k in range(p)])
    for t, x, y in zip(traj.times, traj.states, traj.outputs):
        w.writerow([f"{v:.17g}" for v in (t, *x, *y)])
    return buf.getvalue()


class _Stepper:
    """One Dormand-Prince run over ``[t0, t1]`` with a fixed right-hand side."""

    def __init__(self, fun: Callable, rtol: float, atol: float):
        self.fun = fun
        self.rtol = rtol
        self.atol = atol

    def initial_step(self, t0, y0, f0, t1) -> float:
        scale = self.atol + np.abs(y0) * self.rtol
        d0 = np.sqrt(np.mean((y0 / scale) ** 2))
        d1 = np.sqrt(np.mean((f0 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, t1 - t0)
        y1 = y0 + h0 * f0
        f1 = self.fun(t0 + h0, y1)
        d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1 / 5)
        return min(100 * h0, h1, t1 - t0)


def _solve_segment(fun, t0, t1, y0, rtol, atol, on_step):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1``.

    ``on_step(t, h, y, K, y_new, f_new)`` sees every accepted step (dense
    output available through ``K``) and may return True to stop early.
    """
    st = _Stepper(fun, rtol, atol)
    t = t0
    y = y0
    f = fun(t, y)
    h = st.initial_step(t0, y0, f, t1)
    n = y.size
    K = np.empty((7, n))
    max_err = 0.0
    steps = 0
    while t < t1:
        min_step = 10 * np.finfo(float).eps * max(abs(t), 1.0)
        if h < min_step:
            raise IntegrationError(f"step size underflow at t={t:.6g} (stiff or singular system)")
        last = t + h >= t1 - min_step
        if last:
            h = t1 - t
        while True:
            K[0] = f
            for s in range(1, 6):
                K[s] = fun(t + _C[s] * h, y + h * (_A[s] @ K[:s]))
            y_new = y + h * (_B @ K[:6])
            f_new = fun(t + h, y_new)
            K[6] = f_new
            err = h * (_E @ K)
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err_norm = math.sqrt(float(np.dot(err / scale, err / scale)) / n)
            if not np.isfinite(err_norm) or not np.isfinite(y_new).all():
                raise IntegrationError(f"non-finite state at t={t + h:.6g}")
            if err_norm <= 1.0:
                break
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            last = False
            if h < min_step:
                raise IntegrationError(f"step size underflow at t={t:.6g} (stiff or singular system)")
        t_new = t1 if last else t + h
        steps += 1
        max_err = max(max_err, float(np.max(np.abs(err))))
        stop = on_step(t, t_new - t, y, K, y_new, f_new)
        t, y, f = t_new, y_new, f_new
        if stop:
            break
        factor = 10.0 if err_norm == 0 else min(10.0, max(0.2, 0.9 * err_norm ** -0.2))
        h *= factor
    return y, max_err, steps


def _dense(y, h, K, s):
    """Dense output at fractions ``s`` (array) of the step."""
    s = np.atleast_1d(s)
    powers = np.stack([s, s**2, s**3, s**4])
    Q = K.T @ _P
    return y[None, :] + h * (Q @ powers).T


def integrate(
    model: SystemModel,
    x0,
    u: InputSignal | None = None,
    T: float = 1.0,
    *,
    rtol: float = RTOL,
    atol: float = ATOL,
    n_grid: int = N_GRID,
    times=None,
    tol_domain: float = TOL_DOMAIN,
    domain: Polytope | None = None,
    stop_on_exit: bool = False,
    check_input: bool = True,
    stop_when: Callable[[np.ndarray, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Simulate ``model`` from ``x0`` under ``u`` on ``[0, T]``.

    Output is sampled on ``times`` (default: ``n_grid`` uniform points,
    both ends included).  Integration restarts at each input breakpoint.
    ``domain`` (default the model's state domain) is watched for exits beyond
    ``tol_domain``; the first exit time is located on the dense output.
    ``stop_when(x, f)`` is polled after each step; once true, integration
    stops and the state is held for the remaining output times.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (model.n,):
        raise ValueError(f"x0 has dimension {x0.size}, expected {model.n}")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    if u is None:
        u = Constant(model.input_domain.lo)
    if u.m != model.m:
        raise ValueError(f"input signal has {u.m} channels, expected {model.m}")
    if check_input:
        lo, hi = u.bounds()
        if not (model.input_domain.contains(lo, 1e-12) and model.input_domain.contains(hi, 1e-12)):
            raise ValueError("input signal leaves the input domain")
    domain = domain if domain is not None else model.state_domain
    if not domain.contains(x0, tol_domain):
        raise ValueError(f"initial state {x0.tolist()} is outside the state domain")

    grid = np.linspace(0.0, T, n_grid) if times is None else np.asarray(times, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > T:
        raise ValueError("output times must start at 0, increase strictly and end by T")
    states = np.empty((grid.size, model.n))
    states[0] = x0
    gi = 1
    exit_time = None
    exited = False
    steady = False
    G, g = domain.G, domain.g

    def violation(ys):
        return np.max(np.atleast_2d(ys) @ G.T - g, axis=1)

    def on_step(t, h, y, K, y_end, f_end):
        nonlocal gi, exit_time, exited, steady
        t_end = t + h
        j = int(np.searchsorted(grid, t_end + 1e-12 * max(1.0, abs(t_end)), side="right"))
        j = max(j, gi)
        if j > gi:
            s = np.clip((grid[gi:j] - t) / h, 0.0, 1.0)
            states[gi:j] = _dense(y, h, K, s)
        if not exited:
            pts = np.vstack([states[gi:j], y_end[None, :]]) if j > gi else y_end[None, :]
            bad = np.flatnonzero((pts @ G.T - g).max(axis=1) > tol_domain)
            if bad.size:
                exited = True
                tp = grid[gi + bad[0]] if bad[0] < j - gi else t_end
                exit_time = _locate_exit(y, h, K, t, tp, violation, tol_domain)
        gi = j
        if stop_when is not None and stop_when(y_end, f_end):
            steady = True
        return (exited and stop_on_exit) or steady

    segs = [0.0] + [b for b in u.breakpoints(0.0, T)] + [T]
    y = x0.copy()
    max_err = 0.0
    steps = 0
    constant_segments = not _is_continuous(u)
    for a, b in zip(segs[:-1], segs[1:]):
        if constant_segments:
            uc = np.asarray(u(0.5 * (a + b)), dtype=float)
            fun = lambda t, x, uc=uc: _eval(model, x, uc)
        else:
            fun = lambda t, x: _eval(model, x, u(t))
        y, e, k = _solve_segment(fun, a, b, y, rtol, atol, on_step)
        max_err = max(max_err, e)
        steps += k
        if (exited and stop_on_exit) or steady:
            break
    if exited and stop_on_exit:
        keep = gi
        grid = grid[:keep]
        states = states[:keep]
    elif gi < grid.size:
        states[gi:] = y
    outputs = np.array([model.output(x) for x in states])
    return Trajectory(
        times=grid,
        states=states,
        outputs=outputs,
        input=u,
        max_error_estimate=max_err,
        exited=exited,
        exit_time=exit_time,
        n_steps=steps,
    )


def _is_continuous(u: InputSignal) -> bool:
    from .signals import Shifted, Sinusoid

    base = u
    while isinstance(base, Shifted):
        base = base.base
    return isinstance(base, Sinusoid)


def _eval(model, x, u):
    try:
        return model.rhs(x, u)
    except EvaluationError as exc:
        raise IntegrationError(str(exc)) from exc


def _locate_exit(y, h, K, t, t_bad, violation, tol, iters=60):
    lo, hi = 0.0, (t_bad - t) / h
    if violation(_dense(y, h, K, lo))[0] > tol:
        return float(t)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if violation(_dense(y, h, K, mid))[0] > tol:
            hi = mid
        else:
            lo = mid
    return float(t + hi * h)


def jacobian_fd(model: SystemModel, x, u, tol_domain: float = TOL_DOMAIN) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference ``(df/dx, df/du)`` at ``(x, u)``.

    State perturbations must stay in the state domain (within ``tol_domain``);
    otherwise the step is shrunk 100-fold once before giving up.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    dom = model.state_domain
    if not dom.contains(x, tol_domain):
        raise EvaluationError(f"point {x.tolist()} lies outside the state domain")
    A = np.empty((model.n, model.n))
    for i in range(model.n):
        h = 1e-6 * (1.0 + abs(x[i]))
        for attempt in range(2):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            if dom.contains(xp, tol_domain) and dom.contains(xm, tol_domain):
                break
            h *= 1e-2
        else:
            raise EvaluationError(f"finite-difference step leaves the state domain at {x.tolist()}")
        A[:, i] = (model.rhs(xp, u) - model.rhs(xm, u)) / (xp[i] - xm[i])
    B = np.empty((model.n, model.m))
    for j in range(model.m):
        h = 1e-6 * (1.0 + abs(u[j]))
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        B[:, j] = (model.rhs(x, up) - model.rhs(x, um)) / (up[j] - um[j])
    return A, B
