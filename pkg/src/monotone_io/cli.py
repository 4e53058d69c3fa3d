"""Command-line front end.

Exit codes: 0 certified or verified, 1 falsified or failed, 2 inconclusive or
precondition failure, 3 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify as cert
from . import characteristic as chr_
from . import interconnect as ic
from . import invariance as inv
from .expr import ExpressionError
from .integrate import IntegrationError, integrate
from .model import BUILTIN_NAMES, EvaluationError, ModelError, SystemModel, builtin, load_model
from .polytope import DomainError, Polytope
from .signals import Constant, Sinusoid, signal_from_dict

SCHEMA_VERSION = 1

EXIT_OK, EXIT_FALSIFIED, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    models: list[str] = field(default_factory=list)
    seed: int = 42
    samples: int | None = None
    grid: int | None = None
    horizon: float | None = None
    tol_cert: float = cert.TOL_CERT
    tol_traj: float = cert.TOL_TRAJ
    out: Path | None = None
    svg: bool = False

    def __post_init__(self):
        for name in ("tol_cert", "tol_traj"):
            if not getattr(self, name) > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        for name in ("samples", "grid"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise UsageError(f"--{name} must be at least 1")
        if self.horizon is not None and not self.horizon > 0:
            raise UsageError("--horizon must be positive")

    def plan(self, default: int) -> cert.SamplePlan:
        return cert.SamplePlan(seed=self.seed, n_points=self.samples or default)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_report(command: str, payload: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, **payload}
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def resolve_model(ref: str) -> SystemModel:
    """A model file path, or the name of a built-in model."""
    if os.path.exists(ref):
        return load_model(ref)
    if ref in BUILTIN_NAMES:
        return builtin(ref)
    raise UsageError(f"no model file or built-in named {ref!r}")


class Output:
    """Writes named artifacts under ``--out`` and the JSON report to stdout."""

    def __init__(self, cfg: RunConfig):
        self.dir = cfg.out
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.dir is not None:
            (self.dir / name).write_text(text)

    def report(self, command: str, payload: dict) -> None:
        text = dump_report(command, payload)
        self.write("report.json", text)
        sys.stdout.write(text)


def _verdict_code(verdict: str) -> int:
    return {cert.CERTIFIED: EXIT_OK, cert.FALSIFIED: EXIT_FALSIFIED}.get(verdict, EXIT_INCONCLUSIVE)


def _combine(verdicts) -> str:
    verdicts = list(verdicts)
    if cert.FALSIFIED in verdicts:
        return cert.FALSIFIED
    if all(v == cert.CERTIFIED for v in verdicts):
        return cert.CERTIFIED
    return cert.INCONCLUSIVE


DEFAULT_TESTS = ("sign-pattern", "kamke", "trajectory")


def run_certify(cfg: RunConfig, args, out: Output) -> int:
    model = resolve_model(cfg.models[0])
    tests = args.test or list(DEFAULT_TESTS)
    reports = {}
    for name in tests:
        if name == "sign-pattern":
            r = cert.sign_pattern_certify(model, cfg.plan(2000), cfg.tol_cert)
        elif name == "kamke":
            r = cert.kamke_test(model, cfg.plan(2000), cfg.tol_cert)
        elif name == "trajectory":
            r = cert.trajectory_monotonicity_test(model, cfg.plan(100), cfg.horizon or 20.0, cfg.tol_traj)
        elif name == "competitive":
            r = cert.competitive_test(model, cfg.plan(2000), cfg.tol_cert)
        else:
            r = cert.incremental_positivity_test(model, cfg.plan(20), cfg.horizon or 20.0, cfg.tol_cert)
        reports[name] = r.to_dict()
    verdict = _combine(r["verdict"] for r in reports.values())
    out.report("certify", {"model": model.name, "verdict": verdict, "reports": reports})
    return _verdict_code(verdict)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def run_simulate(cfg: RunConfig, args, out: Output) -> int:
    model = resolve_model(cfg.models[0])
    x0 = _parse_floats(args.x0) if args.x0 else model.state_domain.chebyshev[0]
    if args.signal:
        src = Path(args.signal)
        text = src.read_text() if src.exists() else args.signal
        try:
            u = signal_from_dict(json.loads(text))
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad --signal: {exc}") from None
    elif args.u:
        u = Constant(_parse_floats(args.u))
    else:
        u = Constant(model.input_domain.lo)
    traj = integrate(model, x0, u, cfg.horizon or 10.0, n_grid=cfg.grid or 400)
    csv_text = traj.to_csv()
    out.write("trajectory.csv", csv_text)
    if cfg.svg:
        _svg_lines(out, "trajectory.svg", traj.times, traj.states, "t", [f"x{i + 1}" for i in range(model.n)])
    payload = {
        "model": model.name,
        "x0": list(map(float, x0)),
        "input": u.to_dict(),
        "horizon": float(traj.times[-1]),
        "final_state": traj.final_state,
        "exited_domain": traj.exited,
        "exit_time": traj.exit_time,
        "n_steps": traj.n_steps,
        "max_error_estimate": traj.max_error_estimate,
    }
    if cfg.out is None:
        sys.stdout.write(csv_text)
    else:
        out.report("simulate", payload)
    return EXIT_OK


def _char_payload(model, char) -> dict:
    d = {"model": model.name, "n_points": len(char), "status": list(char.status)}
    if model.m == 1:
        d["state_monotonicity_margin"] = chr_.monotonicity_margin(model, char, "states")
        d["output_monotonicity_margin"] = chr_.monotonicity_margin(model, char, "outputs")
        d["max_adjacent_jump"] = chr_.max_adjacent_jump(char)
    d["max_residual"] = float(char.residuals.max())
    return d


def run_characteristic(cfg: RunConfig, args, out: Output) -> int:
    model = resolve_model(cfg.models[0])
    grid = chr_.input_grid(model, cfg.grid or chr_.N_CHAR_GRID, args.lo, args.hi)
    char = chr_.compute_characteristic(model, grid, seed=cfg.seed)
    out.write("characteristic.csv", char.to_csv())
    if cfg.svg and model.m == 1:
        _svg_lines(out, "characteristic.svg", char.inputs[:, 0], char.outputs, "u", [f"ky_{k + 1}" for k in range(model.p)])
    payload = _char_payload(model, char)
    out.report("characteristic", payload)
    if "absent" in char.status:
        return EXIT_FALSIFIED
    return EXIT_OK if all(char.gas_evidenced) else EXIT_INCONCLUSIVE


def run_cascade(cfg: RunConfig, args, out: Output) -> int:
    stages = [resolve_model(m) for m in cfg.models]
    casc = ic.cascade(stages)
    comp = casc.composite
    sign = cert.sign_pattern_certify(comp, cfg.plan(2000), cfg.tol_cert)
    payload = {"composite": comp.to_dict(), "sign_pattern": sign.to_dict()}
    out.write("composite.json", comp.to_json())
    code = _verdict_code(sign.verdict)
    if comp.m == 1:
        cc = ic.cascade_characteristic(casc, cfg.grid or chr_.N_CHAR_GRID, seed=cfg.seed)
        out.write("composed_characteristic.csv", cc.composed.to_csv())
        out.write("direct_characteristic.csv", cc.direct.to_csv())
        payload["max_discrepancy"] = cc.max_discrepancy
        payload["composition_agrees"] = cc.max_discrepancy < 1e-3
        if code == EXIT_OK and not cc.max_discrepancy < 1e-3:
            code = EXIT_FALSIFIED
    out.report("cascade", payload)
    return code


def run_smallgain(cfg: RunConfig, args, out: Output) -> int:
    if len(cfg.models) != 2:
        raise UsageError("smallgain needs --model PLANT --model CONTROLLER")
    loop = ic.FeedbackLoop(resolve_model(cfg.models[0]), resolve_model(cfg.models[1]))
    rep = ic.small_gain_certify(loop, cfg.grid or ic.N_SG_GRID, args.starts, seed=cfg.seed)
    if rep.attractive and not args.no_verify:
        rep = ic.closed_loop_verify(loop, rep, cfg.plan(20), cfg.horizon or 200.0)
    out.write("rho.csv", rep.rho_csv())
    if cfg.svg:
        _svg_lines(
            out, "smallgain.svg", rep.rho_grid, np.column_stack([rep.rho_values, rep.rho_grid]), "u", ["k_w(k_y(u))", "u"]
        )
    out.report("smallgain", {"report": rep.to_dict()})
    if not rep.attractive:
        return EXIT_FALSIFIED
    if rep.unbounded:
        return EXIT_INCONCLUSIVE
    return EXIT_OK if rep.verified in (True, None) else EXIT_FALSIFIED


def _load_polytope(ref: str | None, model: SystemModel) -> Polytope:
    if ref is None:
        return model.state_domain
    try:
        d = json.loads(Path(ref).read_text())
        return Polytope(d["G"], d["g"])
    except (json.JSONDecodeError, KeyError, TypeError, DomainError) as exc:
        raise UsageError(f"bad polytope file {ref}: {exc}") from None


def run_invariance(cfg: RunConfig, args, out: Output) -> int:
    model = resolve_model(cfg.models[0])
    P = _load_polytope(args.polytope, model)
    plan = cert.SamplePlan(seed=cfg.seed)
    rep = inv.invariance_certify(model, P, plan=plan, samples_per_facet=cfg.samples or inv.SAMPLES_PER_FACET)
    cont = inv.trajectory_containment_check(model, P, cert.SamplePlan(seed=cfg.seed, n_points=50), cfg.horizon or 50.0)
    verdict = _combine([rep.verdict, cont.verdict])
    out.report("invariance", {"model": model.name, "verdict": verdict, "report": rep.to_dict(), "containment": cont.to_dict()})
    return _verdict_code(verdict)


def direction_field(model: SystemModel, u, n: int = 20) -> list[tuple[float, float, float, float]]:
    """Field arrows on an ``n x n`` lattice over the bounding box, kept inside the domain."""
    lo, hi = model.state_domain.bbox
    rows = []
    for a in np.linspace(lo[0], hi[0], n):
        for b in np.linspace(lo[1], hi[1], n):
            x = np.array([a, b])
            if model.state_domain.contains(x, 1e-12):
                dx, dy = model.rhs(x, u)
                rows.append((float(a), float(b), float(dx), float(dy)))
    return rows


def _field_csv(rows) -> str:
    lines = ["x1,x2,dx1,dx2"]
    lines += [",".join(f"{v:.17g}" for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def demo_mapk(cfg: RunConfig, out: Output) -> tuple[dict, bool]:
    """End-to-end MAPK pipeline; returns the report payload and an all-passed flag."""
    fig4 = builtin("mapk_figure4")
    stage = builtin("mapk_stage")
    u1 = np.ones(1)
    results: dict = {}
    ok = []

    sp = {name: cert.sign_pattern_certify(m, cfg.plan(2000), cfg.tol_cert) for name, m in
          (("mapk_figure4", fig4), ("mapk_stage", stage), ("mapk_cascade3", builtin("mapk_cascade3")))}
    results["sign_pattern"] = {k: v.to_dict() for k, v in sp.items()}
    ok += [r.certified for r in sp.values()]

    gas = chr_.verify_planar_gas(fig4, u1, cert.SamplePlan(seed=cfg.seed, n_points=1000))
    results["planar_gas"] = gas.to_dict()
    ok.append(gas.verdict)

    grid = chr_.input_grid(stage, cfg.grid or chr_.N_CHAR_GRID, 0.1, 2.0)
    char = chr_.compute_characteristic(stage, grid, seed=cfg.seed)
    out.write("characteristic.csv", char.to_csv())
    results["characteristic"] = _char_payload(stage, char)
    ok.append(results["characteristic"]["output_monotonicity_margin"] >= -1e-6 and all(char.gas_evidenced))

    casc = ic.cascade([stage] * 3)
    cc = ic.cascade_characteristic(casc, grid, seed=cfg.seed)
    out.write("cascade_characteristic.csv", cc.direct.to_csv())
    results["cascade_characteristic"] = {"max_discrepancy": cc.max_discrepancy, "agrees": cc.max_discrepancy < 1e-3}
    ok.append(cc.max_discrepancy < 1e-3)

    inv_rep = inv.invariance_certify(fig4, Polytope.simplex(2), plan=cert.SamplePlan(seed=cfg.seed))
    results["invariance"] = inv_rep.to_dict()
    ok.append(inv_rep.certified)

    u = Sinusoid([0.5], [0.3], 1.0)
    sand = chr_.limit_sandwich_check(stage, char, stage.state_domain.chebyshev[0], u, horizon=cfg.horizon or 300.0)
    results["sandwich"] = sand.to_dict()
    ok.append(sand.verdict)

    rows = direction_field(fig4, u1)
    out.write("direction_field.csv", _field_csv(rows))
    results["direction_field_points"] = len(rows)
    if cfg.svg:
        _svg_field(out, rows, gas.limit_point)
    results["all_passed"] = all(ok)
    return results, all(ok)


def run_demo(cfg: RunConfig, args, out: Output) -> int:
    results, passed = demo_mapk(cfg, out)
    out.report("demo", {"demo": args.name, "results": results})
    return EXIT_OK if passed else EXIT_FALSIFIED


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("warning: matplotlib is not installed; skipping SVG output", file=sys.stderr)
        return None
    plt.rcParams["svg.hashsalt"] = "monotone-io"
    return plt


def _save_svg(out: Output, fig, name: str) -> None:
    if out.dir is not None:
        fig.savefig(out.dir / name, format="svg", metadata={"Date": None})


def _svg_lines(out: Output, name, x, ys, xlabel, labels) -> None:
    plt = _pyplot()
    if plt is None:
        return
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ys = np.atleast_2d(np.asarray(ys).T).T
    for col, lab in zip(ys.T, labels):
        ax.plot(x, col, label=lab)
    ax.set_xlabel(xlabel)
    ax.legend()
    _save_svg(out, fig, name)
    plt.close(fig)


def _svg_field(out: Output, rows, eq) -> None:
    plt = _pyplot()
    if plt is None:
        return
    a = np.array(rows)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.quiver(a[:, 0], a[:, 1], a[:, 2], a[:, 3], angles="xy")
    ax.plot([0, 1, 0, 0], [0, 0, 1, 0], "k-", lw=0.8)
    ax.plot([eq[0]], [eq[1]], "ro")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    _save_svg(out, fig, "direction_field.svg")
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", action="append", default=[], help="model JSON file or built-in name (repeatable)")
    common.add_argument("--seed", type=int, default=42, help="RNG seed (default 42)")
    common.add_argument("--samples", type=int, help="sample count (default depends on the test)")
    common.add_argument("--grid", type=int, help="grid size for characteristics or output times")
    common.add_argument("--horizon", type=float, help="simulation horizon")
    common.add_argument("--tol-cert", type=float, default=cert.TOL_CERT, help=f"sign/Kamke slack (default {cert.TOL_CERT:g})")
    common.add_argument("--tol-traj", type=float, default=cert.TOL_TRAJ, help=f"trajectory slack (default {cert.TOL_TRAJ:g})")
    common.add_argument("--out", type=Path, help="directory for report.json and CSV/SVG files")
    common.add_argument("--svg", action="store_true", help="also write SVG figures (needs matplotlib)")

    ap = _Parser(prog="monotone-io", description="Certify and exploit monotonicity of input/output ODE models.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", parents=[common], help="run monotonicity tests")
    p.add_argument("--test", action="append", choices=sorted(cert.TESTS), help="test to run (repeatable; default sign-pattern, kamke, trajectory)")
    p = sub.add_parser("simulate", parents=[common], help="integrate a model and emit a trajectory CSV")
    p.add_argument("--x0", help="initial state, comma-separated (default Chebyshev centre)")
    p.add_argument("--u", help="constant input, comma-separated")
    p.add_argument("--signal", help="input signal as JSON text or a JSON file")
    p = sub.add_parser("characteristic", parents=[common], help="tabulate the static characteristic")
    p.add_argument("--lo", type=float, help="lower end of the input grid")
    p.add_argument("--hi", type=float, help="upper end of the input grid")
    sub.add_parser("cascade", parents=[common], help="compose models in series")
    p = sub.add_parser("smallgain", parents=[common], help="small-gain analysis of plant/controller feedback")
    p.add_argument("--starts", type=int, default=ic.N_SG_STARTS, help="number of iteration starts")
    p.add_argument("--no-verify", action="store_true", help="skip closed-loop simulation")
    p = sub.add_parser("invariance", parents=[common], help="forward invariance of a polytope")
    p.add_argument("--polytope", help='polytope JSON {"G": [[...]], "g": [...]} (default: state domain)')
    p = sub.add_parser("demo", parents=[common], help="built-in end-to-end demonstration")
    p.add_argument("name", choices=["mapk"])
    return ap


RUNNERS = {
    "certify": run_certify,
    "simulate": run_simulate,
    "characteristic": run_characteristic,
    "cascade": run_cascade,
    "smallgain": run_smallgain,
    "invariance": run_invariance,
    "demo": run_demo,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help (0) and on usage errors (3 via _Parser)
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = RunConfig(
            command=args.command,
            models=args.model,
            seed=args.seed,
            samples=args.samples,
            grid=args.grid,
            horizon=args.horizon,
            tol_cert=args.tol_cert,
            tol_traj=args.tol_traj,
            out=args.out,
            svg=args.svg,
        )
        if args.command != "demo" and not cfg.models:
            raise UsageError("--model is required")
        out = Output(cfg)
        return RUNNERS[args.command](cfg, args, out)
    except (UsageError, ModelError, ExpressionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ic.PreconditionError, chr_.CharacteristicError, DomainError, IntegrationError, EvaluationError) as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
