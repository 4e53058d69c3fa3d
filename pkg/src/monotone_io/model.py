"""Input/output systems ``x' = f(x, u), y = h(x)`` on polytope state domains."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from . import expr as ex
from .order import OrthantOrder
from .polytope import Box, DomainError, Polytope

N_LOAD_SAMPLES = 256


class ModelError(ValueError):
    """Invalid model file or model definition."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class EvaluationError(ArithmeticError):
    """The vector field or output map did not evaluate to finite numbers."""


@dataclass(frozen=True)
class SystemOrders:
    state: OrthantOrder
    input: OrthantOrder
    output: OrthantOrder


@dataclass(frozen=True, eq=False)
class SystemModel:
    f: tuple[ex.Expr, ...]
    h: tuple[ex.Expr, ...]
    state_domain: Polytope
    input_domain: Box
    orders: SystemOrders
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return self.input_domain.m

    @property
    def p(self) -> int:
        return len(self.h)

    @cached_property
    def _f(self):
        return ex.compile_vector(self.f, self.n, self.m, self.params, "f")

    @cached_property
    def _h(self):
        return ex.compile_vector(self.h, self.n, self.m, self.params, "h")

    def rhs(self, x, u) -> np.ndarray:
        try:
            out = self._f(_as_list(x), _as_list(u))
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(f"vector field failed at x={list(x)}, u={list(u)}: {exc}") from exc
        if not all(map(math.isfinite, out)):
            raise EvaluationError(f"vector field is not finite at x={list(x)}, u={list(u)}")
        return np.array(out, dtype=float)

    def output(self, x) -> np.ndarray:
        try:
            out = self._h(np.asarray(x, dtype=float).tolist(), [0.0] * self.m)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(f"output map failed at x={list(x)}: {exc}") from exc
        res = np.array(out, dtype=float)
        if not np.all(np.isfinite(res)):
            raise EvaluationError(f"output map is not finite at x={list(x)}")
        return res

    def with_orders(self, state=None, input=None, output=None) -> "SystemModel":
        o = self.orders
        return replace(
            self,
            orders=SystemOrders(
                _order(state, o.state), _order(input, o.input), _order(output, o.output)
            ),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "params": {k: float(v) for k, v in sorted(self.params.items())},
            "f": [ex.to_text(e) for e in self.f],
            "h": [ex.to_text(e) for e in self.h],
            "state_domain": self.state_domain.to_dict(),
            "input_domain": self.input_domain.to_dict(),
            "orders": {
                "state": self.orders.state.to_list(),
                "input": self.orders.input.to_list(),
                "output": self.orders.output.to_list(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_list(v) -> list:
    if isinstance(v, np.ndarray):
        return v.astype(float, copy=False).tolist()
    return [float(a) for a in np.atleast_1d(v)]


def _order(value, default: OrthantOrder) -> OrthantOrder:
    if value is None:
        return default
    if isinstance(value, OrthantOrder):
        return value
    return OrthantOrder(tuple(value))


def check_references(model: SystemModel) -> None:
    for label, exprs, allow_inputs in (("f", model.f, True), ("h", model.h, False)):
        for k, e in enumerate(exprs):
            for name in sorted(ex.variables(e)):
                kind, idx = ex.classify(name)
                if kind == "state" and idx >= model.n:
                    raise ModelError(f"{label}[{k}]: undeclared variable {name!r} (n={model.n})")
                if kind == "input":
                    if not allow_inputs:
                        raise ModelError(f"{label}[{k}]: output map may not depend on input {name!r}")
                    if idx >= model.m:
                        raise ModelError(f"{label}[{k}]: undeclared variable {name!r} (m={model.m})")
                if kind == "param" and name not in model.params:
                    raise ModelError(f"{label}[{k}]: undeclared parameter {name!r}")


def check_finite(model: SystemModel, n_samples: int = N_LOAD_SAMPLES, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    xs = np.vstack([model.state_domain.chebyshev[0][None, :], model.state_domain.sample_interior(rng, n_samples)])
    us = np.vstack([model.input_domain.lo[None, :], model.input_domain.sample(rng, n_samples)])
    for x, u in zip(xs, us):
        try:
            model.rhs(x, u)
            model.output(x)
        except EvaluationError as exc:
            raise ModelError(f"non-finite evaluation at a sampled domain point: {exc}") from exc


def validate(model: SystemModel) -> SystemModel:
    o = model.orders
    if model.n < 1 or model.p < 1:
        raise ModelError("models need n >= 1 and p >= 1")
    if model.state_domain.n != model.n:
        raise ModelError(f"state domain has dimension {model.state_domain.n}, expected n={model.n}")
    if (o.state.n, o.input.n, o.output.n) != (model.n, model.m, model.p):
        raise ModelError("order dimensions do not match (n, m, p)")
    for k, v in model.params.items():
        if not math.isfinite(v):
            raise ModelError(f"parameter {k!r} is not finite")
    check_references(model)
    check_finite(model)
    return model


def _parse_exprs(items, where: str, count: int) -> tuple[ex.Expr, ...]:
    if not isinstance(items, list) or len(items) != count:
        raise ModelError(f"{where!r} must be a list of {count} expression strings")
    out = []
    for k, text in enumerate(items):
        if not isinstance(text, str):
            raise ModelError(f"{where}[{k}] must be a string")
        try:
            out.append(ex.parse_expression(text, where=f"{where}[{k}]"))
        except ex.ExpressionError as exc:
            raise ModelError(str(exc), exc.line, exc.column) from exc
    return tuple(out)


def model_from_dict(d: Mapping, name: str = "") -> SystemModel:
    try:
        n, m, p = int(d["n"]), int(d["m"]), int(d["p"])
        params = {str(k): float(v) for k, v in d.get("params", {}).items()}
        f = _parse_exprs(d["f"], "f", n)
        h = _parse_exprs(d["h"], "h", p)
        sd = d["state_domain"]
        idom = d["input_domain"]
        orders = d.get("orders", {})
        state_order = OrthantOrder(tuple(orders.get("state", [0] * n)))
        input_order = OrthantOrder(tuple(orders.get("input", [0] * m)))
        output_order = OrthantOrder(tuple(orders.get("output", [0] * p)))
    except KeyError as exc:
        raise ModelError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc
    try:
        state_domain = Polytope(sd["G"], sd["g"])
        input_domain = Box(idom["lo"], idom["hi"])
    except (KeyError, DomainError, ValueError) as exc:
        raise ModelError(f"invalid domain: {exc}") from exc
    if input_domain.m != m:
        raise ModelError(f"input domain has dimension {input_domain.m}, expected m={m}")
    model = SystemModel(
        f=f,
        h=h,
        state_domain=state_domain,
        input_domain=input_domain,
        orders=SystemOrders(state_order, input_order, output_order),
        params=params,
        name=str(d.get("name", name)),
    )
    return validate(model)


def parse_model(text: str, name: str = "") -> SystemModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(d, dict):
        raise ModelError("model file must contain a JSON object")
    return model_from_dict(d, name)


def load_model(path) -> SystemModel:
    with open(path) as fh:
        return parse_model(fh.read(), name=str(path))


_TRIANGLE = {"G": [[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], "g": [0.0, 0.0, 1.0]}

_MAPK_PARAMS = {"a1": 1.0, "b1": 1.0, "a2": 1.0, "b2": 0.5, "a3": 1.0, "b3": 1.0, "a4": 1.0, "b4": 0.5}

BUILTIN_DEFS: dict[str, dict] = {
    "mapk_stage": {
        "n": 2,
        "m": 1,
        "p": 1,
        "params": _MAPK_PARAMS,
        "f": [
            "-u1*hill(x1, a1, b1) + hill(1 - x1 - x2, a2, b2)",
            "u1*hill(1 - x1 - x2, a3, b3) - hill(x2, a4, b4)",
        ],
        "h": ["x2"],
        "state_domain": _TRIANGLE,
        "input_domain": {"lo": [0.0], "hi": [2.0]},
        "orders": {"state": [1, 0], "input": [0], "output": [0]},
    },
    "mapk_figure4": {
        "n": 2,
        "m": 1,
        "p": 1,
        "params": {},
        "f": [
            "-1.0*u1*x1/(1 + x1) + 2*(1 - x1 - x2)/(3 - x1 - x2)",
            "u1*(1 - x1 - x2)/(2 - x1 - x2) - 2*x2/(2 + x2)",
        ],
        "h": ["x2"],
        "state_domain": _TRIANGLE,
        "input_domain": {"lo": [1.0], "hi": [1.0]},
        "orders": {"state": [1, 0], "input": [0], "output": [0]},
    },
    "linear_toy_pos": {
        "n": 1,
        "m": 1,
        "p": 1,
        "params": {"k": 2.0},
        "f": ["-k*x1 + u1"],
        "h": ["x1"],
        "state_domain": {"G": [[1.0], [-1.0]], "g": [4.0, 0.0]},
        "input_domain": {"lo": [0.0], "hi": [4.0]},
        "orders": {"state": [0], "input": [0], "output": [0]},
    },
    "decr_toy": {
        "n": 1,
        "m": 1,
        "p": 1,
        "params": {},
        "f": ["-x1 + 1/(1 + u1)"],
        "h": ["x1"],
        "state_domain": {"G": [[1.0], [-1.0]], "g": [1.0, 0.0]},
        "input_domain": {"lo": [0.0], "hi": [4.0]},
        "orders": {"state": [1], "input": [0], "output": [1]},
    },
}

BUILTIN_NAMES = ("mapk_stage", "mapk_figure4", "mapk_cascade3", "linear_toy_pos", "decr_toy")


def builtin(name: str, params: Mapping[str, float] | None = None) -> SystemModel:
    """Registered example models; ``params`` overrides declared parameters."""
    if name not in BUILTIN_NAMES:
        raise ModelError(f"unknown built-in model {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    if name == "mapk_cascade3":
        from .interconnect import cascade

        stage = builtin("mapk_stage", params)
        return replace(cascade([stage, stage, stage]).composite, name="mapk_cascade3")
    d = json.loads(json.dumps(BUILTIN_DEFS[name]))
    for key, value in (params or {}).items():
        if key not in d["params"]:
            raise ModelError(f"{name} has no parameter {key!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ModelError(f"override {key!r} must be finite")
        d["params"][key] = value
    return model_from_dict(d, name=name)
