"""Expression mini-language for vector fields and output maps.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := ["-"] atom ["^" integer]
    atom   := number | ident | ident "(" expr {"," expr} ")" | "(" expr ")"

``-a^2`` parses as ``-(a^2)``.  Identifiers ``x1..xn`` are states, ``u1..um``
inputs, anything else a named parameter.  Expressions compile to plain Python
functions, so evaluation raises on division by zero or overflow instead of
silently producing ``inf``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

FUNCTIONS = {"hill": 3, "exp": 1, "sin": 1, "cos": 1, "min": None, "max": None}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

_STATE_RE = re.compile(r"x([1-9][0-9]*)$")
_INPUT_RE = re.compile(r"u([1-9][0-9]*)$")


class ExpressionError(ValueError):
    """Syntax or reference error inside an expression."""

    def __init__(self, message: str, line: int = 1, column: int = 1, where: str = ""):
        self.line = line
        self.column = column
        self.where = where
        loc = f"{where} " if where else ""
        super().__init__(f"{loc}line {line}, column {column}: {message}")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Pow, Call]


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str, where: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            line, col = _line_col(text, pos)
            raise ExpressionError(f"unexpected character {text[pos]!r}", line, col, where)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


class _Parser:
    def __init__(self, text: str, where: str):
        self.text = text
        self.where = where
        self.tokens = _tokenize(text, where)
        self.i = 0

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        line, col = _line_col(self.text, tok.pos)
        raise ExpressionError(message, line, col, self.where)

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.peek().kind == "op" and self.peek().text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            tok = self.peek()
            got = tok.text or "end of input"
            self.error(f"expected {text!r}, got {got!r}")

    def parse(self) -> Expr:
        if self.peek().kind == "end":
            self.error("empty expression")
        node = self.expr()
        if self.peek().kind != "end":
            self.error(f"unexpected token {self.peek().text!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        negate = self.accept("-")
        node = self.atom()
        if self.accept("^"):
            sign = -1 if self.accept("-") else 1
            tok = self.take()
            if tok.kind != "number" or not tok.text.isdigit():
                self.error("exponent must be an integer", tok)
            node = Pow(node, sign * int(tok.text))
        return Neg(node) if negate else node

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "number":
            return Num(float(tok.text))
        if tok.kind == "ident":
            if self.accept("("):
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS.get(tok.text, -1)
                if arity == -1:
                    self.error(f"unknown function {tok.text!r}", tok)
                if arity is None and len(args) < 2:
                    self.error(f"{tok.text}() needs at least two arguments", tok)
                if arity is not None and len(args) != arity:
                    self.error(f"{tok.text}() takes {arity} argument(s), got {len(args)}", tok)
                return Call(tok.text, tuple(args))
            if tok.text in FUNCTIONS:
                self.error(f"function {tok.text!r} used without arguments", tok)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.i -= 1
        self.error(f"unexpected token {tok.text or 'end of input'!r}")


def parse_expression(text: str, where: str = "") -> Expr:
    return _Parser(text, where).parse()


def walk(node: Expr) -> Iterable[Expr]:
    yield node
    if isinstance(node, Neg):
        yield from walk(node.arg)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Pow):
        yield from walk(node.base)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def variables(node: Expr) -> set[str]:
    return {n.name for n in walk(node) if isinstance(n, Var)}


def classify(name: str) -> tuple[str, int]:
    """Return ``("state", i)``, ``("input", j)`` (zero based) or ``("param", -1)``."""
    m = _STATE_RE.match(name)
    if m:
        return "state", int(m.group(1)) - 1
    m = _INPUT_RE.match(name)
    if m:
        return "input", int(m.group(1)) - 1
    return "param", -1


def substitute(node: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Num):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))
    if isinstance(node, Pow):
        return Pow(substitute(node.base, mapping), node.exponent)
    return Call(node.func, tuple(substitute(a, mapping) for a in node.args))


def negate(node: Expr) -> Expr:
    if isinstance(node, Neg):
        return node.arg
    return Neg(node)


def to_text(node: Expr) -> str:
    """Render back into the grammar; ``parse_expression(to_text(e))`` evaluates identically."""
    if isinstance(node, Num):
        text = repr(float(node.value))
        if node.value < 0 or text.startswith("-"):
            return f"(-{repr(-float(node.value))})"
        return text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_atom_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Pow):
        return f"{_atom_text(node.base)}^{node.exponent}"
    return f"{node.func}({', '.join(to_text(a) for a in node.args)})"


def _atom_text(node: Expr) -> str:
    text = to_text(node)
    # BinOp, Neg and negative literals already render fully parenthesised
    if isinstance(node, (Var, Call, BinOp, Neg)) or (isinstance(node, Num) and text.startswith("(")):
        return text
    return f"({text})"


def hill(r: float, a: float, b: float) -> float:
    return a * r / (1.0 + b * r)


_NAMESPACE = {
    "_exp": math.exp,
    "_sin": math.sin,
    "_cos": math.cos,
    "_hill": hill,
    "_min": min,
    "_max": max,
}


def _py(node: Expr, env: Mapping[str, str]) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return f"(-{_py(node.arg, env)})"
    if isinstance(node, BinOp):
        return f"({_py(node.left, env)} {node.op} {_py(node.right, env)})"
    if isinstance(node, Pow):
        if node.exponent < 0:
            return f"(1.0 / ({_py(node.base, env)} ** {-node.exponent}))"
        return f"({_py(node.base, env)} ** {node.exponent})"
    args = ", ".join(_py(a, env) for a in node.args)
    return f"_{node.func}({args})"


def compile_vector(
    exprs: Iterable[Expr], n: int, m: int, params: Mapping[str, float], name: str = "field"
) -> Callable[[list, list], tuple]:
    """Compile expressions into ``fn(xs, us) -> tuple`` over Python float lists.

    Parameters are inlined as constants.
    """
    env = {f"x{i + 1}": f"xs[{i}]" for i in range(n)}
    env.update({f"u{j + 1}": f"us[{j}]" for j in range(m)})
    env.update({k: repr(float(v)) for k, v in params.items()})
    body = ", ".join(_py(e, env) for e in exprs)
    src = f"def {name}(xs, us):\n    return ({body},)\n"
    ns = dict(_NAMESPACE)
    exec(compile(src, f"<{name}>", "exec"), ns)
    return ns[name]
