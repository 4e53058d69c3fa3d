"""Orthant orders on R^n, order intervals and tangent cones to orthants.

An orthant order is described by a 0/1 vector ``eps``: coordinate ``i`` is
compared after multiplying by ``(-1)**eps[i]``.  With ``eps = (0, ..., 0)``
this is the usual componentwise order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

TOL_ACTIVE = 1e-9


def _as_point(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{name} has dimension {arr.size}, expected {n}")
    return arr


@dataclass(frozen=True)
class OrthantOrder:
    eps: tuple[int, ...]

    def __post_init__(self):
        eps = tuple(int(e) for e in self.eps)
        if len(eps) < 1:
            raise ValueError("an orthant order needs at least one coordinate")
        if any(e not in (0, 1) for e in eps):
            raise ValueError(f"orthant signs must be 0 or 1, got {self.eps!r}")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def standard(cls, n: int) -> "OrthantOrder":
        return cls((0,) * n)

    @property
    def n(self) -> int:
        return len(self.eps)

    @property
    def signs(self) -> np.ndarray:
        """Diagonal of the sign matrix ``diag((-1)**eps)``."""
        return np.array([-1.0 if e else 1.0 for e in self.eps])

    def reversed(self) -> "OrthantOrder":
        return OrthantOrder(tuple(1 - e for e in self.eps))

    def is_trivial(self) -> bool:
        return not any(self.eps)

    def margin(self, x1, x2) -> np.ndarray:
        """Signed per-coordinate slack of ``x1 >= x2``; nonnegative iff ordered."""
        a = _as_point(x1, self.n, "x1")
        b = _as_point(x2, self.n, "x2")
        return self.signs * (a - b)

    def geq(self, x1, x2, tol: float = 0.0) -> bool:
        return bool(np.all(self.margin(x1, x2) >= -tol))

    def in_cone(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(self.signs * _as_point(x, self.n, "x") >= -tol))

    def to_list(self) -> list[int]:
        return list(self.eps)


def leq(order: OrthantOrder, x2, x1, tol: float = 0.0) -> bool:
    """Return whether ``x2 <= x1`` (equivalently ``x1 >= x2``) under ``order``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return order.geq(x1, x2, tol)


class StrictRelations(NamedTuple):
    geq: bool
    strict: bool
    interior_strict: bool


def strict_relations(order: OrthantOrder, x2, x1, tol: float = 0.0) -> StrictRelations:
    """Compare ``x1`` against ``x2``: ``x1 >= x2``, ``x1 > x2`` and ``x1 >> x2``."""
    margin = order.margin(x1, x2)
    geq = bool(np.all(margin >= -tol))
    strict = geq and bool(np.any(margin != 0.0))
    interior = bool(np.all(margin > tol))
    return StrictRelations(geq, strict, interior)


@dataclass(frozen=True)
class OrderInterval:
    """The set ``{x : lo <= x <= hi}`` for an orthant order."""

    lo: np.ndarray
    hi: np.ndarray
    order: OrthantOrder

    def __post_init__(self):
        lo = _as_point(self.lo, self.order.n, "lo")
        hi = _as_point(self.hi, self.order.n, "hi")
        if not self.order.geq(hi, lo):
            raise ValueError("order interval requires hi >= lo")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise (real-number) lower and upper bounds of the interval."""
        return np.minimum(self.lo, self.hi), np.maximum(self.lo, self.hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.order.geq(x, self.lo, tol) and self.order.geq(self.hi, x, tol)


class Tangent(enum.Enum):
    FREE = "free"
    NONNEG = "halfline_nonneg"
    NONPOS = "halfline_nonpos"


@dataclass(frozen=True)
class ConeTangent:
    tags: tuple[Tangent, ...]

    def contains(self, v, tol: float = 0.0) -> bool:
        v = _as_point(v, len(self.tags), "v")
        for tag, vi in zip(self.tags, v):
            if tag is Tangent.NONNEG and vi < -tol:
                return False
            if tag is Tangent.NONPOS and vi > tol:
                return False
        return True


def tangent_cone_orthant(
    order: OrthantOrder, p: Sequence[float], tol_order: float = 0.0, tol_active: float = TOL_ACTIVE
) -> ConeTangent:
    """Tangent cone to the orthant of ``order`` at a point ``p`` of it."""
    p = _as_point(p, order.n, "p")
    if not order.in_cone(p, tol_order):
        raise ValueError(f"point {p.tolist()} is not in the cone")
    tags = []
    for sign, pi in zip(order.signs, p):
        if abs(pi) <= tol_active:
            tags.append(Tangent.NONNEG if sign > 0 else Tangent.NONPOS)
        else:
            tags.append(Tangent.FREE)
    return ConeTangent(tuple(tags))
