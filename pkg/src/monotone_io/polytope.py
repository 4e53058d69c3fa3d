"""Bounded convex polytopes ``{x : G x <= g}`` and interval boxes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import Delaunay, HalfspaceIntersection, QhullError


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Polytope:
    """Closed polytope with unit-norm constraint rows.

    Rows are normalised on construction, so ``slack`` returns Euclidean
    distances to the supporting hyperplanes.
    """

    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(-1)
        if G.shape[0] != g.shape[0]:
            raise DomainError(f"G has {G.shape[0]} rows but g has {g.shape[0]} entries")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(g))):
            raise DomainError("polytope data must be finite")
        norms = np.linalg.norm(G, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("polytope has a zero constraint row")
        G = G / norms[:, None]
        g = g / norms
        G.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        center, radius = self.chebyshev
        if radius <= 1e-12:
            raise DomainError("polytope has empty interior")

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def simplex(cls, n: int) -> "Polytope":
        """``{x >= 0, sum(x) <= 1}``."""
        G = np.vstack([-np.eye(n), np.ones((1, n))])
        return cls(G, np.concatenate([np.zeros(n), [1.0]]))

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def q(self) -> int:
        return self.G.shape[0]

    def slack(self, x) -> np.ndarray:
        return self.g - self.G @ np.asarray(x, dtype=float)

    def violation(self, x) -> float:
        """Largest constraint violation (negative inside)."""
        return float(np.max(self.G @ np.asarray(x, dtype=float) - self.g))

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.violation(x) <= tol

    def active(self, x, tol: float = 1e-9) -> np.ndarray:
        return np.flatnonzero(self.G @ np.asarray(x, dtype=float) >= self.g - tol)

    @cached_property
    def chebyshev(self) -> tuple[np.ndarray, float]:
        n = self.n
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([self.G, np.ones((self.q, 1))])
        bounds = [(None, None)] * n + [(0.0, 1e6)]
        res = linprog(c, A_ub=A, b_ub=self.g, bounds=bounds, method="highs")
        if res.status != 0:
            raise DomainError(f"Chebyshev centre LP failed: {res.message}")
        return res.x[:n].copy(), float(res.x[-1])

    @cached_property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        lo = np.empty(n)
        hi = np.empty(n)
        for i in range(n):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(n)
                c[i] = sign
                res = linprog(c, A_ub=self.G, b_ub=self.g, bounds=[(None, None)] * n, method="highs")
                if res.status != 0:
                    raise DomainError("polytope must be bounded")
                out[i] = res.x[i]
        return lo, hi

    @cached_property
    def vertices(self) -> np.ndarray:
        if self.n == 1:
            lo, hi = self.bbox
            return np.array([lo, hi])
        center, _ = self.chebyshev
        hs = HalfspaceIntersection(np.hstack([self.G, -self.g[:, None]]), center)
        pts = hs.intersections.copy()
        pts[np.abs(pts) < 1e-13] = 0.0
        keep: list[np.ndarray] = []
        scale = 1.0 + float(np.max(np.abs(pts)))
        for p in pts:
            if not any(np.linalg.norm(p - k) <= 1e-9 * scale for k in keep):
                keep.append(p)
        return np.array(sorted(keep, key=lambda v: tuple(np.round(v, 12))))

    @property
    def diameter(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def flip(self, signs) -> "Polytope":
        """Image under ``x -> diag(signs) x`` with ``signs`` in {+1, -1}."""
        return Polytope(self.G * np.asarray(signs, dtype=float)[None, :], self.g)

    def product(self, other: "Polytope") -> "Polytope":
        G = np.zeros((self.q + other.q, self.n + other.n))
        G[: self.q, : self.n] = self.G
        G[self.q :, self.n :] = other.G
        return Polytope(G, np.concatenate([self.g, other.g]))

    def sample_interior(self, rng: np.random.Generator, k: int, max_tries: int = 1000) -> np.ndarray:
        """Uniform samples by rejection from the bounding box (strict interior)."""
        lo, hi = self.bbox
        out = []
        tries = 0
        while len(out) < k:
            tries += 1
            if tries > max_tries:
                raise DomainError("rejection sampling failed to fill the polytope")
            batch = rng.uniform(lo, hi, size=(max(4 * k, 64), self.n))
            ok = np.all(batch @ self.G.T < self.g, axis=1)
            out.extend(batch[ok][: k - len(out)])
        return np.array(out)

    def retract(self, x) -> np.ndarray:
        """Move ``x`` towards the Chebyshev centre until it lies in the polytope."""
        x = np.asarray(x, dtype=float)
        if self.contains(x):
            return x
        c, _ = self.chebyshev
        d = x - c
        Gd = self.G @ d
        room = self.g - self.G @ c
        with np.errstate(divide="ignore"):
            ratios = np.where(Gd > 0, room / Gd, np.inf)
        t = min(1.0, float(np.min(ratios)))
        p = c + t * d
        # guard against round-off pushing the point just outside
        while not self.contains(p):
            t *= 1.0 - 1e-12
            p = c + t * d
        return p

    def facet_vertices(self, i: int, tol: float = 1e-9) -> np.ndarray:
        V = self.vertices
        on = np.abs(V @ self.G[i] - self.g[i]) <= tol * (1.0 + np.abs(self.g[i]))
        return V[on]

    def facet_dimension(self, i: int) -> int:
        V = self.facet_vertices(i)
        if len(V) == 0:
            return -1
        if len(V) == 1:
            return 0
        return int(np.linalg.matrix_rank(V[1:] - V[0], tol=1e-9))

    def sample_facet(self, i: int, rng: np.random.Generator, k: int) -> np.ndarray:
        """``k`` points on the facet ``G_i x = g_i``.

        Barycentric-uniform over a triangulation of the facet's vertex hull for
        ``n <= 3``; hit-and-run inside the facet otherwise.  Returns an empty
        array when the row is not a facet (it touches the polytope in a
        lower-dimensional face or not at all).
        """
        if self.facet_dimension(i) != self.n - 1:
            return np.empty((0, self.n))
        if self.n <= 3:
            return self._sample_facet_barycentric(i, rng, k)
        return self._sample_facet_hit_and_run(i, rng, k)

    def _sample_facet_barycentric(self, i, rng, k):
        V = self.facet_vertices(i)
        d = self.n - 1
        if d == 0:
            return np.repeat(V[:1], k, axis=0)
        c = V.mean(axis=0)
        _, _, vt = np.linalg.svd(V - c)
        basis = vt[:d]
        coords = (V - c) @ basis.T
        if d == 1:
            order = np.argsort(coords[:, 0])
            a, b = V[order[0]], V[order[-1]]
            t = rng.uniform(size=(k, 1))
            return a + t * (b - a)
        try:
            tri = Delaunay(coords)
        except QhullError as exc:
            raise DomainError(f"degenerate facet {i}: {exc}") from exc
        simplices = tri.simplices
        vols = np.array([abs(np.linalg.det(coords[s[1:]] - coords[s[0]])) for s in simplices])
        if vols.sum() <= 0:
            raise DomainError(f"degenerate facet {i}")
        which = rng.choice(len(simplices), size=k, p=vols / vols.sum())
        w = rng.dirichlet(np.ones(d + 1), size=k)
        return np.einsum("kj,kjn->kn", w, V[simplices[which]])

    def _sample_facet_hit_and_run(self, i, rng, k, burn_in: int = 50, thin: int = 5):
        n = self.n
        others = [j for j in range(self.q) if j != i]
        Go, go = self.G[others], self.g[others]
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([Go, np.ones((len(others), 1))])
        res = linprog(
            c,
            A_ub=A,
            b_ub=go,
            A_eq=np.hstack([self.G[i], [0.0]])[None, :],
            b_eq=[self.g[i]],
            bounds=[(None, None)] * n + [(0.0, 1e6)],
            method="highs",
        )
        if res.status != 0 or res.x[-1] <= 0:
            raise DomainError(f"degenerate facet {i}")
        x = res.x[:n]
        normal = self.G[i]
        out = []
        step = 0
        while len(out) < k:
            d = rng.standard_normal(n)
            d -= (d @ normal) * normal
            nd = np.linalg.norm(d)
            if nd < 1e-12:
                continue
            d /= nd
            Gd = Go @ d
            room = go - Go @ x
            hi = np.min(np.where(Gd > 1e-14, room / np.where(Gd > 1e-14, Gd, 1.0), np.inf))
            lo = np.max(np.where(Gd < -1e-14, room / np.where(Gd < -1e-14, Gd, 1.0), -np.inf))
            x = x + rng.uniform(lo, hi) * d
            step += 1
            if step > burn_in and (step - burn_in) % thin == 0:
                out.append(x.copy())
        return np.array(out)

    def to_dict(self) -> dict:
        return {"G": self.G.tolist(), "g": self.g.tolist()}


@dataclass(frozen=True, eq=False)
class Box:
    """Closed interval box ``lo <= u <= hi``; degenerate sides are allowed."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DomainError("box bounds have different lengths")
        if lo.size == 0:
            raise DomainError("box must have at least one dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("box bounds must be finite")
        if np.any(lo > hi):
            raise DomainError("box requires lo <= hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def m(self) -> int:
        return self.lo.size

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(k, self.m))

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[np.unique([a, b]) for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([gr.reshape(-1) for gr in grids], axis=1)

    def flip(self, signs) -> "Box":
        s = np.asarray(signs, dtype=float)
        return Box(np.where(s > 0, self.lo, -self.hi), np.where(s > 0, self.hi, -self.lo))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}
