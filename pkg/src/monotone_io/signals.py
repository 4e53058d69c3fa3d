"""Input signals ``u : [0, inf) -> R^m``.

Every signal extends its last segment indefinitely.  ``breakpoints`` lists the
discontinuities inside a window so the integrator can restart there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _vec(v) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    arr.setflags(write=False)
    return arr


class InputSignal:
    m: int

    def __call__(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        return []

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def shift(self, s: float) -> "InputSignal":
        """The signal ``t -> u(t + s)``."""
        return Shifted(self, float(s))

    def sample(self, times) -> np.ndarray:
        return np.array([self(t) for t in np.asarray(times, dtype=float)])

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Constant(InputSignal):
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", _vec(self.value))

    @property
    def m(self) -> int:
        return self.value.size

    def __call__(self, t):
        return self.value

    def bounds(self):
        return self.value, self.value

    def shift(self, s):
        return self

    def to_dict(self):
        return {"type": "constant", "value": self.value.tolist()}


@dataclass(frozen=True, eq=False)
class PiecewiseConstant(InputSignal):
    """``values[0]`` on ``[0, t_1)``, ``values[k]`` on ``[t_k, t_{k+1})``."""

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != breaks.size + 1:
            raise ValueError("piecewise-constant signal needs len(values) == len(breaks) + 1")
        if breaks.size and (np.any(np.diff(breaks) <= 0) or breaks[0] <= 0):
            raise ValueError("breakpoints must be positive and strictly increasing")
        breaks.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    @property
    def m(self):
        return self.values.shape[1]

    def __call__(self, t):
        return self.values[int(np.searchsorted(self.breaks, t, side="right"))]

    def breakpoints(self, t0, t1):
        return [float(b) for b in self.breaks if t0 < b < t1]

    def bounds(self):
        return self.values.min(axis=0), self.values.max(axis=0)

    def to_dict(self):
        return {"type": "piecewise", "breaks": self.breaks.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class Sinusoid(InputSignal):
    """``offset + amplitude * sin(omega * t + phase)`` per channel."""

    offset: np.ndarray
    amplitude: np.ndarray
    omega: np.ndarray
    phase: np.ndarray | float = 0.0

    def __post_init__(self):
        offset = _vec(self.offset)
        m = offset.size
        for name in ("amplitude", "omega", "phase"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "offset", offset)

    @property
    def m(self):
        return self.offset.size

    def __call__(self, t):
        return self.offset + self.amplitude * np.sin(self.omega * t + self.phase)

    def bounds(self):
        a = np.abs(self.amplitude)
        return self.offset - a, self.offset + a

    def shift(self, s):
        return Sinusoid(self.offset, self.amplitude, self.omega, self.phase + self.omega * s)

    def to_dict(self):
        return {
            "type": "sinusoid",
            "offset": self.offset.tolist(),
            "amplitude": self.amplitude.tolist(),
            "omega": self.omega.tolist(),
            "phase": self.phase.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Tabulated(InputSignal):
    """Zero-order hold through ``values[j]`` on ``[times[j], times[j+1])``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != times.size or times.size == 0:
            raise ValueError("tabulated signal needs one value per time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("tabulated times must be strictly increasing")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def m(self):
        return self.values.shape[1]

    def __call__(self, t):
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(j, 0)]

    def breakpoints(self, t0, t1):
        return [float(b) for b in self.times[1:] if t0 < b < t1]

    def bounds(self):
        return self.values.min(axis=0), self.values.max(axis=0)

    def to_dict(self):
        return {"type": "tabulated", "times": self.times.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class Shifted(InputSignal):
    base: InputSignal
    offset: float

    @property
    def m(self):
        return self.base.m

    def __call__(self, t):
        return self.base(t + self.offset)

    def breakpoints(self, t0, t1):
        return [b - self.offset for b in self.base.breakpoints(t0 + self.offset, t1 + self.offset)]

    def bounds(self):
        return self.base.bounds()

    def shift(self, s):
        return Shifted(self.base, self.offset + s)

    def to_dict(self):
        return {"type": "shifted", "offset": self.offset, "base": self.base.to_dict()}


def signal_from_dict(d: dict) -> InputSignal:
    kind = d.get("type")
    if kind == "constant":
        return Constant(d["value"])
    if kind == "piecewise":
        return PiecewiseConstant(d["breaks"], d["values"])
    if kind == "sinusoid":
        return Sinusoid(d["offset"], d["amplitude"], d["omega"], d.get("phase", 0.0))
    if kind == "tabulated":
        return Tabulated(d["times"], d["values"])
    if kind == "shifted":
        return Shifted(signal_from_dict(d["base"]), float(d["offset"]))
    raise ValueError(f"unknown signal type {kind!r}")
