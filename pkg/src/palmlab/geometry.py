"""Carrier geometries: flat torus, Euclidean box, and the affine line.

A carrier bundles a group law, a left-invariant proper metric, a Haar
density, and window machinery.  Group elements are plain float vectors
(``GroupPoint`` is an ndarray of length ``dim``).

Torus coordinates are quantized to the dyadic lattice ``side * 2**-40``.
On that lattice every addition, negation, and reduction mod the side length
is exact in binary64, so translations compose associatively bit-for-bit.
The lattice pitch (~9e-12 for side 10) sits below every statistical and
metric tolerance used anywhere in the laboratory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate

from .errors import UsageError

GroupPoint = np.ndarray

RESOLUTION_BITS = 40
ALGEBRA_TOL = 1e-9
QUADRATURE_RTOL = 1e-6


def _as_vector(x, dim: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (dim,):
        raise UsageError(f"expected a point of dimension {dim}, got shape {v.shape}")
    return v


def _mantissa_bits(x: float) -> int:
    """Number of significant mantissa bits of a positive float."""
    m, _ = math.frexp(x)
    k = int(m * (1 << 53))
    while k % 2 == 0:
        k //= 2
    return k.bit_length()


@dataclass(frozen=True)
class FlatTorus:
    """R^d / (side Z)^d with the quotient Euclidean metric."""

    dim: int
    side: float
    kind = "flat_torus"
    unimodular = True

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("torus dimension must be >= 1")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise UsageError("torus side must be positive and finite")
        # lattice products k * quantum must stay exact up to 2 * side
        if _mantissa_bits(self.side) + RESOLUTION_BITS + 1 > 53:
            raise UsageError(
                "torus side needs a short binary mantissa for exact lattice "
                "arithmetic (e.g. 10, 8, 2.5)")

    @property
    def quantum(self) -> float:
        return self.side * 2.0 ** (-RESOLUTION_BITS)

    def identity(self) -> GroupPoint:
        return np.zeros(self.dim)

    def wrap(self, coords: np.ndarray) -> np.ndarray:
        return np.mod(coords, self.side)

    def mul(self, g, h) -> GroupPoint:
        g = _as_vector(g, self.dim)
        h = _as_vector(h, self.dim)
        return self.wrap(g + h)

    def inv(self, g) -> GroupPoint:
        g = _as_vector(g, self.dim)
        return self.wrap(-g)

    def centered(self, rel: np.ndarray) -> np.ndarray:
        """Minimal-magnitude representatives in [-side/2, side/2)."""
        return rel - self.side * np.floor(rel / self.side + 0.5)

    def distance(self, g, h) -> float:
        g = _as_vector(g, self.dim)
        h = _as_vector(h, self.dim)
        return float(np.sqrt((self.centered(g - h) ** 2).sum()))

    def distances_from(self, points: np.ndarray, x) -> np.ndarray:
        rel = self.centered(np.asarray(points, dtype=float) - _as_vector(x, self.dim))
        return np.sqrt((rel ** 2).sum(axis=-1))

    def validate_points(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise UsageError(f"points must have shape (n, {self.dim})")
        if points.size and (points.min() < 0 or points.max() >= self.side):
            raise UsageError("torus coordinates must lie in [0, side)")

    def check_range(self, r: float, what: str):
        if not (0 < r < self.side / 4):
            raise UsageError(f"{what} must lie in (0, side/4) on the torus; got {r}")

    def full_window(self) -> "Window":
        return Window(self, np.zeros(self.dim), np.full(self.dim, self.side))

    def quantize(self, coords: np.ndarray) -> np.ndarray:
        q = self.quantum
        return self.wrap(np.floor(np.asarray(coords, dtype=float) / q) * q)

    def sample_uniform(self, window: "Window", rng: np.random.Generator, n: int | None = None):
        if haar_volume(window) <= 0:
            raise UsageError("cannot sample a window of zero Haar volume")
        size = 1 if n is None else int(n)
        q = self.quantum
        if np.array_equal(window.lo, np.zeros(self.dim)) and \
                np.array_equal(window.hi, np.full(self.dim, self.side)):
            ticks = rng.integers(0, 1 << RESOLUTION_BITS, size=(size, self.dim), dtype=np.int64)
            pts = ticks.astype(float) * q
        else:
            # uniform over the lattice points inside the sub-window
            base = np.ceil(window.lo / q) * q
            n_ticks = np.floor((window.hi - base) / q).astype(np.int64)
            if np.any(n_ticks <= 0):
                raise UsageError("window is thinner than the coordinate lattice")
            ticks = rng.integers(0, n_ticks, size=(size, self.dim), dtype=np.int64)
            pts = base + ticks.astype(float) * q
        return pts[0] if n is None else pts


@dataclass(frozen=True)
class EuclideanBox:
    """R^d under translation, simulated on an axis-aligned box window."""

    dim: int
    kind = "euclidean_box"
    unimodular = True

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dimension must be >= 1")

    def identity(self) -> GroupPoint:
        return np.zeros(self.dim)

    def mul(self, g, h) -> GroupPoint:
        return _as_vector(g, self.dim) + _as_vector(h, self.dim)

    def inv(self, g) -> GroupPoint:
        return -_as_vector(g, self.dim)

    def distance(self, g, h) -> float:
        d = _as_vector(g, self.dim) - _as_vector(h, self.dim)
        return float(np.sqrt((d ** 2).sum()))

    def distances_from(self, points: np.ndarray, x) -> np.ndarray:
        rel = np.asarray(points, dtype=float) - _as_vector(x, self.dim)
        return np.sqrt((rel ** 2).sum(axis=-1))

    def validate_points(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise UsageError(f"points must have shape (n, {self.dim})")

    def sample_uniform(self, window: "Window", rng: np.random.Generator, n: int | None = None):
        if haar_volume(window) <= 0:
            raise UsageError("cannot sample a window of zero Haar volume")
        size = 1 if n is None else int(n)
        pts = rng.uniform(window.lo, window.hi, size=(size, self.dim))
        return pts[0] if n is None else pts


@dataclass(frozen=True)
class AffineLine:
    """The ax+b group: elements (a, b) with a > 0.

    Composition is (a, b) * (a', b') = (a a', a b' + b); the left Haar
    density is da db / a^2 and the metric is the hyperbolic upper-half-plane
    distance applied to (x, y) = (b, a), which left multiplication preserves.
    """

    kind = "affine_line"
    unimodular = False
    dim = 2

    def identity(self) -> GroupPoint:
        return np.array([1.0, 0.0])

    def mul(self, g, h) -> GroupPoint:
        g = _as_vector(g, 2)
        h = _as_vector(h, 2)
        return np.array([g[0] * h[0], g[0] * h[1] + g[1]])

    def inv(self, g) -> GroupPoint:
        g = _as_vector(g, 2)
        return np.array([1.0 / g[0], -g[1] / g[0]])

    def distance(self, g, h) -> float:
        g = _as_vector(g, 2)
        h = _as_vector(h, 2)
        num = (g[1] - h[1]) ** 2 + (g[0] - h[0]) ** 2
        arg = 1.0 + num / (2.0 * g[0] * h[0])
        return float(np.arccosh(max(arg, 1.0)))

    def distances_from(self, points: np.ndarray, x) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        x = _as_vector(x, 2)
        num = (pts[:, 1] - x[1]) ** 2 + (pts[:, 0] - x[0]) ** 2
        arg = np.maximum(1.0 + num / (2.0 * pts[:, 0] * x[0]), 1.0)
        return np.arccosh(arg)

    def validate_points(self, points: np.ndarray):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise UsageError("affine points must have shape (n, 2)")
        if points.size and points[:, 0].min() <= 0:
            raise UsageError("affine scale coordinate must be strictly positive")

    def haar_density(self, a):
        return 1.0 / np.asarray(a, dtype=float) ** 2

    def sample_uniform(self, window: "Window", rng: np.random.Generator, n: int | None = None):
        # inverse transform on the scale coordinate against 1/a^2
        if haar_volume(window) <= 0:
            raise UsageError("cannot sample a window of zero Haar volume")
        size = 1 if n is None else int(n)
        a0, b0 = window.lo
        a1, b1 = window.hi
        u = rng.random(size)
        inv_a = (1.0 / a0) - u * ((1.0 / a0) - (1.0 / a1))
        a = 1.0 / inv_a
        b = rng.uniform(b0, b1, size)
        pts = np.column_stack([a, b])
        return pts[0] if n is None else pts


CarrierGroup = Union[FlatTorus, EuclideanBox, AffineLine]


@dataclass(frozen=True)
class Window:
    """Axis-aligned region of a carrier (the full torus is the full box)."""

    carrier: CarrierGroup
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != (self.carrier.dim,) or hi.shape != (self.carrier.dim,):
            raise UsageError("window bounds must match the carrier dimension")
        if np.any(hi < lo):
            raise UsageError("window upper bounds must dominate lower bounds")
        if isinstance(self.carrier, FlatTorus):
            if lo.min() < 0 or hi.max() > self.carrier.side:
                raise UsageError("torus window must lie within [0, side]^d")
        if isinstance(self.carrier, AffineLine) and lo[0] <= 0:
            raise UsageError("affine window needs a > 0")
        lo.setflags(write=False)
        hi.setflags(write=False)

    def __eq__(self, other):
        return (isinstance(other, Window) and self.carrier == other.carrier
                and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    @property
    def haar_volume(self) -> float:
        return haar_volume(self)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def covers(self, other: "Window") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))


def haar_volume(w: Window) -> float:
    """Haar measure of a window (closed form per carrier)."""
    span = w.hi - w.lo
    if np.any(span <= 0):
        return 0.0
    if isinstance(w.carrier, AffineLine):
        a0, a1 = w.lo[0], w.hi[0]
        return float((w.hi[1] - w.lo[1]) * (1.0 / a0 - 1.0 / a1))
    return float(np.prod(span))


def haar_volume_quadrature(w: Window) -> float:
    """Haar measure of a window by numeric quadrature (oracle path)."""
    span = w.hi - w.lo
    if np.any(span <= 0):
        return 0.0
    if isinstance(w.carrier, AffineLine):
        val, _ = integrate.quad(lambda a: (w.hi[1] - w.lo[1]) / a ** 2, w.lo[0], w.hi[0])
        return float(val)
    return float(np.prod(span))


def right_translate_volume(w: Window, f) -> float:
    """Haar measure of the right translate W f^{-1}.

    For torus and Euclidean carriers right translation preserves Lebesgue
    measure.  On the affine line W f^{-1} is the sheared box
    {(a g, a d + b) : (a, b) in W} for f^{-1} = (g, d); its measure is the
    quadrature of width / a^2 over the translated scale range.
    """
    carrier = w.carrier
    f = _as_vector(f, carrier.dim)
    if not isinstance(carrier, AffineLine):
        return haar_volume(w)
    gamma, _delta = carrier.inv(f)
    width = float(w.hi[1] - w.lo[1])
    a_lo, a_hi = w.lo[0] * gamma, w.hi[0] * gamma
    if a_hi <= a_lo or width <= 0:
        return 0.0
    val, _ = integrate.quad(lambda ap: width / ap ** 2, a_lo, a_hi)
    return float(val)
