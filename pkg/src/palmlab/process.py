"""Configurations and point-process samplers.

A configuration is a finite set of carrier points held in canonical
(lexicographic) order, so equality is decidable bit-exactly.  Samplers take
an explicit generator; experiment code derives one per trial from the
master seed, which keeps concurrent and sequential runs identical.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import RangeError, UsageError
from .geometry import AffineLine, CarrierGroup, FlatTorus, Window
from .stats import RatioMoments, StatReport

MIN_SEPARATION = 1e-12
UNIT_INTERVAL = "unit_interval"


def canonical_order(points: np.ndarray) -> np.ndarray:
    if len(points) <= 1:
        return np.array(points, dtype=float)
    keys = tuple(points[:, j] for j in reversed(range(points.shape[1])))
    return points[np.lexsort(keys)]


def _min_pairwise_distance(carrier: CarrierGroup, points: np.ndarray) -> float:
    n = len(points)
    if n < 2:
        return math.inf
    if isinstance(carrier, FlatTorus) and n > 400:
        tree = cKDTree(points, boxsize=carrier.side)
        d, _ = tree.query(points, k=2)
        return float(d[:, 1].min())
    if isinstance(carrier, FlatTorus):
        diff = np.abs(points[:, None, :] - points[None, :, :])
        diff = np.minimum(diff, carrier.side - diff)
        d2 = (diff ** 2).sum(-1)
    else:
        diff = points[:, None, :] - points[None, :, :]
        d2 = (diff ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


class _DuplicateCounter:
    """Counts placement redraws forced by floating-point collisions."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def bump(self, k: int = 1):
        with self._lock:
            self._count += k

    @property
    def count(self) -> int:
        return self._count


DUPLICATE_REDRAWS = _DuplicateCounter()


@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite point set in a window, canonically ordered."""

    carrier: CarrierGroup
    window: Window
    points: np.ndarray
    validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, self.carrier.dim)
        pts = canonical_order(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not self.validated:
            self.carrier.validate_points(pts)
            if len(pts) and not bool(self.window.contains(pts).all()):
                raise UsageError("configuration points must lie in the window")
            if _min_pairwise_distance(self.carrier, pts) <= MIN_SEPARATION:
                raise UsageError("configuration points must be pairwise distinct")
            object.__setattr__(self, "validated", True)

    def __eq__(self, other):
        return (isinstance(other, Configuration)
                and self.carrier == other.carrier
                and self.window == other.window
                and np.array_equal(self.points, other.points))

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def index_of(self, x) -> int:
        x = np.asarray(x, dtype=float)
        hits = np.where((self.points == x).all(axis=1))[0]
        if len(hits) == 0:
            raise UsageError("point does not belong to the configuration")
        return int(hits[0])

    def translate(self, g) -> "Configuration":
        return translate(self, g)

    def reroot(self, x) -> "RootedConfiguration":
        return reroot(self, x)


@dataclass(frozen=True, eq=False)
class MarkedConfiguration:
    """Configuration with one mark per point, aligned to canonical order."""

    base: Configuration
    marks: np.ndarray
    space: object  # UNIT_INTERVAL or a tuple alphabet

    def __post_init__(self):
        marks = np.asarray(self.marks)
        if len(marks) != self.base.n:
            raise UsageError("need exactly one mark per point")
        marks.setflags(write=False)
        object.__setattr__(self, "marks", marks)
        if self.space != UNIT_INTERVAL and not isinstance(self.space, tuple):
            raise UsageError("mark space must be 'unit_interval' or a tuple alphabet")

    def __eq__(self, other):
        return (isinstance(other, MarkedConfiguration)
                and self.base == other.base
                and self.space == other.space
                and np.array_equal(self.marks, other.marks))

    @property
    def n(self) -> int:
        return self.base.n


@dataclass(frozen=True, eq=False)
class RootedConfiguration(Configuration):
    """Configuration containing the identity element (the root)."""

    def __post_init__(self):
        super().__post_init__()
        if self.root_index is None:
            raise UsageError("rooted configuration must contain the identity")

    @property
    def root_index(self) -> int | None:
        zero = np.zeros(self.carrier.dim)
        hits = np.where((self.points == zero).all(axis=1))[0]
        return int(hits[0]) if len(hits) else None

    def others(self) -> np.ndarray:
        i = self.root_index
        return np.delete(self.points, i, axis=0)

    def others_centered(self) -> np.ndarray:
        pts = self.others()
        if isinstance(self.carrier, FlatTorus):
            return self.carrier.centered(pts)
        return pts

    def distances_from_root(self) -> np.ndarray:
        return self.carrier.distances_from(self.others(), self.carrier.identity())


@dataclass(frozen=True, eq=False)
class BirootedPair:
    """A rooted configuration with an arrow from the root to one point."""

    base: RootedConfiguration
    target: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "target", t)
        self.base.index_of(t)

    def source(self) -> RootedConfiguration:
        return self.base

    def target_config(self) -> RootedConfiguration:
        return reroot(self.base, self.target)

    def compose(self, other: "BirootedPair") -> "BirootedPair":
        if other.base != self.target_config():
            raise UsageError("pairs are not composable")
        return BirootedPair(self.base, self.base.carrier.mul(self.target, other.target))

    def __eq__(self, other):
        return (isinstance(other, BirootedPair) and self.base == other.base
                and np.array_equal(self.target, other.target))


# ------------------------------------------------------------- samplers

def sample_poisson(carrier: CarrierGroup, window: Window, intensity: float,
                   rng: np.random.Generator) -> Configuration:
    """Poisson sample: a Poisson count, then Haar-uniform placement."""
    if not (isinstance(intensity, (int, float)) and intensity >= 0 and math.isfinite(intensity)):
        raise UsageError("intensity must be finite and >= 0")
    vol = window.haar_volume
    if not math.isfinite(vol):
        raise UsageError("window volume must be finite")
    n = int(rng.poisson(intensity * vol)) if intensity > 0 else 0
    if n == 0:
        return Configuration(carrier, window, np.empty((0, carrier.dim)))
    pts = carrier.sample_uniform(window, rng, n)
    while _min_pairwise_distance(carrier, canonical_order(pts)) <= MIN_SEPARATION:
        DUPLICATE_REDRAWS.bump()
        pts = carrier.sample_uniform(window, rng, n)
    return Configuration(carrier, window, pts, validated=True)


def sample_lattice_shift(carrier: FlatTorus, spacing: float,
                         rng: np.random.Generator) -> Configuration:
    """Uniformly shifted grid  spacing * Z^d  mod side."""
    if not isinstance(carrier, FlatTorus):
        raise UsageError("lattice shifts are defined on the torus carrier")
    m = carrier.side / spacing
    if not (spacing > 0 and abs(m - round(m)) < 1e-9):
        raise UsageError("spacing must divide the torus side")
    m = int(round(m))
    q = carrier.quantum
    ticks = rng.integers(0, max(1, int(spacing / q)), size=carrier.dim, dtype=np.int64)
    shift = ticks.astype(float) * q
    axes = [np.arange(m) * spacing] * carrier.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, carrier.dim)
    pts = carrier.wrap(grid + shift)
    return Configuration(carrier, carrier.full_window(), pts, validated=True)


def attach_iid_marks(c: Configuration, space, rng: np.random.Generator) -> MarkedConfiguration:
    """Independent uniform marks, independent of positions."""
    if space == UNIT_INTERVAL:
        marks = rng.random(c.n)
    elif isinstance(space, tuple):
        if len(space) == 0:
            raise UsageError("mark alphabet must be non-empty")
        marks = rng.integers(0, len(space), size=c.n)
    else:
        raise UsageError("mark space must be 'unit_interval' or a tuple alphabet")
    return MarkedConfiguration(c, marks, space)


@dataclass(frozen=True)
class ProcessSpec:
    """Named process recipe used by the harness and the checkers."""

    kind: str = "poisson"  # poisson | lattice | thinned | thickened
    intensity: float = 1.0
    spacing: float = 2.0
    delta: float = 0.5
    offsets: tuple = ()

    def max_count_bound(self, window_volume: float) -> int:
        if self.kind == "lattice":
            return max(1, int(round(window_volume / self.spacing ** 2)) + 1)
        lam = self.intensity * window_volume
        bound = int(math.ceil(lam + 10.0 * math.sqrt(max(lam, 1.0)) + 10.0))
        if self.kind == "thickened":
            bound *= (1 + len(self.offsets))
        return bound


def make_sampler(spec: ProcessSpec, carrier: CarrierGroup,
                 window: Window) -> Callable[[np.random.Generator], Configuration]:
    """Build a one-draw sampler for a process recipe."""
    from . import factor  # local import; factor depends on process

    if spec.kind == "poisson":
        return lambda rng: sample_poisson(carrier, window, spec.intensity, rng)
    if spec.kind == "lattice":
        return lambda rng: sample_lattice_shift(carrier, spec.spacing, rng)
    if spec.kind == "thinned":
        def thinned(rng):
            return factor.delta_thinning(
                sample_poisson(carrier, window, spec.intensity, rng), spec.delta)
        return thinned
    if spec.kind == "thickened":
        offs = [np.asarray(o, dtype=float) for o in spec.offsets]
        fset = [carrier.identity()] + offs

        def thickened(rng):
            base = factor.delta_thinning(
                sample_poisson(carrier, window, spec.intensity, rng), spec.delta)
            return factor.constant_thickening(base, fset)
        return thickened
    raise UsageError(f"unknown process kind {spec.kind!r}")


# ------------------------------------------------------- basic operations

def count(c: Configuration, u: Window) -> int:
    """Number of configuration points inside the window u."""
    if u.carrier != c.carrier or not c.window.covers(u):
        raise UsageError("counting window must lie within the simulated region")
    if c.n == 0:
        return 0
    return int(u.contains(c.points).sum())


def estimate_intensity(samples: Sequence[Configuration], u: Window) -> StatReport:
    """Mean of N_U / volume(U) over samples, with its standard error."""
    if len(samples) < 2:
        raise UsageError("intensity estimation needs at least 2 samples")
    vol = u.haar_volume
    if vol <= 0:
        raise UsageError("counting window must have positive volume")
    moments = RatioMoments()
    for c in samples:
        moments = moments.merged(RatioMoments.single(count(c, u), vol))
    return StatReport.from_moments("intensity", moments)


def translate(c: Configuration, g) -> Configuration:
    """Left translation of every point by g."""
    g = np.asarray(g, dtype=float)
    if c.n == 0:
        return c
    if isinstance(c.carrier, FlatTorus):
        pts = c.carrier.wrap(c.points + g)
        return Configuration(c.carrier, c.window, pts, validated=True)
    if isinstance(c.carrier, AffineLine):
        pts = np.column_stack([g[0] * c.points[:, 0], g[0] * c.points[:, 1] + g[1]])
    else:
        pts = c.points + g
    if not bool(c.window.contains(pts).all()):
        raise RangeError("translation pushed a point outside the simulated region")
    return Configuration(c.carrier, c.window, pts, validated=True)


def reroot(c: Configuration, x) -> RootedConfiguration:
    """Translate so that the chosen point becomes the identity."""
    i = c.index_of(x)
    moved = translate(c, c.carrier.inv(c.points[i]))
    return RootedConfiguration(c.carrier, c.window, moved.points, validated=True)


def _canonical_permutation(points: np.ndarray) -> np.ndarray:
    if len(points) <= 1:
        return np.arange(len(points))
    keys = tuple(points[:, j] for j in reversed(range(points.shape[1])))
    return np.lexsort(keys)


def translate_marked(mc: MarkedConfiguration, g) -> MarkedConfiguration:
    """Translate a marked configuration; marks travel with their points."""
    if mc.base.n == 0:
        return mc
    g = np.asarray(g, dtype=float)
    carrier = mc.base.carrier
    if isinstance(carrier, FlatTorus):
        raw = carrier.wrap(mc.base.points + g)
    elif isinstance(carrier, AffineLine):
        raw = np.column_stack([g[0] * mc.base.points[:, 0],
                               g[0] * mc.base.points[:, 1] + g[1]])
    else:
        raw = mc.base.points + g
    if not isinstance(carrier, FlatTorus) and not bool(mc.base.window.contains(raw).all()):
        raise RangeError("translation pushed a point outside the simulated region")
    order = _canonical_permutation(raw)
    moved = Configuration(carrier, mc.base.window, raw[order], validated=True)
    return MarkedConfiguration(moved, np.asarray(mc.marks)[order], mc.space)


def reroot_marked(mc: MarkedConfiguration, x) -> MarkedConfiguration:
    """Reroot a marked configuration at one of its points, keeping marks aligned."""
    i = mc.base.index_of(x)
    return translate_marked(mc, mc.base.carrier.inv(mc.base.points[i]))


def clip_to_ball(rc: RootedConfiguration, radius: float) -> RootedConfiguration:
    """Restrict a rooted configuration to the metric ball around the root."""
    dists = rc.carrier.distances_from(rc.points, rc.carrier.identity())
    keep = rc.points[dists <= radius]
    return RootedConfiguration(rc.carrier, rc.window, keep, validated=True)


def rooted_from_centered(carrier: FlatTorus, window: Window, rel: np.ndarray) -> RootedConfiguration:
    """Rooted configuration from centered offsets of the non-root points."""
    pts = np.vstack([np.zeros((1, carrier.dim)), carrier.wrap(np.asarray(rel, dtype=float))])
    return RootedConfiguration(carrier, window, pts, validated=True)
