"""Equivariant factor operations on configurations.

Thinnings, thickenings, markings, factor graphs, grid Voronoi partitions,
the red/blue/purple input-output decomposition, and local mark encoding.
Rules acting through rooted views must declare a clipping radius; operating
only on the clipped view is what makes the operations local and, on the
torus, exactly equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import PreconditionError, UsageError
from .geometry import FlatTorus, CarrierGroup, Window
from .process import (Configuration, MarkedConfiguration, RootedConfiguration,
                      UNIT_INTERVAL)

RED, BLUE, PURPLE = "red", "blue", "purple"
COLOUR_SPACE = (RED, BLUE, PURPLE)
SEPARATION_TOL = 1e-9


# ---------------------------------------------------------- local rules

@dataclass(frozen=True)
class LocalEvent:
    """Predicate on rooted configurations, read through a clipped view."""

    radius: float
    fn: Callable[[RootedConfiguration], bool]
    name: str = ""

    def __call__(self, view: RootedConfiguration) -> bool:
        return bool(self.fn(view))


@dataclass(frozen=True)
class LocalMark:
    """Mark-valued map on rooted configurations, clipped like LocalEvent."""

    radius: float
    fn: Callable[[RootedConfiguration], object]
    name: str = ""

    def __call__(self, view: RootedConfiguration):
        return self.fn(view)


@dataclass(frozen=True)
class ArrowRule:
    """Edge predicate: (rooted view at the source, relative target point)."""

    radius: float
    fn: Callable[[RootedConfiguration, np.ndarray], bool]
    name: str = ""

    def __call__(self, view: RootedConfiguration, target_rel: np.ndarray) -> bool:
        return bool(self.fn(view, target_rel))


@dataclass(frozen=True)
class TransportRule:
    """Nonnegative mass sent from the root to a relative target point."""

    radius: float
    fn: Callable[[RootedConfiguration, np.ndarray], float]
    name: str = ""

    def __call__(self, view: RootedConfiguration, target_rel: np.ndarray) -> float:
        return float(self.fn(view, target_rel))


def _require_rule(rule, cls, carrier: CarrierGroup):
    if not isinstance(rule, cls):
        raise UsageError(f"rule must be a {cls.__name__} with a declared clipping radius")
    if isinstance(carrier, FlatTorus):
        carrier.check_range(rule.radius, "clipping radius")


def local_views(c: Configuration, radius: float):
    """Clipped rooted view around every point.

    Yields (index, view, neighbor_indices) where ``neighbor_indices`` maps
    the view's non-root points back to indices in ``c`` (view order).
    """
    pts = c.points
    n = len(pts)
    if n == 0:
        return
    if isinstance(c.carrier, FlatTorus) and n >= 2:
        tree = cKDTree(pts, boxsize=c.carrier.side)
        neighborhoods = tree.query_ball_point(pts, radius)
    else:
        neighborhoods = None
    zero = np.zeros((1, c.carrier.dim))
    for i in range(n):
        if neighborhoods is not None:
            idx = np.asarray([j for j in neighborhoods[i] if j != i], dtype=int)
        else:
            d = c.carrier.distances_from(pts, pts[i])
            idx = np.asarray([j for j in range(n) if j != i and d[j] <= radius], dtype=int)
        if isinstance(c.carrier, FlatTorus):
            rel = c.carrier.wrap(pts[idx] - pts[i]) if len(idx) else np.empty((0, c.carrier.dim))
        else:
            rel = pts[idx] - pts[i] if len(idx) else np.empty((0, c.carrier.dim))
        view_pts = np.vstack([zero, rel])
        view = RootedConfiguration(c.carrier, c.window, view_pts, validated=True)
        # canonical sort permuted the non-root rows; recover the index map
        perm = _view_permutation(view_pts, view.points, idx, c.carrier.dim)
        yield i, view, perm


def _view_permutation(raw_pts, sorted_pts, idx, dim):
    """Original indices of the sorted view's non-root rows."""
    if len(idx) == 0:
        return np.empty(0, dtype=int)
    key = {row.tobytes(): j for row, j in zip(raw_pts[1:], idx)}
    out = []
    for row in sorted_pts:
        b = row.tobytes()
        if b in key:
            out.append(key[b])
    return np.asarray(out, dtype=int)


# ------------------------------------------------------------- thinnings

def delta_thinning(c: Configuration, delta: float) -> Configuration:
    """Retain exactly the points farther than delta from every other point."""
    if isinstance(c.carrier, FlatTorus):
        c.carrier.check_range(delta, "thinning separation delta")
    elif delta <= 0:
        raise UsageError("delta must be positive")
    n = c.n
    if n <= 1:
        return c
    crowded = np.zeros(n, dtype=bool)
    if isinstance(c.carrier, FlatTorus):
        tree = cKDTree(c.points, boxsize=c.carrier.side)
        for i, j in tree.query_pairs(delta):
            crowded[i] = crowded[j] = True
    else:
        for i in range(n):
            d = c.carrier.distances_from(c.points, c.points[i])
            d[i] = np.inf
            if d.min() <= delta:
                crowded[i] = True
    return Configuration(c.carrier, c.window, c.points[~crowded], validated=True)


def independent_thinning(mc: MarkedConfiguration, p: float) -> Configuration:
    """Retain the points whose unit-interval mark is at most p."""
    if mc.space != UNIT_INTERVAL:
        raise UsageError("independent thinning needs unit-interval marks")
    if not (0.0 <= p <= 1.0):
        raise UsageError("retention probability must lie in [0, 1]")
    keep = np.asarray(mc.marks, dtype=float) <= p
    return Configuration(mc.base.carrier, mc.base.window, mc.base.points[keep], validated=True)


def thinning_from_set(c: Configuration, event: LocalEvent) -> Configuration:
    """Retain the points whose clipped rooted view satisfies the event."""
    _require_rule(event, LocalEvent, c.carrier)
    keep = np.zeros(c.n, dtype=bool)
    for i, view, _ in local_views(c, event.radius):
        keep[i] = event(view)
    return Configuration(c.carrier, c.window, c.points[keep], validated=True)


# ------------------------------------------------------------ thickenings

def check_F_separated(c: Configuration, F: Sequence) -> bool:
    """True iff the configuration never meets its right translate by F."""
    fset = [np.asarray(f, dtype=float) for f in F]
    if not any(np.array_equal(f, c.carrier.identity()) for f in fset):
        raise UsageError("F must contain the identity")
    return _separation_witness(c, fset) is None


def _separation_witness(c: Configuration, fset):
    ident = c.carrier.identity()
    if c.n == 0:
        return None
    if isinstance(c.carrier, FlatTorus):
        tree = cKDTree(c.points, boxsize=c.carrier.side)
    else:
        tree = cKDTree(c.points)
    for f in fset:
        if np.array_equal(f, ident):
            continue
        shifted = np.vstack([c.carrier.mul(x, f) for x in c.points])
        if isinstance(c.carrier, FlatTorus):
            shifted = c.carrier.wrap(shifted)
        d, j = tree.query(shifted, k=1)
        hit = np.argmin(d)
        if d[hit] <= SEPARATION_TOL:
            return c.points[hit], f, c.points[j[hit]]
    return None


def constant_thickening(c: Configuration, F: Sequence) -> Configuration:
    """Right translate the configuration by each element of F and take the union."""
    fset = [np.asarray(f, dtype=float) for f in F]
    if not any(np.array_equal(f, c.carrier.identity()) for f in fset):
        raise UsageError("F must contain the identity")
    witness = _separation_witness(c, fset)
    if witness is not None:
        x, f, y = witness
        raise PreconditionError(
            f"configuration is not F-separated: {x.tolist()} * {f.tolist()} "
            f"collides with {y.tolist()}")
    if c.n == 0:
        return c
    blocks = [np.vstack([c.carrier.mul(x, f) for x in c.points]) for f in fset]
    pts = np.vstack(blocks)
    window = c.window
    if not isinstance(c.carrier, FlatTorus):
        lo = np.minimum(c.window.lo, pts.min(axis=0))
        hi = np.maximum(c.window.hi, pts.max(axis=0) + 1e-12)
        window = Window(c.carrier, lo, hi)
    return Configuration(c.carrier, window, pts, validated=True)


# --------------------------------------------------------------- markings

def marking_from_map(c: Configuration, mark_map: LocalMark,
                     space=None) -> MarkedConfiguration:
    """Mark each point by evaluating the map on its clipped rooted view."""
    _require_rule(mark_map, LocalMark, c.carrier)
    marks = [None] * c.n
    for i, view, _ in local_views(c, mark_map.radius):
        marks[i] = mark_map(view)
    arr = np.asarray(marks) if c.n else np.empty(0)
    if space is None:
        space = tuple(sorted(set(np.asarray(arr).tolist()))) if c.n else ()
    return MarkedConfiguration(c, arr, space)


def retained_marks_thinning(mc: MarkedConfiguration, retained_mark) -> Configuration:
    """Keep the points carrying one designated mark."""
    keep = np.asarray([m == retained_mark for m in mc.marks.tolist()], dtype=bool)
    return Configuration(mc.base.carrier, mc.base.window, mc.base.points[keep], validated=True)


# ------------------------------------------------------------ factor graphs

@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Directed edge set over the points of a configuration."""

    base: Configuration
    edges: np.ndarray  # (m, 2) int, canonical lexicographic order

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        if len(e):
            if e.min() < 0 or e.max() >= self.base.n:
                raise UsageError("edge endpoints must index configuration points")
            e = e[np.lexsort((e[:, 1], e[:, 0]))]
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    def __eq__(self, other):
        return (isinstance(other, FactorGraph) and self.base == other.base
                and np.array_equal(self.edges, other.edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def out_degrees(self) -> np.ndarray:
        deg = np.zeros(self.base.n, dtype=int)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0], 1)
        return deg

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.base.n, dtype=int)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 1], 1)
        return deg


def graph_from_arrow_set(c: Configuration, rule: ArrowRule) -> FactorGraph:
    """Edges (x, y) where the rule accepts the rooted view at x aiming at y."""
    _require_rule(rule, ArrowRule, c.carrier)
    edges = []
    for i, view, nbr in local_views(c, rule.radius):
        others = view.others()
        for rel, j in zip(others, nbr):
            if rule(view, rel):
                edges.append((i, j))
    return FactorGraph(c, np.asarray(edges, dtype=int).reshape(-1, 2))


def distance_R_graph(c: Configuration, R: float) -> FactorGraph:
    """Edges in both directions between all pairs at distance <= R; no loops."""
    if isinstance(c.carrier, FlatTorus):
        c.carrier.check_range(R, "graph radius R")
    elif R <= 0:
        raise UsageError("R must be positive")
    if c.n < 2:
        return FactorGraph(c, np.empty((0, 2), dtype=int))
    if isinstance(c.carrier, FlatTorus):
        tree = cKDTree(c.points, boxsize=c.carrier.side)
        pairs = tree.query_pairs(R, output_type="ndarray")
    else:
        pairs = []
        for i in range(c.n):
            d = c.carrier.distances_from(c.points, c.points[i])
            for j in range(i + 1, c.n):
                if d[j] <= R:
                    pairs.append((i, j))
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    both = np.vstack([pairs, pairs[:, ::-1]]) if len(pairs) else np.empty((0, 2), dtype=int)
    return FactorGraph(c, both)


def nearest_neighbor_digraph(c: Configuration) -> FactorGraph:
    """One out-edge per point to its nearest other point (lexicographic ties)."""
    if c.n < 2:
        raise UsageError("nearest-neighbor digraph needs at least 2 points")
    nn = nearest_neighbor_indices(c)
    edges = np.column_stack([np.arange(c.n), nn])
    return FactorGraph(c, edges)


def nearest_neighbor_indices(c: Configuration) -> np.ndarray:
    """Index of each point's nearest other point, ties lexicographic."""
    if isinstance(c.carrier, FlatTorus):
        tree = cKDTree(c.points, boxsize=c.carrier.side)
        d, idx = tree.query(c.points, k=min(3, c.n))
        nn = idx[:, 1].copy()
        tie_rows = np.where(d[:, 1] == d[:, 2])[0] if c.n > 2 else []
    else:
        nn = np.zeros(c.n, dtype=int)
        tie_rows = []
        for i in range(c.n):
            dist = c.carrier.distances_from(c.points, c.points[i])
            dist[i] = np.inf
            nn[i] = int(np.argmin(dist))
        return nn
    for i in tie_rows:
        dist = c.carrier.distances_from(c.points, c.points[i])
        dist[i] = np.inf
        best = dist.min()
        cands = np.where(dist == best)[0]
        nn[i] = int(cands.min())  # canonical order is lexicographic
    return nn


# ------------------------------------------------------ voronoi partition

@dataclass(frozen=True, eq=False)
class VoronoiPartition:
    """Grid-discretized Voronoi tessellation (cell-center ownership)."""

    base: Configuration
    cell_side: float
    grid_shape: tuple
    owner: np.ndarray  # flat int32, row-major over grid_shape

    def __eq__(self, other):
        return (isinstance(other, VoronoiPartition) and self.base == other.base
                and self.cell_side == other.cell_side
                and self.grid_shape == other.grid_shape
                and np.array_equal(self.owner, other.owner))

    @property
    def cell_volume(self) -> float:
        return self.cell_side ** len(self.grid_shape)

    def volumes(self) -> np.ndarray:
        counts = np.bincount(self.owner, minlength=self.base.n)
        return counts * self.cell_volume


def grid_cell_centers(carrier: FlatTorus, h: float) -> tuple[np.ndarray, tuple]:
    m = carrier.side / h
    if abs(m - round(m)) > 1e-9:
        raise UsageError("grid side h must divide the torus side")
    m = int(round(m))
    axes = [(np.arange(m) + 0.5) * h] * carrier.dim
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, carrier.dim)
    return centers, (m,) * carrier.dim


def voronoi_partition(c: Configuration, h: float) -> VoronoiPartition:
    """Assign every grid cell to the nearest point of the configuration."""
    if c.n == 0:
        raise UsageError("voronoi partition needs at least one point")
    if not isinstance(c.carrier, FlatTorus):
        raise UsageError("grid voronoi partition is defined on the torus")
    centers, shape = grid_cell_centers(c.carrier, h)
    tree = cKDTree(c.points, boxsize=c.carrier.side)
    k = min(2, c.n)
    d, idx = tree.query(centers, k=k)
    if k == 1:
        owner = np.zeros(len(centers), dtype=np.int32)
    else:
        owner = idx[:, 0].astype(np.int32)
        ties = np.where(d[:, 0] == d[:, 1])[0]
        for cell in ties:
            dist = c.carrier.distances_from(c.points, centers[cell])
            best = dist.min()
            owner[cell] = int(np.where(dist == best)[0].min())
    return VoronoiPartition(c, h, shape, owner)


# ------------------------------------------- input / output decomposition

def input_output_decomposition(phi: Callable[[Configuration], Configuration],
                               c: Configuration) -> MarkedConfiguration:
    """Colour input and output points red / blue / purple.

    Points only in the input are red, points only in the output are blue,
    and common points are purple.  Projecting away red points and colours
    recovers phi(c) exactly.
    """
    out = phi(c)
    in_keys = {row.tobytes() for row in c.points}
    out_keys = {row.tobytes() for row in out.points}
    extra = [p for p in out.points if p.tobytes() not in in_keys]
    union = np.vstack([c.points] + ([np.asarray(extra)] if extra else []))
    window = out.window if out.window.covers(c.window) else c.window
    base = Configuration(c.carrier, window, union, validated=True)
    marks = []
    for row in base.points:
        b = row.tobytes()
        if b in in_keys and b in out_keys:
            marks.append(PURPLE)
        elif b in in_keys:
            marks.append(RED)
        else:
            marks.append(BLUE)
    return MarkedConfiguration(base, np.asarray(marks, dtype=object), COLOUR_SPACE)


def project_output(mc: MarkedConfiguration) -> Configuration:
    """Delete red points, then forget colours."""
    if mc.space != COLOUR_SPACE:
        raise UsageError("projection expects a red/blue/purple marking")
    keep = np.asarray([m != RED for m in mc.marks.tolist()], dtype=bool)
    return Configuration(mc.base.carrier, mc.base.window, mc.base.points[keep], validated=True)


# ------------------------------------------------------- local mark encoding

PLUS, MINUS = "+", "-"
BINARY_MARKS = (PLUS, MINUS)
_DECODE_FACTOR = 1.2  # neighbor-count radius, in units of the satellite radius


def _satellite_offsets(carrier: FlatTorus, delta: float):
    q = carrier.quantum
    r = max(q, np.floor((delta / 100.0) / q) * q)
    plus = np.array([[r, 0.0], [0.0, r], [-r, 0.0], [0.0, -r]])
    minus = np.array([[r, 0.0], [-r, 0.0]])
    return r, plus, minus


def local_encode_marks(mc: MarkedConfiguration, delta: float) -> Configuration:
    """Encode binary marks as satellite decorations around each point.

    A '+' point gains four satellites in a plus pattern at radius delta/100,
    a '-' point gains two opposite satellites.  Requires a delta-separated
    configuration on a 2d torus.
    """
    c = mc.base
    if not (isinstance(c.carrier, FlatTorus) and c.carrier.dim == 2):
        raise UsageError("local encoding is implemented on the 2d torus")
    if mc.space != BINARY_MARKS:
        raise UsageError("local encoding expects marks over ('+', '-')")
    c.carrier.check_range(delta, "encoding separation delta")
    if c.n >= 2:
        from .process import _min_pairwise_distance
        if _min_pairwise_distance(c.carrier, c.points) <= delta:
            raise PreconditionError("configuration is not delta-separated")
    _, plus, minus = _satellite_offsets(c.carrier, delta)
    rows = [c.points]
    for x, mark in zip(c.points, mc.marks.tolist()):
        offs = plus if mark == PLUS else minus
        rows.append(c.carrier.wrap(x + offs))
    pts = np.vstack(rows) if c.n else c.points
    return Configuration(c.carrier, c.window, pts, validated=True)


def local_decode_marks(c: Configuration, delta: float) -> MarkedConfiguration:
    """Invert local_encode_marks on encoder outputs.

    Originals are the points with at least two companions within
    1.2 * (delta/100); the companion count (4 or 2) recovers the mark.
    """
    if not (isinstance(c.carrier, FlatTorus) and c.carrier.dim == 2):
        raise UsageError("local decoding is implemented on the 2d torus")
    if c.n == 0:
        base = Configuration(c.carrier, c.window, c.points, validated=True)
        return MarkedConfiguration(base, np.empty(0, dtype=object), BINARY_MARKS)
    r, _, _ = _satellite_offsets(c.carrier, delta)
    tree = cKDTree(c.points, boxsize=c.carrier.side)
    counts = tree.query_ball_point(c.points, _DECODE_FACTOR * r, return_length=True) - 1
    originals = counts >= 2
    marks = []
    for cnt in counts[originals]:
        if cnt == 4:
            marks.append(PLUS)
        elif cnt == 2:
            marks.append(MINUS)
        else:
            raise UsageError("input is not a recognizable encoder output")
    if not np.all(counts[~originals] == 1):
        raise UsageError("input is not a recognizable encoder output")
    base = Configuration(c.carrier, c.window, c.points[originals], validated=True)
    return MarkedConfiguration(base, np.asarray(marks, dtype=object), BINARY_MARKS)
