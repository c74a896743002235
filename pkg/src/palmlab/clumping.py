"""One-ended clumpings by iterated nearest-cluster merging, and the
directed-line factor graph built from a clumping.

Level zero is the partition into singletons.  At each level every cluster
selects its nearest cluster (single-linkage distance, lexicographic ties
on representative pairs) and selection chains are united, so the cluster
count at least halves per level until one class remains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .geometry import FlatTorus
from .factor import FactorGraph
from .process import Configuration


@dataclass(frozen=True, eq=False)
class ClumpingSequence:
    """Ascending sequence of finite-class partitions of the point indices."""

    base: Configuration
    levels: tuple  # tuple of partitions; a partition is a tuple of index tuples

    def __eq__(self, other):
        return (isinstance(other, ClumpingSequence) and self.base == other.base
                and self.levels == other.levels)

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ClumpingReport:
    ascending_ok: bool
    partitions_ok: bool
    one_ended_ok: bool
    witness: str | None

    @property
    def passed(self) -> bool:
        return self.ascending_ok and self.partitions_ok and self.one_ended_ok


def _pairwise_distances(c: Configuration) -> np.ndarray:
    pts = c.points
    if isinstance(c.carrier, FlatTorus):
        diff = np.abs(pts[:, None, :] - pts[None, :, :])
        diff = np.minimum(diff, c.carrier.side - diff)
    else:
        diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def _representative(cluster: tuple) -> int:
    # canonical point order is lexicographic, so the minimal index is the
    # lexicographically smallest member
    return min(cluster)


def _canonical_partition(classes) -> tuple:
    classes = [tuple(sorted(cl)) for cl in classes]
    classes.sort(key=lambda cl: cl[0])
    return tuple(classes)


def build_clumping(c: Configuration, max_levels: int = 64) -> ClumpingSequence:
    """Merge every cluster with its nearest cluster until one class remains."""
    if c.n < 1:
        raise UsageError("clumping needs at least one point")
    dmat = _pairwise_distances(c)
    clusters = [(i,) for i in range(c.n)]
    levels = [_canonical_partition(clusters)]
    level = 0
    while len(clusters) > 1 and level < max_levels:
        level += 1
        k = len(clusters)
        # single-linkage distances between clusters
        cdist = np.full((k, k), np.inf)
        for a in range(k):
            ia = np.asarray(clusters[a])
            for b in range(a + 1, k):
                ib = np.asarray(clusters[b])
                val = dmat[np.ix_(ia, ib)].min()
                cdist[a, b] = cdist[b, a] = val
        # nearest-cluster selection with lexicographic ties on representatives
        select = np.zeros(k, dtype=int)
        reps = [_representative(cl) for cl in clusters]
        rep_keys = [tuple(c.points[r]) for r in reps]
        for a in range(k):
            row = cdist[a]
            best = row.min()
            cands = np.flatnonzero(row == best)
            select[a] = min(cands, key=lambda b: rep_keys[b])
        # unite selection chains
        parent = list(range(k))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a in range(k):
            ra, rb = find(a), find(int(select[a]))
            if ra != rb:
                parent[ra] = rb
        groups = {}
        for a in range(k):
            groups.setdefault(find(a), []).append(a)
        clusters = [tuple(sorted(sum((clusters[a] for a in grp), ())))
                    for grp in groups.values()]
        levels.append(_canonical_partition(clusters))
    return ClumpingSequence(c, tuple(levels))


def verify_clumping(s: ClumpingSequence) -> ClumpingReport:
    """Check the ascending, partition, and one-endedness axioms."""
    n = s.base.n
    witness = None
    partitions_ok = True
    for li, level in enumerate(s.levels):
        seen = sorted(i for cl in level for i in cl)
        if seen != list(range(n)):
            partitions_ok = False
            witness = f"level {li} is not a partition of the point indices"
            break
    ascending_ok = partitions_ok
    if ascending_ok:
        for li in range(1, len(s.levels)):
            coarse = {}
            for ci, cl in enumerate(s.levels[li]):
                for i in cl:
                    coarse[i] = ci
            for cl in s.levels[li - 1]:
                targets = {coarse[i] for i in cl}
                if len(targets) != 1:
                    ascending_ok = False
                    witness = (f"class {cl} at level {li - 1} splits across "
                               f"classes of level {li}")
                    break
            if not ascending_ok:
                break
    one_ended_ok = partitions_ok and len(s.levels[-1]) == 1
    if partitions_ok and not one_ended_ok and witness is None:
        a = s.levels[-1][0][0]
        b = s.levels[-1][1][0]
        witness = f"points {a} and {b} never share a class"
    return ClumpingReport(ascending_ok, partitions_ok, one_ended_ok, witness)


def z_line_factor(s: ClumpingSequence) -> FactorGraph:
    """Directed Hamiltonian path obtained by concatenating cluster orders.

    Singletons are trivially ordered; when clusters merge, their orders are
    concatenated by lexicographic order of the cluster representatives, so
    every class at every level occupies a contiguous stretch of the path.
    """
    if len(s.levels[-1]) != 1:
        raise UsageError("the final level must be a single class")
    c = s.base
    orders = {cl: list(cl) for cl in s.levels[0]}
    for li in range(1, len(s.levels)):
        prev = s.levels[li - 1]
        new_orders = {}
        for cl in s.levels[li]:
            members = [p for p in prev if set(p) <= set(cl)]
            members.sort(key=lambda p: tuple(c.points[_representative(p)]))
            seq = []
            for p in members:
                seq.extend(orders[p])
            new_orders[cl] = seq
        orders = new_orders
    path = orders[s.levels[-1][0]]
    edges = np.asarray([(path[i], path[i + 1]) for i in range(len(path) - 1)],
                       dtype=int).reshape(-1, 2)
    return FactorGraph(c, edges)


def path_order(g: FactorGraph) -> list[int]:
    """Vertex order of a simple directed path; raises if it is not one."""
    n = g.base.n
    out_deg = g.out_degrees()
    in_deg = g.in_degrees()
    if g.n_edges != n - 1 or out_deg.max(initial=0) > 1 or in_deg.max(initial=0) > 1:
        raise UsageError("graph is not a simple directed path")
    succ = {int(a): int(b) for a, b in g.edges}
    sources = np.flatnonzero(in_deg == 0)
    if len(sources) != 1:
        raise UsageError("graph is not a simple directed path")
    order = [int(sources[0])]
    while order[-1] in succ:
        order.append(succ[order[-1]])
    if len(order) != n:
        raise UsageError("graph is not a simple directed path")
    return order
