"""Balanced allocations on the discretized torus and extra head schemes.

The allocation starts from capacity-clipped Voronoi cells and then runs
rounds in which every under-allocated point applies to its nearest point
whose Voronoi region still holds unclaimed cells; each such point grants
its closest applicant unclaimed cells, nearest to the applicant first, up
to the applicant's deficit.  Rounds are monotone: claimed area never
shrinks and only under-allocated points gain cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import RetryError, UsageError
from .geometry import FlatTorus
from .palm import (Battery, _battery_reports, _origin_distance_draw,
                   _rooted_distance_draw)
from .process import Configuration, ProcessSpec, make_sampler
from .factor import grid_cell_centers, voronoi_partition
from .stats import DEFAULT_ALPHA, RatioMoments, StatReport, accumulate_trials

UNCLAIMED = -1


@dataclass(frozen=True, eq=False)
class Allocation:
    """Grid-cell assignment of land to points, with an unclaimed remainder."""

    base: Configuration
    cell_side: float
    grid_shape: tuple
    owner: np.ndarray  # flat int32; UNCLAIMED marks free cells
    capacity: float
    converged: bool
    rounds_used: int
    claimed_history: tuple  # claimed cell count after each round

    def __eq__(self, other):
        return (isinstance(other, Allocation) and self.base == other.base
                and self.cell_side == other.cell_side
                and np.array_equal(self.owner, other.owner))

    @property
    def cell_volume(self) -> float:
        return self.cell_side ** len(self.grid_shape)

    def volumes(self) -> np.ndarray:
        counts = np.bincount(self.owner[self.owner >= 0], minlength=self.base.n)
        return counts * self.cell_volume

    @property
    def unclaimed_volume(self) -> float:
        return float((self.owner == UNCLAIMED).sum()) * self.cell_volume


def _torus_point_distances(carrier: FlatTorus, points: np.ndarray, x: np.ndarray):
    rel = carrier.centered(points - x)
    return np.sqrt((rel ** 2).sum(axis=-1))


def balanced_allocation(c: Configuration, h: float, eps: float,
                        max_rounds: int = 500) -> Allocation:
    """Allocate the torus to points in cells of volume capacity = L^d / n."""
    if c.n < 1:
        raise UsageError("allocation needs at least one point")
    carrier = c.carrier
    if not isinstance(carrier, FlatTorus):
        raise UsageError("balanced allocation runs on the torus carrier")
    d = carrier.dim
    cell_vol = h ** d
    if eps <= cell_vol:
        raise UsageError("eps must exceed one cell volume for grants to resolve")
    centers, shape = grid_cell_centers(carrier, h)
    n_cells = len(centers)
    capacity = carrier.side ** d / c.n

    tree = cKDTree(c.points, boxsize=carrier.side)
    dist_to_owner, region = tree.query(centers)
    region = region.astype(np.int32)

    # initialize: per point keep its nearest region cells up to capacity
    cap_cells = int(math.floor(capacity / cell_vol + 1e-9))
    owner = np.full(n_cells, UNCLAIMED, dtype=np.int32)
    order = np.lexsort((dist_to_owner, region))
    region_cells = {}
    sorted_regions = region[order]
    boundaries = np.flatnonzero(np.diff(sorted_regions)) + 1
    blocks = np.split(order, boundaries)
    for block in blocks:
        if len(block) == 0:
            continue
        p = int(region[block[0]])
        region_cells[p] = block  # cells of p's Voronoi region, nearest first
        take = block[:cap_cells]
        owner[take] = p

    counts = np.bincount(owner[owner >= 0], minlength=c.n).astype(np.int64)

    claimed_history = [int((owner >= 0).sum())]
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        volumes = counts * cell_vol
        wanting = np.flatnonzero(capacity - volumes > eps)
        if len(wanting) == 0:
            converged = True
            rounds -= 1
            break
        free_mask = owner == UNCLAIMED
        sharer_ids = np.unique(region[free_mask])
        if len(sharer_ids) == 0:
            break
        sharer_pts = c.points[sharer_ids]
        # each wanting point applies to its nearest sharer
        applications = {}
        for w in wanting:
            dists = _torus_point_distances(carrier, sharer_pts, c.points[w])
            s = int(sharer_ids[int(np.argmin(dists))])
            best = applications.get(s)
            if best is None:
                applications[s] = (w, dists.min())
            else:
                # the sharer serves its closest applicant
                dw = _torus_point_distances(
                    carrier, c.points[s][None, :], c.points[w])[0]
                db = _torus_point_distances(
                    carrier, c.points[s][None, :], c.points[best[0]])[0]
                if (dw, tuple(c.points[w])) < (db, tuple(c.points[best[0]])):
                    applications[s] = (w, dists.min())
        progressed = False
        for s, (w, _) in sorted(applications.items()):
            cells = region_cells.get(int(s))
            if cells is None:
                continue
            free_cells = cells[owner[cells] == UNCLAIMED]
            if len(free_cells) == 0:
                continue
            need = int(math.floor((capacity - counts[w] * cell_vol) / cell_vol + 1e-9))
            if need <= 0:
                continue
            grant_rel = _torus_point_distances(carrier, centers[free_cells], c.points[w])
            grant_order = free_cells[np.argsort(grant_rel, kind="stable")]
            take = grant_order[:need]
            owner[take] = w
            counts[w] += len(take)
            progressed = True
        claimed_history.append(int((owner >= 0).sum()))
        if not progressed:
            break
    else:
        rounds = max_rounds

    volumes = counts * cell_vol
    if len(np.flatnonzero(capacity - volumes > eps)) == 0:
        converged = True
    owner.setflags(write=False)
    return Allocation(c, h, shape, owner, capacity, converged, rounds,
                      tuple(claimed_history))


def extra_head_point(a: Allocation) -> np.ndarray:
    """Owner of the cell containing the identity element."""
    p = int(a.owner[0])  # the identity sits in the corner cell, index 0
    if p == UNCLAIMED:
        raise RetryError("the identity's cell is unclaimed; resample the trial")
    return a.base.points[p]


def voronoi_owner_point(c: Configuration) -> np.ndarray:
    """Point whose Voronoi cell contains the identity (the biased control)."""
    carrier = c.carrier
    dists = _torus_point_distances(carrier, c.points, carrier.identity())
    return c.points[int(np.argmin(dists))]


def check_extra_head(t: float, d: int, L: float, h: float, n_trials: int, *,
                     eps: float = 0.01, max_rounds: int = 500, seed: int = 0,
                     alpha: float = DEFAULT_ALPHA, battery: Battery | None = None,
                     process: ProcessSpec | None = None, reference: str = "auto",
                     threads: int = 1) -> list[StatReport]:
    """Rerooting at the extra head reproduces the Palm law; the Voronoi
    owner control does not.

    The reference ensemble is the root-adjoined law for the Poisson process
    (``"mecke"``) and size-biased direct rooted draws otherwise
    (``"direct"``); both realize the exact Palm law of their process.
    Returns battery reports for the extra-head reroot (expected to pass),
    one inverted family report for the Voronoi-owner control (expected to
    fail), and convergence, retry, and post-condition reports.
    """
    carrier = FlatTorus(d, L)
    window = carrier.full_window()
    spec = process or ProcessSpec("poisson", intensity=t)
    sampler = make_sampler(spec, carrier, window)
    battery = battery or Battery()
    r_need = battery.required_radius()
    if reference == "auto":
        reference = "mecke" if spec.kind == "poisson" else "direct"
    if reference not in ("mecke", "direct"):
        raise UsageError("reference must be 'auto', 'mecke', or 'direct'")
    cap = spec.max_count_bound(window.haar_volume)
    shapes = dict(battery.hist_shapes())
    shapes["convergence"] = (2,)    # [converged, not converged]
    shapes["retries"] = (2,)        # [clean, retried]
    shapes["postconditions"] = (2,)  # [ok, violated]

    def head_hist(rng, i):
        out = {}
        conv = np.zeros(2, dtype=np.int64)
        retr = np.zeros(2, dtype=np.int64)
        post = np.zeros(2, dtype=np.int64)
        for _attempt in range(8):
            cfg = sampler(rng)
            if cfg.n == 0:
                return None
            alloc = balanced_allocation(cfg, h, eps, max_rounds)
            conv[0 if alloc.converged else 1] += 1
            vols = alloc.volumes()
            ok = bool((vols <= alloc.capacity + alloc.cell_volume + 1e-12).all())
            if alloc.converged:
                ok = ok and bool((alloc.capacity - vols <= eps + 1e-12).all())
                ok = ok and alloc.unclaimed_volume <= cfg.n * eps + 1e-12
            hist = alloc.claimed_history
            ok = ok and all(b >= a for a, b in zip(hist, hist[1:]))
            post[0 if ok else 1] += 1
            try:
                x = extra_head_point(alloc)
            except RetryError:
                retr[1] += 1
                continue
            retr[0] += 1
            dists = _torus_point_distances(carrier, cfg.points, x)
            dists = dists[dists > 0]
            out = battery.increments(dists[dists <= r_need])
            break
        out["convergence"] = conv
        out["retries"] = retr
        out["postconditions"] = post
        return out

    def control_hist(rng, i):
        cfg = sampler(rng)
        if cfg.n == 0:
            return None
        x = voronoi_owner_point(cfg)
        dists = _torus_point_distances(carrier, cfg.points, x)
        dists = dists[dists > 0]
        return battery.increments(dists[dists <= r_need])

    def reference_hist(rng, i):
        if reference == "mecke":
            return battery.increments(_origin_distance_draw(rng, sampler, r_need))
        dists = _rooted_distance_draw(rng, sampler, cap, r_need)
        return battery.increments(dists) if dists is not None else None

    _, head_hists = accumulate_trials(n_trials, None, seed=seed,
                                      experiment="extra_head.head", threads=threads,
                                      hist_shapes=shapes, hist_fn=head_hist)
    _, control_hists = accumulate_trials(n_trials, None, seed=seed,
                                         experiment="extra_head.control", threads=threads,
                                         hist_shapes=battery.hist_shapes(),
                                         hist_fn=control_hist)
    _, ref_hists = accumulate_trials(n_trials, None, seed=seed,
                                     experiment="extra_head.reference", threads=threads,
                                     hist_shapes=battery.hist_shapes(),
                                     hist_fn=reference_hist)
    conv = head_hists.pop("convergence")
    retr = head_hists.pop("retries")
    post = head_hists.pop("postconditions")
    reports = _battery_reports("extra_head", head_hists, ref_hists, battery, alpha)
    control = _battery_reports("extra_head.control", control_hists, ref_hists,
                               battery, alpha)
    # the control is a deliberately biased reroot: the battery must reject it
    rejected = any(not r.passed for r in control)
    worst = min(control, key=lambda r: r.pvalue if r.pvalue is not None else 1.0)
    reports.append(StatReport("extra_head.control_rejected", worst.estimate, 0.0,
                              worst.n, None, worst.z, rejected,
                              pvalue=worst.pvalue, alpha=worst.alpha, invert=True))
    conv_m = RatioMoments.from_pairs([int(conv[0])], [int(conv.sum())])
    reports.append(StatReport("extra_head.convergence_rate", conv_m.estimate, 0.0,
                              int(conv.sum()), 0.99, 0.0, conv_m.estimate >= 0.99))
    retry_rate = float(retr[1]) / max(1, int(retr.sum()))
    reports.append(StatReport("extra_head.retry_rate", retry_rate, 0.0,
                              int(retr.sum()), 0.05, 0.0, retry_rate <= 0.05))
    reports.append(StatReport("extra_head.postconditions", float(post[1]), 0.0,
                              int(post.sum()), 0.0, 0.0, int(post[1]) == 0))
    return reports


def check_voronoi_palm_volume(t: float, d: int, L: float, h: float, n_trials: int, *,
                              seed: int = 0, process: ProcessSpec | None = None,
                              reference: float | None = None,
                              threads: int = 1) -> StatReport:
    """Palm expectation of the root's Voronoi cell volume (reference 1/t)."""
    carrier = FlatTorus(d, L)
    window = carrier.full_window()
    spec = process or ProcessSpec("poisson", intensity=t)
    sampler = make_sampler(spec, carrier, window)
    if reference is None:
        reference = 1.0 / t if spec.kind == "poisson" else None

    def trial(rng, i):
        cfg = sampler(rng)
        if cfg.n == 0:
            return None
        vor = voronoi_partition(cfg, h)
        vols = vor.volumes()
        return {"cell_volume": (float(vols.sum()), cfg.n)}

    moments, _ = accumulate_trials(n_trials, trial, seed=seed,
                                   experiment="voronoi_palm_volume", threads=threads)
    m = moments.get("cell_volume", RatioMoments())
    return StatReport.from_moments("voronoi_palm_volume", m, reference=reference)
