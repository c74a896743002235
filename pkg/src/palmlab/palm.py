"""Palm-measure estimation and identity checks.

The Palm measure is estimated by relative rates: on the torus every point
of a realization is a core point, and rerooting at each of them gives one
rooted sample.  Mean-type estimates average over all core points with
per-trial (cluster) standard errors.  Distribution-level comparisons use
one size-biased rooted draw per trial so the chi-square machinery sees
independent samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientDataError, UsageError
from .geometry import AffineLine, FlatTorus, Window, right_translate_volume
from .factor import (ArrowRule, LocalEvent, LocalMark, TransportRule,
                     constant_thickening, grid_cell_centers,
                     marking_from_map, thinning_from_set)
from .process import (Configuration, ProcessSpec, RootedConfiguration,
                      clip_to_ball, make_sampler, reroot,
                      rooted_from_centered, sample_poisson)
from .rng import trial_rng
from .stats import (DEFAULT_ALPHA, DEFAULT_Z_THRESHOLD, RatioMoments,
                    StatReport, accumulate_trials, two_sample_chi_square)


# ----------------------------------------------------------- sample sets

@dataclass(frozen=True)
class PalmSampleSet:
    """Rooted samples clipped to the observation ball around the root."""

    carrier: FlatTorus
    r_obs: float
    rel_samples: tuple  # centered offsets of the non-root points, per sample
    trial_ids: np.ndarray
    n_trials: int
    provenance: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.rel_samples)

    @property
    def empty(self) -> bool:
        return self.n_samples == 0

    def rooted(self, i: int) -> RootedConfiguration:
        return rooted_from_centered(self.carrier, self.carrier.full_window(),
                                    self.rel_samples[i])


def _core_relative_offsets(cfg: Configuration, r_obs: float):
    """Centered offsets within r_obs around every point of the realization."""
    carrier = cfg.carrier
    pts = cfg.points
    n = len(pts)
    out = []
    if n == 0:
        return out
    tree = cKDTree(pts, boxsize=carrier.side) if n > 1 else None
    hoods = tree.query_ball_point(pts, r_obs) if tree is not None else [[0]] * n
    for i in range(n):
        idx = [j for j in hoods[i] if j != i]
        rel = carrier.centered(pts[idx] - pts[i]) if idx else np.empty((0, carrier.dim))
        out.append(rel)
    return out


def palm_samples(sampler: Callable, n_trials: int, r_obs: float, margin: float = 0.0,
                 seed: int = 0, experiment: str = "palm_samples") -> PalmSampleSet:
    """Collect rooted samples from every core point of every trial."""
    rels = []
    trial_ids = []
    carrier = None
    for i in range(n_trials):
        rng = trial_rng(seed, experiment, i)
        cfg = sampler(rng)
        if carrier is None:
            carrier = cfg.carrier
            if not isinstance(carrier, FlatTorus):
                raise UsageError("palm sampling is defined on the torus carrier")
            if not (0 < r_obs < carrier.side / 4):
                raise UsageError("observation radius must lie in (0, side/4)")
            if r_obs + margin >= carrier.side / 2:
                raise UsageError("observation radius plus margin must stay below side/2")
        for rel in _core_relative_offsets(cfg, r_obs):
            rels.append(rel)
            trial_ids.append(i)
    if not rels:
        warnings.warn("palm sample set is empty (no points in any trial)")
    return PalmSampleSet(carrier, r_obs, tuple(rels),
                         np.asarray(trial_ids, dtype=int), n_trials,
                         {"seed": seed, "experiment": experiment, "n_trials": n_trials})


def palm_probability(ps: PalmSampleSet, event: LocalEvent,
                     name: str | None = None) -> StatReport:
    """Relative-rate estimate of the Palm probability of a clipped event."""
    if not isinstance(event, LocalEvent):
        raise UsageError("event must be a LocalEvent with a declared radius")
    if event.radius > ps.r_obs:
        raise UsageError("event radius exceeds the observation radius")
    label = name or (event.name or "palm_probability")
    if ps.empty:
        return StatReport.from_moments(label + "[no samples]", RatioMoments())
    per_trial_num = np.zeros(ps.n_trials, dtype=np.int64)
    per_trial_den = np.zeros(ps.n_trials, dtype=np.int64)
    window = ps.carrier.full_window()
    for rel, tid in zip(ps.rel_samples, ps.trial_ids):
        if len(rel):
            dist = np.sqrt((rel ** 2).sum(axis=1))
            view_rel = rel[dist <= event.radius]
        else:
            view_rel = rel
        view = rooted_from_centered(ps.carrier, window, view_rel)
        per_trial_num[tid] += bool(event(view))
        per_trial_den[tid] += 1
    moments = RatioMoments.from_pairs(per_trial_num.tolist(), per_trial_den.tolist())
    return StatReport.from_moments(label, moments)


# ----------------------------------------------- size-biased rooted draws

def size_biased_draw(rng: np.random.Generator, cfg: Configuration, cap: int):
    """One Palm draw: accept the trial w.p. n/cap, then root uniformly.

    Accepting proportionally to the point count realizes the intensity
    weighting of the relative-rate definition with independent draws.
    """
    n = cfg.n
    if n == 0:
        return None
    if rng.random() * cap >= n:
        return None
    return int(rng.integers(n))


@dataclass(frozen=True)
class Battery:
    """Fixed battery of local statistics for distribution comparisons."""

    radii: tuple = (0.5, 1.0, 2.0)
    nn_cap: float = 2.0
    count_cap: int = 40
    nn_bins: int = 12

    @property
    def names(self) -> tuple:
        return tuple(f"count[r={r}]" for r in self.radii) + ("nn_distance",)

    def hist_shapes(self) -> dict:
        shapes = {f"count[r={r}]": (self.count_cap + 1,) for r in self.radii}
        shapes["nn_distance"] = (self.nn_bins + 1,)
        return shapes

    def increments(self, dists: np.ndarray) -> dict:
        """Histogram increments from the root-to-others distance vector."""
        out = {}
        for r in self.radii:
            c = min(int((dists <= r).sum()), self.count_cap)
            inc = np.zeros(self.count_cap + 1, dtype=np.int64)
            inc[c] = 1
            out[f"count[r={r}]"] = inc
        nn = dists.min() if len(dists) else math.inf
        edges = np.linspace(0.0, self.nn_cap, self.nn_bins + 1)
        b = min(int(np.searchsorted(edges, nn, side="right")) - 1, self.nn_bins)
        b = max(b, 0)
        inc = np.zeros(self.nn_bins + 1, dtype=np.int64)
        inc[b] = 1
        out["nn_distance"] = inc
        return out

    def required_radius(self) -> float:
        return max(max(self.radii), self.nn_cap)


def _battery_reports(prefix: str, palm_hists: dict, ref_hists: dict,
                     battery: Battery, alpha: float, invert: bool = False):
    """Bonferroni-corrected two-sample chi-square per battery statistic."""
    names = battery.names
    per_test_alpha = alpha / len(names)
    reports = []
    for nm in names:
        a, b = palm_hists[nm], ref_hists[nm]
        stat, p, dof = two_sample_chi_square(a, b)
        reports.append(StatReport.from_gof(
            f"{prefix}.{nm}", stat, p, int(a.sum() + b.sum()),
            dof=dof, alpha=per_test_alpha, invert=invert))
    return reports


def _rooted_distance_draw(rng, sampler, cap, r_need):
    """Distances to the root of one size-biased rooted draw, or None."""
    cfg = sampler(rng)
    pick = size_biased_draw(rng, cfg, cap)
    if pick is None:
        return None
    d = cfg.carrier.distances_from(cfg.points, cfg.points[pick])
    d = np.delete(d, pick)
    return d[d <= r_need] if len(d) else d


def _origin_distance_draw(rng, sampler, r_need):
    """Distances from the origin probe in a fresh realization."""
    cfg = sampler(rng)
    if cfg.n == 0:
        return np.empty(0)
    d = cfg.carrier.distances_from(cfg.points, cfg.carrier.identity())
    return d[d <= r_need]


# ----------------------------------------------------- identity checkers

def check_mecke_slivnyak(t: float, d: int, L: float, n_trials: int,
                         radii: Sequence[float] = (0.5, 1.0, 2.0), *,
                         seed: int = 0, process: ProcessSpec | None = None,
                         alpha: float = DEFAULT_ALPHA, nn_cap: float = 2.0,
                         threads: int = 1) -> list[StatReport]:
    """Compare Palm count laws against the process with an adjoined root.

    For each radius the root-adjoined side observes counts at the origin of
    a fresh realization; the Palm side observes counts around a size-biased
    rooted draw.  Agreement across the battery characterizes the Poisson
    process, so non-Poisson inputs are expected to fail.
    """
    carrier = FlatTorus(d, L)
    for r in radii:
        carrier.check_range(r, "battery radius")
    spec = process or ProcessSpec("poisson", intensity=t)
    if spec.kind == "poisson" and t == 0:
        return [StatReport.from_moments("mecke[no samples]", RatioMoments())]
    window = carrier.full_window()
    sampler = make_sampler(spec, carrier, window)
    cap = spec.max_count_bound(window.haar_volume)
    battery = Battery(radii=tuple(radii), nn_cap=nn_cap)
    r_need = battery.required_radius()

    def palm_hist(rng, i):
        dists = _rooted_distance_draw(rng, sampler, cap, r_need)
        return battery.increments(dists) if dists is not None else None

    def ref_hist(rng, i):
        return battery.increments(_origin_distance_draw(rng, sampler, r_need))

    _, palm_hists = accumulate_trials(n_trials, None, seed=seed,
                                      experiment="mecke.palm", threads=threads,
                                      hist_shapes=battery.hist_shapes(), hist_fn=palm_hist)
    _, ref_hists = accumulate_trials(n_trials, None, seed=seed,
                                     experiment="mecke.reference", threads=threads,
                                     hist_shapes=battery.hist_shapes(), hist_fn=ref_hist)
    return _battery_reports("mecke", palm_hists, ref_hists, battery, alpha)


def _positive(value, what):
    if value < 0:
        raise UsageError(f"{what} must be nonnegative")
    return value


@dataclass(frozen=True)
class ClippedFunction:
    """Test function f(x, rooted view) with declared locality and support."""

    name: str
    radius: float
    support: Window
    fn: Callable[[np.ndarray, RootedConfiguration], float]
    batch: Callable[[np.ndarray, RootedConfiguration], np.ndarray] | None = None

    def values(self, xs: np.ndarray, view: RootedConfiguration) -> np.ndarray:
        if self.batch is not None:
            vals = np.asarray(self.batch(xs, view), dtype=float)
        else:
            vals = np.asarray([self.fn(x, view) for x in xs], dtype=float)
        if vals.size and vals.min() < 0:
            raise UsageError("test function returned a negative value")
        return vals


def check_clmm(f: ClippedFunction, t: float, d: int, L: float, n_trials: int, *,
               seed: int = 0, grid_divisions: int = 512,
               z_threshold: float = DEFAULT_Z_THRESHOLD,
               threads: int = 1) -> StatReport:
    """Compare the process-sum side against intensity times the Palm integral.

    The left side sums f(x, view at x) over points of the realization inside
    the support window.  The right side averages the grid quadrature of
    x -> f(x, rooted sample) over rooted samples and scales by the intensity.
    """
    carrier = FlatTorus(d, L)
    carrier.check_range(f.radius, "function locality radius")
    window = carrier.full_window()
    h = L / grid_divisions
    centers, _ = grid_cell_centers(carrier, h)
    inside = f.support.contains(centers)
    nodes = centers[inside]
    cell_vol = h ** d

    def lhs_trial(rng, i):
        cfg = sample_poisson(carrier, window, t, rng)
        total = 0.0
        if cfg.n:
            in_support = np.where(f.support.contains(cfg.points))[0]
            for j in in_support:
                view = clip_to_ball(reroot(cfg, cfg.points[j]), f.radius)
                val = float(f.fn(cfg.points[j], view))
                _positive(val, "test function value")
                total += val
        return {"lhs": (total, 1)}

    def rhs_trial(rng, i):
        cfg = sample_poisson(carrier, window, t, rng)
        if cfg.n == 0:
            return None
        num = 0.0
        for j in range(cfg.n):
            view = clip_to_ball(reroot(cfg, cfg.points[j]), f.radius)
            vals = f.values(nodes, view)
            num += cell_vol * float(vals.sum())
        return {"rhs": (num, cfg.n)}

    lhs_m, _ = accumulate_trials(n_trials, lhs_trial, seed=seed,
                                 experiment=f"clmm.lhs.{f.name}", threads=threads)
    rhs_m, _ = accumulate_trials(max(1, n_trials // 10), rhs_trial, seed=seed,
                                 experiment=f"clmm.rhs.{f.name}", threads=threads)
    lhs = lhs_m["lhs"]
    rhs = rhs_m.get("rhs", RatioMoments())
    rhs_value = t * rhs.estimate
    se = math.sqrt(lhs.stderr ** 2 + (t * rhs.stderr) ** 2)
    diff = lhs.estimate - rhs_value
    if se == 0.0:
        z = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    else:
        z = diff / se
    return StatReport(f"clmm[{f.name}]", lhs.estimate, se, int(lhs.trials),
                      rhs_value, z, abs(z) <= z_threshold, z_threshold=z_threshold)


def _root_view(cfg: Configuration, i: int, radius: float):
    """Clipped rooted view at point i plus its neighbor indices and offsets."""
    carrier = cfg.carrier
    d = carrier.distances_from(cfg.points, cfg.points[i])
    idx = np.asarray([j for j in range(cfg.n) if j != i and d[j] <= radius], dtype=int)
    rel = carrier.wrap(cfg.points[idx] - cfg.points[i]) if len(idx) else \
        np.empty((0, carrier.dim))
    pts = np.vstack([np.zeros((1, carrier.dim)), rel])
    view = RootedConfiguration(carrier, cfg.window, pts, validated=True)
    return view, idx


def _root_masses(cfg: Configuration, root: int, rule, radius: float):
    """Mass out of and into one root under a rooted-view rule.

    Out-mass evaluates the rule from the root's view toward each neighbor;
    in-mass evaluates it from each neighbor's view back toward the root.
    Both sums run over ordered pairs within the rule radius.
    """
    carrier = cfg.carrier
    view, idx = _root_view(cfg, root, radius)
    out_mass = 0.0
    for y in idx:
        rel = carrier.wrap(cfg.points[y] - cfg.points[root])
        m = float(rule(view, rel))
        _positive(m, "transported mass")
        out_mass += m
    in_mass = 0.0
    for y in idx:
        view_y, _ = _root_view(cfg, int(y), radius)
        rel_root = carrier.wrap(cfg.points[root] - cfg.points[y])
        m = float(rule(view_y, rel_root))
        _positive(m, "transported mass")
        in_mass += m
    return out_mass, in_mass


def _paired_mass_check(name: str, rule, radius: float, t, d, L, n_trials, *,
                       seed, process, z_threshold, threads,
                       orientation: int) -> tuple[StatReport, dict]:
    """Shared machinery for the transport and degree-balance checks.

    One size-biased rooted draw per trial keeps draws independent; mass in
    and mass out are computed at the same root, so the difference is paired.
    ``orientation`` fixes the sign convention of the reported difference.
    """
    carrier = FlatTorus(d, L)
    carrier.check_range(radius, "rule radius")
    spec = process or ProcessSpec("poisson", intensity=t)
    window = carrier.full_window()
    sampler = make_sampler(spec, carrier, window)
    cap = spec.max_count_bound(window.haar_volume)

    def trial(rng, i):
        cfg = sampler(rng)
        pick = size_biased_draw(rng, cfg, cap)
        if pick is None:
            return None
        out_mass, in_mass = _root_masses(cfg, pick, rule, radius)
        diff = orientation * (in_mass - out_mass)
        return {"paired": (diff, 1), "in": (in_mass, 1), "out": (out_mass, 1)}

    moments, _ = accumulate_trials(n_trials, trial, seed=seed,
                                   experiment=name, threads=threads)
    paired = moments.get("paired", RatioMoments())
    report = StatReport.from_moments(name, paired, reference=0.0,
                                     z_threshold=z_threshold)
    extras = {k: StatReport.from_moments(f"{name}.{k}", m)
              for k, m in moments.items() if k != "paired"}
    return report, extras


def check_mtp(T: TransportRule, t: float, d: int, L: float, n_trials: int, *,
              seed: int = 0, process: ProcessSpec | None = None,
              z_threshold: float = DEFAULT_Z_THRESHOLD,
              threads: int = 1) -> StatReport:
    """Mass into the root versus mass out of the root, paired per draw."""
    if not isinstance(T, TransportRule):
        raise UsageError("T must be a TransportRule with a declared radius")
    report, _ = _paired_mass_check(f"mtp[{T.name}]", T, T.radius, t, d, L,
                                   n_trials, seed=seed, process=process,
                                   z_threshold=z_threshold, threads=threads,
                                   orientation=1)
    return report


def mtp_mass_estimates(T: TransportRule, t: float, d: int, L: float, n_trials: int, *,
                       seed: int = 0, process: ProcessSpec | None = None,
                       threads: int = 1) -> dict[str, StatReport]:
    """Separate in/out mass estimates (diagnostics for the paired check)."""
    _, extras = _paired_mass_check(f"mtp[{T.name}]", T, T.radius, t, d, L,
                                   n_trials, seed=seed, process=process,
                                   z_threshold=DEFAULT_Z_THRESHOLD,
                                   threads=threads, orientation=1)
    return extras


def check_degree_balance(rule: ArrowRule, t: float, d: int, L: float, n_trials: int, *,
                         seed: int = 0, process: ProcessSpec | None = None,
                         z_threshold: float = DEFAULT_Z_THRESHOLD,
                         threads: int = 1) -> StatReport:
    """Expected root out-degree versus in-degree under the Palm measure."""
    if not isinstance(rule, ArrowRule):
        raise UsageError("graph rule must be an ArrowRule with a declared radius")
    report, _ = _paired_mass_check(f"degree_balance[{rule.name}]", rule,
                                   rule.radius, t, d, L, n_trials, seed=seed,
                                   process=process, z_threshold=z_threshold,
                                   threads=threads, orientation=-1)
    return report


def degree_estimates(rule: ArrowRule, t: float, d: int, L: float, n_trials: int, *,
                     seed: int = 0, process: ProcessSpec | None = None,
                     threads: int = 1) -> dict[str, StatReport]:
    """Out-degree and in-degree Palm estimates for a graph rule."""
    _, extras = _paired_mass_check(f"degree[{rule.name}]", rule, rule.radius,
                                   t, d, L, n_trials, seed=seed, process=process,
                                   z_threshold=DEFAULT_Z_THRESHOLD,
                                   threads=threads, orientation=-1)
    return extras


# ----------------------------------------- palm calculus of factor maps

def check_palm_thinning(event: LocalEvent, t: float, d: int, L: float,
                        n_trials: int, *, seed: int = 0, r_obs: float = 2.2,
                        alpha: float = DEFAULT_ALPHA, battery: Battery | None = None,
                        threads: int = 1) -> list[StatReport]:
    """Palm measure of the thinned process versus conditioned-then-thinned.

    Pipeline A draws rooted samples of the thinned process directly.
    Pipeline B draws rooted samples of the base process, keeps those whose
    root the event retains, and applies the thinning afterwards.
    """
    if not isinstance(event, LocalEvent):
        raise UsageError("event must be a LocalEvent with a declared radius")
    carrier = FlatTorus(d, L)
    carrier.check_range(event.radius, "event radius")
    window = carrier.full_window()
    battery = battery or Battery()
    r_need = battery.required_radius()
    base = make_sampler(ProcessSpec("poisson", intensity=t), carrier, window)
    cap = ProcessSpec("poisson", intensity=t).max_count_bound(window.haar_volume)

    def pipeline_a(rng, i):
        thinned = thinning_from_set(base(rng), event)
        pick = size_biased_draw(rng, thinned, cap)
        if pick is None:
            return None
        dists = carrier.distances_from(thinned.points, thinned.points[pick])
        dists = np.delete(dists, pick)
        return battery.increments(dists[dists <= r_need])

    def pipeline_b(rng, i):
        cfg = base(rng)
        pick = size_biased_draw(rng, cfg, cap)
        if pick is None:
            return None
        cond = np.zeros(2, dtype=np.int64)  # [retained, rejected-by-event]
        rooted = reroot(cfg, cfg.points[pick])
        if not event(clip_to_ball(rooted, event.radius)):
            cond[1] = 1
            return {"conditioning": cond}
        cond[0] = 1
        thinned = thinning_from_set(rooted, event)
        dists = thinned.carrier.distances_from(thinned.points, carrier.identity())
        dists = dists[dists > 0]
        out = battery.increments(dists[dists <= r_need])
        out["conditioning"] = cond
        return out

    _, hists_a = accumulate_trials(n_trials, None, seed=seed,
                                   experiment=f"palm_thinning.a.{event.name}",
                                   threads=threads,
                                   hist_shapes=battery.hist_shapes(), hist_fn=pipeline_a)
    shapes_b = dict(battery.hist_shapes())
    shapes_b["conditioning"] = (2,)
    _, hists_b = accumulate_trials(n_trials, None, seed=seed,
                                   experiment=f"palm_thinning.b.{event.name}",
                                   threads=threads,
                                   hist_shapes=shapes_b, hist_fn=pipeline_b)
    retained, rejected = hists_b.pop("conditioning").tolist()
    total = retained + rejected
    if retained == 0 or (total and retained < max(1, 1e-3 * total)):
        raise InsufficientDataError("insufficient conditioning mass")
    return _battery_reports(f"palm_thinning[{event.name}]", hists_a, hists_b,
                            battery, alpha)


def check_palm_colouring(mark_map: LocalMark, t: float, d: int, L: float,
                         n_comparisons: int, *, seed: int = 0,
                         threads: int = 1) -> StatReport:
    """Bit-exact commutation of colouring with rerooting at core points."""
    if not isinstance(mark_map, LocalMark):
        raise UsageError("colouring must be a LocalMark with a declared radius")
    carrier = FlatTorus(d, L)
    carrier.check_range(mark_map.radius, "colouring radius")
    window = carrier.full_window()
    sampler = make_sampler(ProcessSpec("poisson", intensity=t), carrier, window)

    def trial(rng, i):
        cfg = sampler(rng)
        if cfg.n == 0:
            return None
        pick = int(rng.integers(cfg.n))
        x = cfg.points[pick]
        coloured = marking_from_map(cfg, mark_map)
        rooted = reroot(cfg, x)
        # colour then reroot: marks travel with their points
        order = np.lexsort(tuple(
            carrier.wrap(cfg.points - x)[:, j] for j in reversed(range(d))))
        marks_then_reroot = np.asarray(coloured.marks)[order]
        recoloured = marking_from_map(rooted, mark_map)
        same_points = np.array_equal(
            carrier.wrap(cfg.points - x)[order], rooted.points)
        same_marks = list(marks_then_reroot.tolist()) == list(np.asarray(recoloured.marks).tolist())
        return {"mismatch": (0 if (same_points and same_marks) else 1, 1)}

    moments, _ = accumulate_trials(n_comparisons, trial, seed=seed,
                                   experiment=f"palm_colouring.{mark_map.name}",
                                   threads=threads)
    m = moments.get("mismatch", RatioMoments())
    est = m.estimate
    passed = (m.trials > 0 and est == 0.0)
    return StatReport(f"palm_colouring[{mark_map.name}]", est, 0.0,
                      int(m.trials), 0.0, 0.0 if passed else math.inf, passed)


def check_palm_thickening(offsets: Sequence, t: float, d: int, L: float,
                          n_trials: int, *, delta: float = 0.5, seed: int = 0,
                          alpha: float = DEFAULT_ALPHA, battery: Battery | None = None,
                          threads: int = 1) -> list[StatReport]:
    """Palm of a constant thickening versus uniformly rerooted thickened Palm.

    The base process is the delta-thinned Poisson (so it is F-separated).
    Pipeline A takes rooted draws of the thickened process; pipeline B
    thickens a rooted draw of the base process and reroots it at a uniform
    element of F.
    """
    carrier = FlatTorus(d, L)
    offs = [np.asarray(o, dtype=float) for o in offsets]
    fset = [carrier.identity()] + offs
    diam = max((float(np.sqrt((carrier.centered(o) ** 2).sum())) for o in offs), default=0.0)
    if delta <= 2 * diam:
        raise UsageError("need delta > 2 * diam(F) for F-separation")
    window = carrier.full_window()
    battery = battery or Battery()
    r_need = battery.required_radius()
    spec = ProcessSpec("thinned", intensity=t, delta=delta)
    base = make_sampler(spec, carrier, window)
    cap = (1 + len(offs)) * spec.max_count_bound(window.haar_volume)

    def pipeline_a(rng, i):
        b = base(rng)
        if b.n == 0:
            return None
        thick = constant_thickening(b, fset)
        ratio = np.zeros(2, dtype=np.int64)  # [exact-ratio trials, mismatches]
        ratio[0] = 1
        if thick.n != len(fset) * b.n:
            ratio[1] = 1
        pick = size_biased_draw(rng, thick, cap)
        if pick is None:
            return {"ratio_exact": ratio}
        dists = carrier.distances_from(thick.points, thick.points[pick])
        dists = np.delete(dists, pick)
        out = battery.increments(dists[dists <= r_need])
        out["ratio_exact"] = ratio
        return out

    def pipeline_b(rng, i):
        b = base(rng)
        pick = size_biased_draw(rng, b, cap // max(1, len(fset)))
        if pick is None:
            return None
        rooted = reroot(b, b.points[pick])
        thick = constant_thickening(rooted, fset)
        x = fset[int(rng.integers(len(fset)))]
        rerooted = reroot(thick, x)
        dists = carrier.distances_from(rerooted.points, carrier.identity())
        dists = dists[dists > 0]
        return battery.increments(dists[dists <= r_need])

    shapes_a = dict(battery.hist_shapes())
    shapes_a["ratio_exact"] = (2,)
    _, hists_a = accumulate_trials(n_trials, None, seed=seed,
                                   experiment="palm_thickening.a", threads=threads,
                                   hist_shapes=shapes_a, hist_fn=pipeline_a)
    _, hists_b = accumulate_trials(n_trials, None, seed=seed,
                                   experiment="palm_thickening.b", threads=threads,
                                   hist_shapes=battery.hist_shapes(), hist_fn=pipeline_b)
    trials_seen, mismatches = hists_a.pop("ratio_exact").tolist()
    reports = _battery_reports("palm_thickening", hists_a, hists_b, battery, alpha)
    # cardinality ratio |F| holds exactly per configuration
    ratio_ok = trials_seen > 0 and mismatches == 0
    reports.append(StatReport("palm_thickening.intensity_ratio",
                              float(len(fset) if ratio_ok else -1), 0.0,
                              int(trials_seen), float(len(fset)),
                              0.0 if ratio_ok else math.inf, ratio_ok))
    return reports


def check_nonunimodular_thickening(t: float, f, window: Window, n_trials: int, *,
                                   seed: int = 0, sim_window: Window | None = None,
                                   z_threshold: float = DEFAULT_Z_THRESHOLD,
                                   threads: int = 1) -> list[StatReport]:
    """Thickened-count law on the affine line versus quadrature references.

    Simulates the left-Haar Poisson on a region covering U and U f^{-1},
    thickens by F = {identity, f}, and compares the mean count in U with
    t (lambda(U) + lambda(U f^{-1})).  A second, expected-failure row checks
    that the count deviates from the unimodular prediction 2 t lambda(U)
    whenever the two translate volumes differ.
    """
    carrier = window.carrier
    if not isinstance(carrier, AffineLine):
        raise UsageError("the non-unimodular check runs on the affine carrier")
    f = np.asarray(f, dtype=float)
    lam_u = window.haar_volume
    lam_uf = right_translate_volume(window, f)
    if sim_window is None:
        finv = carrier.inv(f)
        corners = [carrier.mul(np.array([a, b]), finv)
                   for a in (window.lo[0], window.hi[0])
                   for b in (window.lo[1], window.hi[1])]
        corners = np.vstack([corners, [window.lo, window.hi]])
        lo = corners.min(axis=0)
        hi = corners.max(axis=0) + 1e-9
        sim_window = Window(carrier, lo, hi)

    def trial(rng, i):
        cfg = sample_poisson(carrier, sim_window, t, rng)
        n_direct = int(window.contains(cfg.points).sum()) if cfg.n else 0
        if cfg.n:
            shifted = np.vstack([carrier.mul(x, f) for x in cfg.points])
            n_shift = int(window.contains(shifted).sum())
        else:
            n_shift = 0
        return {"count": (n_direct + n_shift, 1)}

    moments, _ = accumulate_trials(n_trials, trial, seed=seed,
                                   experiment="nonunimodular", threads=threads)
    m = moments["count"]
    expected = t * (lam_u + lam_uf)
    unimodular_prediction = 2.0 * t * lam_u
    match = StatReport.from_moments("nonunimodular.count_vs_translate_volumes",
                                    m, reference=expected, z_threshold=z_threshold)
    deviates = StatReport.from_moments("nonunimodular.departs_unimodular_prediction",
                                       m, reference=unimodular_prediction,
                                       z_threshold=5.0,
                                       invert=abs(lam_uf - lam_u) > 1e-9 * max(lam_u, 1.0))
    return [match, deviates]
