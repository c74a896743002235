"""Command line harness: strict JSON configs, deterministic parallel runs,
CSV reports, and artifact dumps.

Exit status: 0 when every report passes, 1 on a statistical failure, 2 on
a configuration or usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .allocation import (balanced_allocation, check_extra_head,
                         check_voronoi_palm_volume)
from .clumping import build_clumping, path_order, verify_clumping, z_line_factor
from .errors import UsageError
from .factor import (ArrowRule, BINARY_MARKS, LocalEvent, LocalMark, MINUS,
                     PLUS, TransportRule, constant_thickening, delta_thinning,
                     independent_thinning, local_decode_marks,
                     local_encode_marks)
from .geometry import AffineLine, FlatTorus, Window
from .palm import (ClippedFunction, check_clmm, check_degree_balance,
                   check_mecke_slivnyak, check_mtp, check_nonunimodular_thickening,
                   check_palm_colouring, check_palm_thickening,
                   check_palm_thinning)
from .process import (ProcessSpec, UNIT_INTERVAL, attach_iid_marks,
                      make_sampler, sample_poisson)
from .rng import trial_rng
from .serialize import (allocation_sidecar_json, clumping_to_json,
                        dump_configurations, factor_graph_to_json,
                        write_allocation_pgm, write_report_csv)
from .stats import StatReport, accumulate_trials, chi_square_gof


class ConfigError(UsageError):
    pass


# ------------------------------------------------------------- config

_GROUP_KEYS = {"kind", "dim", "side"}
_PROCESS_KEYS = {"kind", "intensity", "spacing", "delta", "offsets"}
_EXPERIMENT_KEYS = {"name", "radii", "r_obs", "nn_cap", "alpha", "z_threshold",
                    "delta", "p", "offsets", "grid_divisions", "eps",
                    "max_rounds", "radius", "window", "f"}
_OUTPUT_KEYS = {"dir", "dumps"}
_TOP_KEYS = {"group", "process", "experiment", "trials", "seed", "output", "threads"}


def _check_keys(section: dict, allowed: set, path: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown field '{sorted(unknown)[0]}' in {path}")


def default_config(experiment: str) -> dict:
    return {
        "group": {"kind": "flat_torus", "dim": 2, "side": 10.0},
        "process": {"kind": "poisson", "intensity": 1.0},
        "experiment": {"name": experiment},
        "trials": _DEFAULT_TRIALS.get(experiment, 1000),
        "seed": 7,
        "threads": 1,
        "output": {"dir": "palmlab_out", "dumps": False},
    }


_DEFAULT_TRIALS = {
    "sample": 10,
    "poisson": 4000,
    "mecke": 2500,
    "clmm": 2500,
    "mtp": 150,
    "degrees": 150,
    "thinning": 2500,
    "thickening": 2500,
    "nonunimodular": 4000,
    "palm-calculus": 1500,
    "alloc": 1,
    "extra-head": 200,
    "voronoi-volume": 100,
    "clump": 200,
    "zline": 50,
    "encode-marks": 100,
}

_PAPER_SCALE_TRIALS = {
    "poisson": 10000,
    "mecke": 10000,
    "clmm": 10000,
    "mtp": 150,
    "degrees": 150,
    "thinning": 10000,
    "thickening": 10000,
    "nonunimodular": 10000,
    "palm-calculus": 10000,
    "extra-head": 1000,
    "voronoi-volume": 100,
    "clump": 1000,
    "zline": 1000,
    "encode-marks": 1000,
}


def load_config(experiment: str, config_path: str | None, overrides: dict) -> dict:
    cfg = default_config(experiment)
    if config_path is not None:
        with open(config_path) as fh:
            text = fh.read()
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"malformed JSON in {config_path}: line {exc.lineno} "
                f"column {exc.colno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys(user, _TOP_KEYS, "config")
        for key in ("group", "process", "experiment", "output"):
            if key in user:
                if not isinstance(user[key], dict):
                    raise ConfigError(f"config.{key} must be an object")
                cfg[key].update(user[key])
        for key in ("trials", "seed", "threads"):
            if key in user:
                cfg[key] = user[key]
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    _check_keys(cfg["group"], _GROUP_KEYS, "config.group")
    _check_keys(cfg["process"], _PROCESS_KEYS, "config.process")
    _check_keys(cfg["experiment"], _EXPERIMENT_KEYS, "config.experiment")
    _check_keys(cfg["output"], _OUTPUT_KEYS, "config.output")
    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        raise ConfigError("config.trials must be a positive integer")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("config.seed must be an integer")
    _validate_ranges(cfg)
    return cfg


def _validate_ranges(cfg: dict):
    group = cfg["group"]
    if group.get("kind") == "flat_torus":
        side = float(group.get("side", 10.0))
        exp = cfg["experiment"]
        for key in ("radii",):
            for r in exp.get(key, []) or []:
                if r >= side / 4:
                    raise ConfigError(f"experiment.{key} entries must be < side/4")
        for key in ("r_obs", "delta", "radius"):
            if key in exp and exp[key] is not None and exp[key] >= side / 4:
                raise ConfigError(f"experiment.{key} must be < side/4")
        proc = cfg["process"]
        if proc.get("kind") in ("thinned", "thickened") and \
                float(proc.get("delta", 0.5)) >= side / 4:
            raise ConfigError("process.delta must be < side/4")


def _carrier(cfg: dict):
    group = cfg["group"]
    kind = group.get("kind", "flat_torus")
    if kind == "flat_torus":
        return FlatTorus(int(group.get("dim", 2)), float(group.get("side", 10.0)))
    if kind == "affine_line":
        return AffineLine()
    raise ConfigError(f"unsupported group kind {kind!r}")


def _process_spec(cfg: dict) -> ProcessSpec:
    proc = cfg["process"]
    offsets = tuple(tuple(float(v) for v in off) for off in proc.get("offsets", ()))
    return ProcessSpec(proc.get("kind", "poisson"),
                       intensity=float(proc.get("intensity", 1.0)),
                       spacing=float(proc.get("spacing", 2.0)),
                       delta=float(proc.get("delta", 0.5)),
                       offsets=offsets)


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# -------------------------------------------------------------- events

def isolation_event(delta: float) -> LocalEvent:
    def fn(view):
        d = view.distances_from_root()
        return bool(len(d) == 0 or d.min() > delta)
    return LocalEvent(radius=delta, fn=fn, name=f"isolated[{delta}]")


def isolation_mark(delta: float) -> LocalMark:
    def fn(view):
        d = view.distances_from_root()
        return int(len(d) == 0 or d.min() > delta)
    return LocalMark(radius=delta, fn=fn, name=f"isolated[{delta}]")


def nearest_neighbor_rule(radius: float) -> ArrowRule:
    def fn(view, target_rel):
        d = view.distances_from_root()
        if len(d) == 0:
            return False
        best = d.min()
        others = view.others()
        cands = others[d == best]
        chosen = min(map(tuple, cands.tolist()))
        return tuple(target_rel.tolist()) == chosen
    return ArrowRule(radius=radius, fn=fn, name="nearest_neighbor")


def nearest_neighbor_unit_mass(radius: float) -> TransportRule:
    rule = nearest_neighbor_rule(radius)
    return TransportRule(radius=radius, fn=lambda view, rel: float(rule(view, rel)),
                         name="nearest_neighbor_unit")


def indicator_function(support: Window, radius: float = 0.5) -> ClippedFunction:
    return ClippedFunction(
        name="indicator", radius=radius, support=support,
        fn=lambda x, view: 1.0,
        batch=lambda xs, view: np.ones(len(xs)))


def isolated_indicator_function(support: Window, delta: float = 0.5) -> ClippedFunction:
    def fn(x, view):
        d = view.distances_from_root()
        return float(len(d) == 0 or d.min() > delta)

    def batch(xs, view):
        d = view.distances_from_root()
        val = float(len(d) == 0 or d.min() > delta)
        return np.full(len(xs), val)

    return ClippedFunction(name="isolated_indicator", radius=delta,
                           support=support, fn=fn, batch=batch)


def snapped_support(carrier: FlatTorus, grid_divisions: int) -> Window:
    # support window aligned to the quadrature grid (side/4 on each axis)
    h = carrier.side / grid_divisions
    side = (grid_divisions // 4) * h
    return Window(carrier, np.zeros(carrier.dim), np.full(carrier.dim, side))


# --------------------------------------------------------- experiments

def run_poisson_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    window = carrier.full_window()
    seed, trials, threads = cfg["seed"], cfg["trials"], cfg.get("threads", 1)
    L = carrier.side
    windows = [Window(carrier, np.zeros(2), np.array([1.0, 1.0])),
               Window(carrier, np.zeros(2), np.array([2.0, 2.0])),
               Window(carrier, np.zeros(2), np.array([5.0, 5.0]))]
    u = Window(carrier, np.array([0.0, 0.0]), np.array([2.0, 2.0]))
    v = Window(carrier, np.array([5.0, 5.0]), np.array([7.0, 7.0]))
    cap = 64

    def hist_fn(rng, i):
        cfg_t = sample_poisson(carrier, window, t, rng)
        out = {}
        for k, w in enumerate(windows):
            c = min(int(w.contains(cfg_t.points).sum()) if cfg_t.n else 0, cap)
            inc = np.zeros(cap + 1, dtype=np.int64)
            inc[c] = 1
            out[f"w{k}"] = inc
        return out

    def corr_fn(rng, i):
        cfg_t = sample_poisson(carrier, window, t, rng)
        nu = int(u.contains(cfg_t.points).sum()) if cfg_t.n else 0
        nv = int(v.contains(cfg_t.points).sum()) if cfg_t.n else 0
        return {"nu": (nu, 1), "nv": (nv, 1), "nuv": (nu * nv, 1),
                "nu2": (nu * nu, 1), "nv2": (nv * nv, 1)}

    shapes = {f"w{k}": (cap + 1,) for k in range(len(windows))}
    moments, hists = accumulate_trials(
        trials, corr_fn, seed=seed, experiment="verify_poisson",
        threads=threads, hist_shapes=shapes, hist_fn=hist_fn)

    reports = []
    from scipy import stats as sps
    for k, w in enumerate(windows):
        lam = t * w.haar_volume
        ks = np.arange(cap + 1)
        expected = sps.poisson.pmf(ks, lam) * trials
        expected[-1] += sps.poisson.sf(cap, lam) * trials
        stat, p, dof = chi_square_gof(hists[f"w{k}"], expected)
        reports.append(StatReport.from_gof(
            f"poisson.count_gof[vol={w.haar_volume:g}]", stat, p, trials,
            dof=dof, alpha=cfg["experiment"].get("alpha", 0.01)))
    mean_u = moments["nu"].estimate
    mean_v = moments["nv"].estimate
    var_u = moments["nu2"].estimate - mean_u ** 2
    var_v = moments["nv2"].estimate - mean_v ** 2
    cov = moments["nuv"].estimate - mean_u * mean_v
    r = cov / math.sqrt(var_u * var_v) if var_u > 0 and var_v > 0 else 0.0
    se = 1.0 / math.sqrt(trials)
    z = r / se
    reports.append(StatReport("poisson.disjoint_count_correlation", r, se,
                              trials, 0.0, z, abs(z) <= 3.0))
    return [("verify-poisson", reports)]


def run_mecke_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    spec = _process_spec(cfg)
    exp = cfg["experiment"]
    radii = tuple(exp.get("radii", (0.5, 1.0, 2.0)))
    reports = check_mecke_slivnyak(
        spec.intensity, carrier.dim, carrier.side, cfg["trials"], radii,
        seed=cfg["seed"], process=spec, alpha=exp.get("alpha", 0.01),
        nn_cap=exp.get("nn_cap", 2.0), threads=cfg.get("threads", 1))
    return [("verify-mecke", reports)]


def run_clmm_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    divisions = int(exp.get("grid_divisions", 512))
    support = snapped_support(carrier, divisions)
    reports = []
    for f in (indicator_function(support),
              isolated_indicator_function(support, exp.get("delta", 0.5))):
        reports.append(check_clmm(f, t, carrier.dim, carrier.side, cfg["trials"],
                                  seed=cfg["seed"], grid_divisions=divisions,
                                  threads=cfg.get("threads", 1)))
    return [("verify-clmm", reports)]


def run_mtp_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    radius = cfg["experiment"].get("radius", 2.4)
    rule = nearest_neighbor_unit_mass(radius)
    rep = check_mtp(rule, t, carrier.dim, carrier.side, cfg["trials"],
                    seed=cfg["seed"], threads=cfg.get("threads", 1))
    return [("verify-mtp", [rep])]


def run_degrees_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    radius = cfg["experiment"].get("radius", 2.4)
    rule = nearest_neighbor_rule(radius)
    rep = check_degree_balance(rule, t, carrier.dim, carrier.side, cfg["trials"],
                               seed=cfg["seed"], threads=cfg.get("threads", 1))
    return [("verify-degrees", [rep])]


def run_thinning_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    p = float(exp.get("p", 0.25))
    delta = float(exp.get("delta", 0.5))
    seed, trials, threads = cfg["seed"], cfg["trials"], cfg.get("threads", 1)
    window = carrier.full_window()
    vol = window.haar_volume

    def trial(rng, i):
        base = sample_poisson(carrier, window, t, rng)
        marked = attach_iid_marks(base, UNIT_INTERVAL, rng)
        thinned = independent_thinning(marked, p)
        return {"intensity": (thinned.n, vol)}

    moments, _ = accumulate_trials(trials, trial, seed=seed,
                                   experiment="verify_thinning", threads=threads)
    reports = [StatReport.from_moments("independent_thinning.intensity",
                                       moments["intensity"], reference=p * t)]
    reports += check_palm_thinning(isolation_event(delta), t, carrier.dim,
                                   carrier.side, trials, seed=seed,
                                   alpha=exp.get("alpha", 0.01), threads=threads)
    return [("verify-thinning", reports)]


def run_thickening_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    delta = float(exp.get("delta", 0.5))
    offsets = exp.get("offsets") or [[0.1, 0.0]]
    reports = check_palm_thickening(offsets, t, carrier.dim, carrier.side,
                                    cfg["trials"], delta=delta, seed=cfg["seed"],
                                    alpha=exp.get("alpha", 0.01),
                                    threads=cfg.get("threads", 1))
    return [("verify-thickening", reports)]


def run_nonunimodular_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    exp = cfg["experiment"]
    t = float(cfg["process"].get("intensity", 20.0))
    affine = AffineLine()
    wspec = exp.get("window", {"lo": [1.0, 0.0], "hi": [2.0, 1.0]})
    window = Window(affine, np.asarray(wspec["lo"], dtype=float),
                    np.asarray(wspec["hi"], dtype=float))
    f = np.asarray(exp.get("f", [2.0, 0.0]), dtype=float)
    reports = check_nonunimodular_thickening(
        t, f, window, cfg["trials"], seed=cfg["seed"],
        threads=cfg.get("threads", 1))
    # unimodular control: the count ratio on the torus is exactly |F|
    torus = FlatTorus(2, 10.0)
    twindow = torus.full_window()
    offs = [np.array([0.1, 0.0])]
    fset = [torus.identity()] + offs

    def control(rng, i):
        base = delta_thinning(sample_poisson(torus, twindow, 1.0, rng), 0.5)
        if base.n == 0:
            return None
        thick = constant_thickening(base, fset)
        return {"ratio": (thick.n, base.n)}

    moments, _ = accumulate_trials(min(cfg["trials"], 500), control,
                                   seed=cfg["seed"], experiment="nonunimodular.control",
                                   threads=cfg.get("threads", 1))
    reports.append(StatReport.from_moments("nonunimodular.torus_control_ratio",
                                           moments["ratio"], reference=2.0))
    return [("verify-nonunimodular", reports)]


def run_palm_calculus_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    seed, trials, threads = cfg["seed"], cfg["trials"], cfg.get("threads", 1)
    delta = float(exp.get("delta", 0.5))
    out = []
    out += run_mecke_experiment(cfg)
    out += run_clmm_experiment(cfg)
    mtp_cfg = dict(cfg)
    mtp_cfg["trials"] = max(100, trials // 10)
    out += run_mtp_experiment(mtp_cfg)
    out += run_degrees_experiment(mtp_cfg)
    thin = check_palm_thinning(isolation_event(delta), t, carrier.dim,
                               carrier.side, trials, seed=seed,
                               alpha=exp.get("alpha", 0.01), threads=threads)
    colouring = check_palm_colouring(isolation_mark(delta), t, carrier.dim,
                                     carrier.side, max(200, trials // 5),
                                     seed=seed, threads=threads)
    thick = check_palm_thickening([[0.1, 0.0]], t, carrier.dim, carrier.side,
                                  trials, delta=delta, seed=seed,
                                  alpha=exp.get("alpha", 0.01), threads=threads)
    out.append(("verify-palm-calculus", thin + [colouring] + thick))
    return out


def run_sample_experiment(cfg: dict, out_dir: str) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    spec = _process_spec(cfg)
    window = carrier.full_window() if isinstance(carrier, FlatTorus) else None
    if window is None:
        raise ConfigError("sample dumps need a torus group")
    sampler = make_sampler(spec, carrier, window)
    configs = [sampler(trial_rng(cfg["seed"], "sample", i)) for i in range(cfg["trials"])]
    dump_configurations(os.path.join(out_dir, "configurations.jsonl"), configs)
    n_total = sum(c.n for c in configs)
    return [("sample", [StatReport("sample.dumped_points", float(n_total), 0.0,
                                   cfg["trials"], None, 0.0, True)])]


def run_alloc_experiment(cfg: dict, out_dir: str) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    divisions = int(exp.get("grid_divisions", 512))
    h = carrier.side / divisions
    eps = float(exp.get("eps", 0.01))
    max_rounds = int(exp.get("max_rounds", 500))
    rng = trial_rng(cfg["seed"], "alloc", 0)
    config = sample_poisson(carrier, carrier.full_window(), t, rng)
    alloc = balanced_allocation(config, h, eps, max_rounds)
    write_allocation_pgm(os.path.join(out_dir, "allocation.pgm"), alloc)
    with open(os.path.join(out_dir, "allocation.json"), "w") as fh:
        fh.write(allocation_sidecar_json(alloc) + "\n")
    vols = alloc.volumes()
    cell_vol = alloc.cell_volume
    ok_caps = bool((vols <= alloc.capacity + cell_vol + 1e-12).all())
    ok_deficit = bool((alloc.capacity - vols <= eps + 1e-12).all())
    ok_unclaimed = alloc.unclaimed_volume <= config.n * eps + 1e-12
    reports = [
        StatReport("alloc.converged", 1.0 if alloc.converged else 0.0, 0.0, 1,
                   1.0, 0.0, alloc.converged),
        StatReport("alloc.volumes_capped", 1.0 if ok_caps else 0.0, 0.0,
                   config.n, 1.0, 0.0, ok_caps),
        StatReport("alloc.deficits_at_most_eps", 1.0 if ok_deficit else 0.0, 0.0,
                   config.n, 1.0, 0.0, ok_deficit),
        StatReport("alloc.unclaimed_bounded", alloc.unclaimed_volume, 0.0, 1,
                   None, 0.0, ok_unclaimed),
    ]
    return [("alloc", reports)]


def run_extra_head_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    exp = cfg["experiment"]
    divisions = int(exp.get("grid_divisions", 512))
    reports = check_extra_head(t, carrier.dim, carrier.side,
                               carrier.side / divisions, cfg["trials"],
                               eps=float(exp.get("eps", 0.01)),
                               max_rounds=int(exp.get("max_rounds", 500)),
                               seed=cfg["seed"], alpha=exp.get("alpha", 0.01),
                               threads=cfg.get("threads", 1))
    return [("extra-head", reports)]


def run_voronoi_volume_experiment(cfg: dict) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    spec = _process_spec(cfg)
    exp = cfg["experiment"]
    divisions = int(exp.get("grid_divisions", 512))
    rep = check_voronoi_palm_volume(spec.intensity, carrier.dim, carrier.side,
                                    carrier.side / divisions, cfg["trials"],
                                    seed=cfg["seed"], process=spec,
                                    threads=cfg.get("threads", 1))
    return [("voronoi-volume", [rep])]


def run_clump_experiment(cfg: dict, out_dir: str) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    spec = _process_spec(cfg)
    sampler = make_sampler(spec, carrier, carrier.full_window())
    failures = 0
    last = None
    for i in range(cfg["trials"]):
        config = sampler(trial_rng(cfg["seed"], "clump", i))
        if config.n == 0:
            continue
        s = build_clumping(config)
        last = s
        if not verify_clumping(s).passed:
            failures += 1
    if last is not None and cfg["output"].get("dumps"):
        with open(os.path.join(out_dir, "clumping.json"), "w") as fh:
            fh.write(clumping_to_json(last) + "\n")
    rep = StatReport("clump.axioms", float(failures), 0.0, cfg["trials"], 0.0,
                     0.0 if failures == 0 else math.inf, failures == 0)
    return [("clump", [rep])]


def run_zline_experiment(cfg: dict, out_dir: str) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    spec = _process_spec(cfg)
    sampler = make_sampler(spec, carrier, carrier.full_window())
    failures = 0
    last = None
    for i in range(cfg["trials"]):
        config = sampler(trial_rng(cfg["seed"], "zline", i))
        if config.n < 2:
            continue
        g = z_line_factor(build_clumping(config))
        last = g
        try:
            path_order(g)
        except UsageError:
            failures += 1
    if last is not None and cfg["output"].get("dumps"):
        with open(os.path.join(out_dir, "zline.jsonl"), "w") as fh:
            fh.write(factor_graph_to_json(last) + "\n")
    rep = StatReport("zline.directed_path", float(failures), 0.0, cfg["trials"],
                     0.0, 0.0 if failures == 0 else math.inf, failures == 0)
    return [("zline", [rep])]


def run_encode_marks_experiment(cfg: dict, out_dir: str) -> list[tuple[str, list[StatReport]]]:
    carrier = _carrier(cfg)
    t = _process_spec(cfg).intensity
    delta = float(cfg["experiment"].get("delta", 0.5))
    failures = 0
    last = None
    for i in range(cfg["trials"]):
        rng = trial_rng(cfg["seed"], "encode_marks", i)
        base = delta_thinning(sample_poisson(carrier, carrier.full_window(), t, rng), delta)
        marks = np.asarray([PLUS if b else MINUS for b in rng.integers(0, 2, base.n)],
                           dtype=object)
        from .process import MarkedConfiguration
        mc = MarkedConfiguration(base, marks, BINARY_MARKS)
        encoded = local_encode_marks(mc, delta)
        last = encoded
        decoded = local_decode_marks(encoded, delta)
        if not (decoded.base == mc.base and
                list(decoded.marks.tolist()) == list(mc.marks.tolist())):
            failures += 1
    if last is not None and cfg["output"].get("dumps"):
        dump_configurations(os.path.join(out_dir, "encoded.jsonl"), [last])
    rep = StatReport("encode_marks.round_trip", float(failures), 0.0,
                     cfg["trials"], 0.0, 0.0 if failures == 0 else math.inf,
                     failures == 0)
    return [("encode-marks", [rep])]


_EXPERIMENTS = {
    "sample": ("sample", run_sample_experiment, True),
    "verify-poisson": ("poisson", run_poisson_experiment, False),
    "verify-mecke": ("mecke", run_mecke_experiment, False),
    "verify-clmm": ("clmm", run_clmm_experiment, False),
    "verify-mtp": ("mtp", run_mtp_experiment, False),
    "verify-degrees": ("degrees", run_degrees_experiment, False),
    "verify-thinning": ("thinning", run_thinning_experiment, False),
    "verify-thickening": ("thickening", run_thickening_experiment, False),
    "verify-nonunimodular": ("nonunimodular", run_nonunimodular_experiment, False),
    "verify-palm-calculus": ("palm-calculus", run_palm_calculus_experiment, False),
    "alloc": ("alloc", run_alloc_experiment, True),
    "extra-head": ("extra-head", run_extra_head_experiment, False),
    "voronoi-volume": ("voronoi-volume", run_voronoi_volume_experiment, False),
    "clump": ("clump", run_clump_experiment, True),
    "zline": ("zline", run_zline_experiment, True),
    "encode-marks": ("encode-marks", run_encode_marks_experiment, True),
}


def run(subcommand: str, cfg: dict) -> tuple[dict, int]:
    """Execute one experiment; returns (manifest, exit_code) and writes
    the CSV report, manifest, and any dumps under the output directory."""
    _, fn, wants_dir = _EXPERIMENTS[subcommand]
    out_dir = cfg["output"].get("dir", "palmlab_out")
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.monotonic()
    named_reports = fn(cfg, out_dir) if wants_dir else fn(cfg)
    wall = time.monotonic() - t0
    all_ok = all(r.passed for _, reports in named_reports for r in reports)
    write_report_csv(os.path.join(out_dir, "report.csv"), named_reports)
    manifest = {
        "config_hash": config_hash(cfg),
        "version": __version__,
        "wall_time_s": wall,
        "reports": [
            {"experiment": name, "statistic": r.name, "estimate": r.estimate,
             "stderr": r.stderr, "n": r.n, "reference": r.reference, "z": r.z,
             "pass": r.passed, "pvalue": r.pvalue, "alpha": r.alpha}
            for name, reports in named_reports for r in reports],
        "passed": all_ok,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest, 0 if all_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="palmlab",
        description="Simulation laboratory for invariant point processes")
    parser.add_argument("subcommand", choices=sorted(_EXPERIMENTS))
    parser.add_argument("--config", default=None, help="strict JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the acceptance-scale trial counts")
    parser.add_argument("--process", default=None,
                        choices=["poisson", "lattice", "thinned", "thickened"],
                        help="override the process kind")
    args = parser.parse_args(argv)

    try:
        exp_name = _EXPERIMENTS[args.subcommand][0]
        overrides = {"seed": args.seed, "trials": args.trials}
        if args.threads is not None:
            overrides["threads"] = args.threads
        elif os.environ.get("PALMLAB_THREADS"):
            overrides["threads"] = int(os.environ["PALMLAB_THREADS"])
        cfg = load_config(exp_name, args.config, overrides)
        if args.paper_scale and args.trials is None:
            cfg["trials"] = _PAPER_SCALE_TRIALS.get(exp_name, cfg["trials"])
        if args.process is not None:
            cfg["process"]["kind"] = args.process
        if args.out is not None:
            cfg["output"]["dir"] = args.out
        _, code = run(args.subcommand, cfg)
        return code
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
