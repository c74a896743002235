"""Artifact serialization: JSONL configuration and graph dumps, CSV
reports, clumping JSON, and PGM rasters of allocations.

Floats are written with 17 significant digits so every dump round-trips
bit-exactly.
"""

from __future__ import annotations

import json
from typing import Iterable

import numpy as np

from .errors import UsageError
from .geometry import AffineLine, EuclideanBox, FlatTorus, Window
from .process import Configuration, MarkedConfiguration, UNIT_INTERVAL
from .factor import FactorGraph
from .allocation import Allocation
from .clumping import ClumpingSequence
from .stats import StatReport

CSV_HEADER = "experiment,statistic,estimate,stderr,n,reference,z,pass"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def carrier_to_dict(carrier) -> dict:
    if isinstance(carrier, FlatTorus):
        return {"kind": "flat_torus", "dim": carrier.dim, "side": _fmt(carrier.side)}
    if isinstance(carrier, EuclideanBox):
        return {"kind": "euclidean_box", "dim": carrier.dim}
    if isinstance(carrier, AffineLine):
        return {"kind": "affine_line"}
    raise UsageError(f"unknown carrier {carrier!r}")


def carrier_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "flat_torus":
        return FlatTorus(int(d["dim"]), float(d["side"]))
    if kind == "euclidean_box":
        return EuclideanBox(int(d["dim"]))
    if kind == "affine_line":
        return AffineLine()
    raise UsageError(f"unknown carrier kind {kind!r}")


def configuration_to_json(c: Configuration, marks=None, space=None) -> str:
    obj = {
        "carrier": carrier_to_dict(c.carrier),
        "points": [[_fmt(v) for v in row] for row in c.points],
    }
    # the full torus window is implied by the carrier; other regions are state
    if not (isinstance(c.carrier, FlatTorus) and c.window == c.carrier.full_window()):
        obj["window"] = {"lo": [_fmt(v) for v in c.window.lo],
                         "hi": [_fmt(v) for v in c.window.hi]}
    if marks is not None:
        if space == UNIT_INTERVAL:
            obj["marks"] = [_fmt(m) for m in np.asarray(marks, dtype=float)]
        else:
            obj["marks"] = list(np.asarray(marks).tolist())
        obj["mark_space"] = list(space) if isinstance(space, tuple) else space
    return json.dumps(obj, separators=(",", ":"))


def marked_configuration_to_json(mc: MarkedConfiguration) -> str:
    return configuration_to_json(mc.base, mc.marks, mc.space)


def configuration_from_json(line: str):
    obj = json.loads(line)
    carrier = carrier_from_dict(obj["carrier"])
    if "window" in obj:
        window = Window(carrier,
                        np.asarray([float(v) for v in obj["window"]["lo"]]),
                        np.asarray([float(v) for v in obj["window"]["hi"]]))
    elif isinstance(carrier, FlatTorus):
        window = carrier.full_window()
    else:
        raise UsageError("non-torus dumps need an explicit window")
    pts = np.asarray([[float(v) for v in row] for row in obj["points"]],
                     dtype=float).reshape(-1, carrier.dim)
    cfg = Configuration(carrier, window, pts)
    if "marks" in obj:
        space = obj.get("mark_space")
        space = UNIT_INTERVAL if space == UNIT_INTERVAL else tuple(space)
        if space == UNIT_INTERVAL:
            marks = np.asarray([float(v) for v in obj["marks"]])
        else:
            marks = np.asarray(obj["marks"])
        return MarkedConfiguration(cfg, marks, space)
    return cfg


def dump_configurations(path, configs: Iterable) -> None:
    with open(path, "w") as fh:
        for c in configs:
            if isinstance(c, MarkedConfiguration):
                fh.write(marked_configuration_to_json(c) + "\n")
            else:
                fh.write(configuration_to_json(c) + "\n")


def factor_graph_to_json(g: FactorGraph) -> str:
    return json.dumps({
        "points": [[_fmt(v) for v in row] for row in g.base.points],
        "edges": [[int(a), int(b)] for a, b in g.edges],
    }, separators=(",", ":"))


def clumping_to_json(s: ClumpingSequence) -> str:
    return json.dumps(
        {"levels": [[list(cl) for cl in level] for level in s.levels]},
        separators=(",", ":"))


def report_csv_rows(experiment: str, reports: Iterable[StatReport]) -> list[str]:
    rows = []
    for r in reports:
        ref = "none" if r.reference is None else _fmt(r.reference)
        rows.append(",".join([
            experiment, r.name, _fmt(r.estimate), _fmt(r.stderr), str(r.n),
            ref, _fmt(r.z), "true" if r.passed else "false"]))
    return rows


def write_report_csv(path, named_reports: Iterable[tuple[str, Iterable[StatReport]]]) -> None:
    lines = [CSV_HEADER]
    for experiment, reports in named_reports:
        lines.extend(report_csv_rows(experiment, reports))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_allocation_pgm(path, alloc: Allocation) -> None:
    """ASCII PGM of owner indices; unclaimed cells are 0, owners are 1-based."""
    if len(alloc.grid_shape) != 2:
        raise UsageError("PGM rasters are 2-dimensional")
    grid = alloc.owner.reshape(alloc.grid_shape) + 1
    maxval = max(1, alloc.base.n)
    lines = ["P2", f"{alloc.grid_shape[1]} {alloc.grid_shape[0]}", str(maxval)]
    for row in grid:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def allocation_sidecar_json(alloc: Allocation) -> str:
    vols = alloc.volumes()
    return json.dumps({
        "points": [[_fmt(v) for v in row] for row in alloc.base.points],
        "volumes": [_fmt(v) for v in vols],
        "capacity": _fmt(alloc.capacity),
        "cell_side": _fmt(alloc.cell_side),
        "unclaimed_volume": _fmt(alloc.unclaimed_volume),
        "converged": alloc.converged,
        "rounds_used": alloc.rounds_used,
    }, separators=(",", ":"))
