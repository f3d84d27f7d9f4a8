"""Plot-ready CSV tables derived from a written trace (CSV + JSON sidecar).

``displacement-time``: one row per tick, one column per vehicle holding its
arclength along the ego's original route.

``path-xy``: long format ``layer,id,x_m,y_m`` with the original route, the
first deformed path of every Avoid episode, obstacle footprints at that
moment and the driven ego path.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import CSV_HEADER
from .errors import CorruptTrace, UnknownKind
from .path_model import fit_path, project_to_path
from .vehicle import VehicleParams, VehiclePose, footprint

KINDS = ("displacement-time", "path-xy")


def _sidecar_for(trace_csv: Path) -> Path:
    return trace_csv.with_suffix(".json")


def load_trace_files(trace_csv: str | Path) -> tuple[dict[int, np.ndarray], list[float], dict]:
    """Per-vehicle (T, 4) arrays of x, y, heading, speed; the tick times; the sidecar."""
    path = Path(trace_csv)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise CorruptTrace(f"cannot read trace {path}: {exc.strerror or exc}") from None
    if not lines or lines[0].strip() != CSV_HEADER:
        raise CorruptTrace(f"{path} does not start with the trace header")
    rows: dict[int, list] = {}
    times: list[float] = []
    try:
        for rec in csv.DictReader(lines):
            t = float(rec["time_s"])
            if not times or t != times[-1]:
                times.append(t)
            vid = int(rec["vehicle_id"])
            rows.setdefault(vid, []).append(
                (float(rec["x_m"]), float(rec["y_m"]), float(rec["heading_rad"]), float(rec["speed_mps"])))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptTrace(f"{path}: malformed row ({exc})") from None
    if not times:
        raise CorruptTrace(f"{path} holds no ticks")
    if any(len(r) != len(times) for r in rows.values()):
        raise CorruptTrace(f"{path}: vehicles have different tick counts")
    try:
        sidecar = json.loads(_sidecar_for(path).read_text())
    except (OSError, ValueError) as exc:
        raise CorruptTrace(f"missing or unreadable sidecar for {path}: {exc}") from None
    return {vid: np.array(r) for vid, r in rows.items()}, times, sidecar


def displacement_time(trace_csv: str | Path) -> tuple[list[str], list[list[float]]]:
    states, times, sidecar = load_trace_files(trace_csv)
    route = fit_path(np.array(sidecar["route"]))
    ids = sorted(states)
    header = ["time_s"] + [f"s_{vid}_m" for vid in ids]
    rows = []
    for k, t in enumerate(times):
        rows.append([t] + [project_to_path(route, states[vid][k, :2]).s for vid in ids])
    return header, rows


def path_xy(trace_csv: str | Path) -> tuple[list[str], list[list]]:
    states, _, sidecar = load_trace_files(trace_csv)
    header = ["layer", "id", "x_m", "y_m"]
    rows: list[list] = [["original", 0, x, y] for x, y in sidecar["route"]]
    dims = {v["id"]: (v["length_m"], v["width_m"]) for v in sidecar["vehicles"]}
    times = [round(t, 6) for t in _times_of(sidecar, states)]
    for n, ep in enumerate(sidecar.get("avoid_episodes", [])):
        if not ep["dumps"]:
            continue
        dump = ep["dumps"][0]
        rows += [["deformed", n, x, y] for x, y in dump["path"]]
        k = _nearest(times, dump["time_s"])
        for obs in dump["obstacles"]:
            vid = obs["vehicle_id"]
            if vid not in states:
                continue
            x, y, h, v = states[vid][k]
            length, width = dims.get(vid, (4.5, 1.9))
            corners = footprint(VehiclePose(x, y, h, v), VehicleParams(length=length, width=width))
            rows += [["obstacle", vid, cx, cy] for cx, cy in np.vstack([corners, corners[:1]])]
    rows += [["driven", 0, x, y] for x, y in states[0][:, :2]]
    return header, rows


def _times_of(sidecar: dict, states: dict) -> list[float]:
    n = len(next(iter(states.values())))
    return [k * sidecar["dt_s"] for k in range(n)]


def _nearest(times: list[float], t: float) -> int:
    return min(range(len(times)), key=lambda k: abs(times[k] - t))


def _fmt(v) -> str:
    if isinstance(v, float):
        return "none" if math.isinf(v) else f"{v:.6f}"
    return str(v)


def write_plotdata(trace_csv: str | Path, kind: str, out: Optional[str | Path] = None) -> Path:
    """Write the requested table next to the trace (or to ``out``); nothing is written on error."""
    if kind not in KINDS:
        raise UnknownKind(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    trace_csv = Path(trace_csv)
    header, rows = displacement_time(trace_csv) if kind == "displacement-time" else path_xy(trace_csv)
    target = Path(out) if out else trace_csv.with_name(f"{trace_csv.stem}_{kind}.csv")
    text = ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
    target.write_text(text)
    return target
