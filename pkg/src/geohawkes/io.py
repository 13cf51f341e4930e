"""Dataset and model serialization: trace CSV, params JSON, experiment config."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import HyperParams, ModelParams, Region, Trace, VenueSet

TRACE_HEADER = ["user_id", "timestamp", "x", "y", "venue_id", "category"]
TIME_SCALES = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0, "days": 86400.0}
EARTH_RADIUS_KM = 6371.0


def _time_divisor(time_scale) -> float:
    if isinstance(time_scale, str):
        if time_scale not in TIME_SCALES:
            raise ValueError(f"unknown time scale {time_scale!r}")
        return TIME_SCALES[time_scale]
    div = float(time_scale)
    if div <= 0:
        raise ValueError("time scale must be positive")
    return div


def load_trace(csv_path, time_scale="hours", coords: str = "planar",
               region_pad: float = 0.0):
    """Read a check-in CSV into a Trace plus the dense index mappings.

    Expected header: ``user_id,timestamp,x,y,venue_id,category``.  Users,
    venues and categories are re-indexed densely (sorted by original label);
    timestamps are shifted to start at 0 and divided by the time scale.
    ``coords="lonlat"`` applies an equirectangular projection (km) about the
    dataset centroid.  Unsorted rows are sorted with a warning; malformed rows
    raise with their line number.
    """
    csv_path = str(csv_path)
    div = _time_divisor(time_scale)
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != TRACE_HEADER:
            raise ValueError(f"{csv_path}: expected header {','.join(TRACE_HEADER)}")
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise ValueError(f"{csv_path}: line {ln}: expected 6 columns")
            user, ts, x, y, vid, cat = (c.strip() for c in row)
            try:
                rows.append((user, float(ts), float(x), float(y), vid, cat))
            except ValueError:
                raise ValueError(f"{csv_path}: line {ln}: non-numeric field")

    users = sorted({r[0] for r in rows})
    vids = sorted({r[4] for r in rows})
    cats = sorted({r[5] for r in rows})
    user_of = {u: i for i, u in enumerate(users)}
    vid_of = {v: i for i, v in enumerate(vids)}
    cat_of = {c: i for i, c in enumerate(cats)}

    venue_xy = np.zeros((len(vids), 2))
    venue_cat = np.full(len(vids), -1, dtype=int)
    seen = {}
    for user, ts, x, y, vid, cat in rows:
        j = vid_of[vid]
        if vid in seen:
            px, py, pc = seen[vid]
            if (px, py, pc) != (x, y, cat):
                raise ValueError(
                    f"{csv_path}: venue {vid!r} has conflicting coordinates "
                    "or category")
        else:
            seen[vid] = (x, y, cat)
            venue_xy[j] = (x, y)
            venue_cat[j] = cat_of[cat]

    if coords == "lonlat" and rows:
        lat0 = math.radians(np.mean(venue_xy[:, 1]))
        venue_xy = np.column_stack([
            EARTH_RADIUS_KM * math.cos(lat0) * np.radians(venue_xy[:, 0]),
            EARTH_RADIUS_KM * np.radians(venue_xy[:, 1]),
        ])
    elif coords != "planar":
        raise ValueError(f"unknown coordinate mode {coords!r}")

    if rows:
        ts0 = min(r[1] for r in rows)
        times = np.array([(r[1] - ts0) / div for r in rows])
        order = np.argsort(times, kind="stable")
        if np.any(np.diff(times) < 0):
            warnings.warn(f"{csv_path}: rows were not sorted by timestamp")
        times = times[order]
        ev_users = np.array([user_of[rows[i][0]] for i in order])
        ev_vids = np.array([vid_of[rows[i][4]] for i in order])
        t_end = max(float(times[-1]), 1e-9)
        x_min, y_min = venue_xy.min(axis=0)
        x_max, y_max = venue_xy.max(axis=0)
    else:
        times = np.empty(0)
        ev_users = np.empty(0, dtype=int)
        ev_vids = np.empty(0, dtype=int)
        t_end, x_min, x_max, y_min, y_max = 1.0, 0.0, 1.0, 0.0, 1.0
    pad_x = region_pad if x_max > x_min else max(region_pad, 0.5)
    pad_y = region_pad if y_max > y_min else max(region_pad, 0.5)
    region = Region(t_end, x_min - pad_x, x_max + pad_x,
                    y_min - pad_y, y_max + pad_y)
    venues = VenueSet(venue_xy, np.maximum(venue_cat, 0))
    trace = Trace(times, ev_vids, ev_users, venues, region,
                  max(len(users), 1), max(len(cats), 1))
    mappings = {"users": users, "venues": vids, "categories": cats}
    return trace, mappings


def save_trace(trace: Trace, path, mappings: Optional[dict] = None):
    """Write the canonical CSV form (dense indices, model-unit timestamps)."""
    def label(kind, idx):
        if mappings and kind in mappings:
            return mappings[kind][idx]
        return str(idx)

    cats = trace.categories
    with open(str(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(TRACE_HEADER)
        for n in range(trace.n_events):
            vid = int(trace.venue_ids[n])
            out.writerow([
                label("users", int(trace.users[n])),
                repr(float(trace.times[n])),
                repr(float(trace.venues.xy[vid, 0])),
                repr(float(trace.venues.xy[vid, 1])),
                label("venues", vid),
                label("categories", int(cats[n])),
            ])


def silverman_bandwidths(trace: Trace, min_events: int = 2) -> np.ndarray:
    """Per-user spatial bandwidth by a 2-D Silverman rule.

    h_i = sigma_i * n_i^(-1/6), where sigma_i is the mean of the per-axis
    standard deviations of user i's check-in coordinates.  Users with fewer
    than two check-ins (or zero spread) fall back to the global bandwidth
    computed the same way over all events.
    """
    xy = trace.xy
    n = trace.n_events
    if n >= 2:
        global_sigma = float(np.mean(xy.std(axis=0)))
        global_h = global_sigma * n ** (-1.0 / 6.0)
    else:
        global_h = 0.0
    if global_h <= 0:
        global_h = 1.0
    out = np.full(trace.n_users, global_h)
    for u in range(trace.n_users):
        sel = trace.users == u
        n_u = int(sel.sum())
        if n_u >= min_events:
            sigma = float(np.mean(xy[sel].std(axis=0)))
            if sigma > 0:
                out[u] = sigma * n_u ** (-1.0 / 6.0)
    return out


# ---------------------------------------------------------------------------
# model params and hyper params JSON
# ---------------------------------------------------------------------------

def params_to_dict(params: ModelParams) -> dict:
    return {k: getattr(params, k).tolist()
            for k in ("mu", "eta", "A", "theta", "pi", "phi")}


def params_from_dict(d: dict) -> ModelParams:
    return ModelParams(**{k: np.array(d[k]) for k in
                          ("mu", "eta", "A", "theta", "pi", "phi")})


def save_params(params: ModelParams, path):
    with open(str(path), "w") as fh:
        json.dump(params_to_dict(params), fh, sort_keys=True)
        fh.write("\n")


def load_params(path) -> ModelParams:
    with open(str(path)) as fh:
        return params_from_dict(json.load(fh))


def hyper_to_dict(hyper: HyperParams) -> dict:
    d = dict(hyper.__dict__)
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            d[k] = v.tolist()
    return d


def hyper_from_dict(d: dict) -> HyperParams:
    d = dict(d)
    for k in ("h", "theta0"):
        if isinstance(d.get(k), list):
            d[k] = np.array(d[k])
    return HyperParams(**d)


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One JSON document configuring every command; defaults are embedded."""

    seed: int = 0
    deterministic: bool = True
    outdir: str = "out"
    figures: bool = True
    trace_csv: Optional[str] = None
    embeddings: Optional[str] = None
    model_json: Optional[str] = None
    time_scale: object = "hours"
    coords: str = "planar"
    preset: Optional[str] = None          # e.g. "table2" for the synthetic benchmark
    hyper: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    fit: dict = field(default_factory=lambda: {
        "freeze": [], "no_influence": False, "no_base": False,
        "no_category": False, "init": "default"})
    predict: dict = field(default_factory=lambda: {
        "ks": [5, 10, 20, 50], "train_fraction": 0.8,
        "variants": ["full"]})
    communities: dict = field(default_factory=lambda: {
        "k_cats": [10, 50, 100], "soft": False, "train_fraction": 0.8})
    export: dict = field(default_factory=lambda: {
        "thresholds": [0.5, 0.7, 0.9], "formats": ["graphml", "csv"]})

    @staticmethod
    def load(path) -> "ExperimentConfig":
        with open(str(path)) as fh:
            raw = json.load(fh)
        cfg = ExperimentConfig()
        for k, v in raw.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            if isinstance(getattr(cfg, k), dict) and isinstance(v, dict):
                merged = dict(getattr(cfg, k))
                merged.update(v)
                setattr(cfg, k, merged)
            else:
                setattr(cfg, k, v)
        cfg.validate_paths()
        return cfg

    def validate_paths(self):
        for key in ("trace_csv", "embeddings", "model_json"):
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"config {key}: no such file {p!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path):
        with open(str(path), "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def hyper_params(self, trace: Optional[Trace] = None) -> HyperParams:
        kw = dict(self.hyper)
        if isinstance(kw.get("h"), list):
            kw["h"] = np.array(kw["h"])
        if isinstance(kw.get("theta0"), list):
            kw["theta0"] = np.array(kw["theta0"])
        kw.setdefault("seed", self.seed)
        if trace is not None and kw.get("h") is None:
            kw["h"] = silverman_bandwidths(trace)
        return HyperParams(**kw)


def write_csv(path, header, rows):
    with open(str(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)


def write_json(path, obj):
    with open(str(path), "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")
