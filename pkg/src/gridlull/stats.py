"""Climatology statistics, pixel-wise risk maps, and trend significance.

Rolling decadal means/standard deviations summarize yearly series the same
way the event record is summarized; risk maps count prolonged low combined-CF
events per grid cell; ensemble statistics reduce across climate-model
members; and trends are tested with an ordinary-least-squares slope t-test.
Sample (n-1) standard deviations are used throughout.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import (
    AxisMismatchError,
    InsufficientSpanError,
    MetaMismatchError,
    MissingFileError,
    TooFewMembersError,
    ValidationError,
)
from .aggregate import CfSeries
from .detect import detect_events

SCENARIOS = ("historical", "ssp245", "ssp585")


@dataclass(frozen=True)
class RiskMap:
    """Events per grid cell over a period of epoch seconds [start, end)."""

    lats: np.ndarray
    lons: np.ndarray
    counts: np.ndarray
    period: tuple

    def __post_init__(self):
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        counts = np.asarray(self.counts)
        if counts.shape != (lats.size, lons.size):
            raise ValidationError(
                f"counts shape {counts.shape} != {(lats.size, lons.size)}"
            )
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ValidationError("counts must be integers")
            counts = counts.astype(np.int64)
        if counts.size and counts.min() < 0:
            raise ValidationError("counts must be non-negative")
        start, end = self.period
        if not end > start:
            raise ValidationError("period end must be after start")
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "period", (int(start), int(end)))

    @property
    def period_years(self):
        return (self.period[1] - self.period[0]) / (365.25 * 86400.0)


def rolling_decadal(yearly, window_years=10):
    """Trailing rolling mean and sample std over a yearly series.

    Returns
    -------
    (means, stds)
        Arrays of length n - window + 1.

    Raises
    ------
    InsufficientSpanError
        Fewer points than the window.
    """
    yearly = np.asarray(yearly, dtype=np.float64)
    n = yearly.size
    w = int(window_years)
    if w < 2:
        raise ValidationError("window must cover at least 2 years")
    if n < w:
        raise InsufficientSpanError(f"{n} points < window of {w} years")
    windows = np.lib.stride_tricks.sliding_window_view(yearly, w)
    return windows.mean(axis=-1), windows.std(axis=-1, ddof=1)


def pixel_risk_map(cf_fields, shares, cfg, period, mixing="national_share"):
    """Count prolonged low combined-CF events per grid cell.

    Each cell's combined CF series mixes the per-technology CF fields and is
    run through the standard event detection; the map counts events whose
    start falls inside `period`.

    Parameters
    ----------
    cf_fields : mapping
        Technology -> CfField on a shared grid.
    shares : mapping
        Technology -> capacity share.  With `mixing="national_share"` every
        cell mixes technologies by these national shares; with
        `mixing="per_cell_resource"` each cell mixes by its own long-term
        mean resource instead.
    cfg : DetectionConfig
    period : (start_epoch_s, end_epoch_s)

    Returns
    -------
    RiskMap
    """
    techs = list(cf_fields)
    first = cf_fields[techs[0]]
    for tech in techs[1:]:
        f = cf_fields[tech]
        if not (np.array_equal(f.lats, first.lats)
                and np.array_equal(f.lons, first.lons)
                and np.array_equal(f.times, first.times)):
            raise AxisMismatchError("CF fields do not share axes")
    if mixing not in ("national_share", "per_cell_resource"):
        raise ValidationError(f"unknown mixing {mixing!r}")

    nt, ny, nx = first.shape
    stack = np.stack([cf_fields[t].values for t in techs])  # (K, t, y, x)
    if mixing == "national_share":
        w = np.array([shares[t] for t in techs], dtype=np.float64)
        w = w / w.sum()
        combined = np.tensordot(w, stack, axes=(0, 0))
    else:
        res = stack.mean(axis=1)                            # (K, y, x)
        denom = res.sum(axis=0)
        w = np.divide(res, denom, out=np.full_like(res, 1.0 / len(techs)),
                      where=denom > 0)
        combined = (w[:, None, :, :] * stack).sum(axis=0)
    combined = np.clip(combined, 0.0, 1.0)

    start, end = int(period[0]), int(period[1])
    counts = np.zeros((ny, nx), dtype=np.int64)
    for i in range(ny):
        for j in range(nx):
            series = CfSeries(first.times, combined[:, i, j])
            events = detect_events(series, cfg)
            counts[i, j] = sum(1 for ev in events if start <= ev.start < end)
    return RiskMap(first.lats, first.lons, counts, (start, end))


def ensemble_stats(members):
    """Elementwise mean/std/max/min across ensemble members.

    Parameters
    ----------
    members : sequence
        At least two arrays (or RiskMaps) of identical shape.

    Returns
    -------
    dict with keys "mean", "std", "max", "min".  Std uses ddof=1.
    """
    arrays = [
        m.counts.astype(np.float64) if isinstance(m, RiskMap)
        else np.asarray(m, dtype=np.float64)
        for m in members
    ]
    if len(arrays) < 2:
        raise TooFewMembersError(
            f"ensemble statistics need >= 2 members, got {len(arrays)}"
        )
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise AxisMismatchError("ensemble members differ in shape")
    stack = np.stack(arrays)
    return {
        "mean": stack.mean(axis=0),
        "std": stack.std(axis=0, ddof=1),
        "max": stack.max(axis=0),
        "min": stack.min(axis=0),
    }


def difference_map(a, b):
    """Per-cell difference of two risk maps in events per decade.

    Both maps are normalized by their own period length before subtraction,
    so periods of different lengths compare fairly.
    """
    if not (np.array_equal(a.lats, b.lats) and np.array_equal(a.lons, b.lons)):
        raise AxisMismatchError("risk maps are on different grids")
    rate_a = a.counts / a.period_years * 10.0
    rate_b = b.counts / b.period_years * 10.0
    return rate_a - rate_b


def trend_test(yearly, alpha=0.05):
    """OLS slope of a yearly series with a two-sided Student's t-test.

    Returns
    -------
    dict with keys "slope", "t_statistic", "p_value", "significant"
    (significant at level `alpha`, default 0.05).  A perfectly linear
    series with nonzero slope reports p = 0; a constant series reports
    slope 0, not significant.

    Raises
    ------
    InsufficientSpanError
        Fewer than 3 points (no residual degrees of freedom).
    """
    y = np.asarray(yearly, dtype=np.float64)
    n = y.size
    if n < 3:
        raise InsufficientSpanError(f"trend test needs >= 3 points, got {n}")
    t = np.arange(n, dtype=np.float64)
    t_c = t - t.mean()
    y_c = y - y.mean()
    sxx = np.dot(t_c, t_c)
    slope = np.dot(t_c, y_c) / sxx
    resid = y_c - slope * t_c
    ss_res = np.dot(resid, resid)
    df = n - 2
    if ss_res <= 0.0:
        # Perfect fit: infinitely significant unless the slope is zero too.
        t_stat = np.inf if slope != 0.0 else 0.0
        p = 0.0 if slope != 0.0 else 1.0
    else:
        se = np.sqrt(ss_res / df / sxx)
        t_stat = slope / se
        p = 2.0 * sps.t.sf(abs(t_stat), df)
    return {
        "slope": float(slope),
        "t_statistic": float(t_stat),
        "p_value": float(p),
        "significant": bool(p < alpha),
    }


def risk_map_to_csv(risk_map, path):
    """Write (lat, lon, count) rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "count"])
        for i, lat in enumerate(risk_map.lats):
            for j, lon in enumerate(risk_map.lons):
                writer.writerow([f"{lat:.6f}", f"{lon:.6f}",
                                 int(risk_map.counts[i, j])])


def save_risk_map(risk_map, path):
    """Persist a risk map as a gridpack-style directory (counts as f32le).

    The container layout mirrors the weather gridpack (meta.json +
    data.f32le) but declares variable "event_count", so the strict weather
    loader rejects it; use `load_risk_map`.
    """
    os.makedirs(path, exist_ok=True)
    meta = {
        "variable": "event_count",
        "units": "events",
        "period_start_epoch_s": risk_map.period[0],
        "period_end_epoch_s": risk_map.period[1],
        "lats": risk_map.lats.tolist(),
        "lons": risk_map.lons.tolist(),
        "dtype": "f32le",
        "order": "lat,lon",
    }
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = np.ascontiguousarray(risk_map.counts, dtype="<f4")
    with open(os.path.join(path, "data.f32le"), "wb") as fh:
        fh.write(payload.tobytes())


def load_risk_map(path):
    """Load a risk map written by `save_risk_map`."""
    meta_path = os.path.join(path, "meta.json")
    data_path = os.path.join(path, "data.f32le")
    if not os.path.isfile(meta_path) or not os.path.isfile(data_path):
        raise MissingFileError(f"no risk map at {path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("variable") != "event_count":
        raise MetaMismatchError("not a risk-map container")
    lats = np.asarray(meta["lats"], dtype=np.float64)
    lons = np.asarray(meta["lons"], dtype=np.float64)
    expected = lats.size * lons.size * 4
    if os.path.getsize(data_path) != expected:
        raise MetaMismatchError(
            f"payload is {os.path.getsize(data_path)} bytes, expected {expected}"
        )
    counts = np.fromfile(data_path, dtype="<f4").reshape(lats.size, lons.size)
    return RiskMap(lats, lons, counts.astype(np.int64),
                   (meta["period_start_epoch_s"], meta["period_end_epoch_s"]))


def load_ensemble_manifest(path):
    """Read an ensemble manifest JSON: member ids, scenario, member paths.

    Format: {"scenario": "historical|ssp245|ssp585",
             "members": {"<id>": "<path>", ...}}
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    scenario = raw.get("scenario")
    if scenario not in SCENARIOS:
        raise ValidationError(
            f"scenario must be one of {SCENARIOS}, got {scenario!r}"
        )
    members = raw.get("members")
    if not isinstance(members, dict) or not members:
        raise ValidationError("manifest needs a non-empty members mapping")
    return scenario, dict(members)
