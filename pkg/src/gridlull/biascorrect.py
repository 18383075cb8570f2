"""Empirical quantile-mapping bias correction.

A fitted map matches the empirical quantiles of a model sample to those of a
reference sample at evenly spaced probability levels (endpoints included)
and corrects new values by piecewise-linear interpolation between the
matched quantiles.  Outside the observed source range the *correction* is
extrapolated as a constant (the edge offset), never the value itself, which
keeps physically bounded variables bounded.

Maps can be fitted pooled over a whole field or per grid cell, optionally
stratified by calendar month.  The transfer function is nondecreasing, so
input ordering is always preserved.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    AxisMismatchError,
    EmptySampleError,
    ValidationError,
)
from .gridstore import GridField


@dataclass(frozen=True)
class QuantileMap:
    """Matched source/target quantiles at evenly spaced levels."""

    levels: np.ndarray
    source_quantiles: np.ndarray
    target_quantiles: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        src = np.asarray(self.source_quantiles, dtype=np.float64)
        tgt = np.asarray(self.target_quantiles, dtype=np.float64)
        if not (levels.shape == src.shape == tgt.shape) or levels.ndim != 1:
            raise ValidationError("quantile vectors must share a 1-D shape")
        if levels.size < 2:
            raise ValidationError("need at least 2 quantile levels")
        if np.any(np.diff(src) < 0) or np.any(np.diff(tgt) < 0):
            raise ValidationError("quantile vectors must be nondecreasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "source_quantiles", src)
        object.__setattr__(self, "target_quantiles", tgt)

    @property
    def n_quantiles(self):
        return self.levels.size

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "levels": self.levels.tolist(),
                "source_quantiles": self.source_quantiles.tolist(),
                "target_quantiles": self.target_quantiles.tolist(),
            }, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(np.asarray(raw["levels"]),
                   np.asarray(raw["source_quantiles"]),
                   np.asarray(raw["target_quantiles"]))


def fit_quantile_map(model_ref, obs_ref, n_quantiles=100):
    """Fit a quantile map sending the model distribution to the reference.

    Parameters
    ----------
    model_ref, obs_ref : array_like
        Reference-period samples of the model variable and the observed
        (target) variable.  Need not be the same length.
    n_quantiles : int
        Number of evenly spaced probability levels in [0, 1], endpoints
        inclusive.  Must be at least 2.

    Raises
    ------
    EmptySampleError
        Either sample is empty.
    ValidationError
        Fewer than 2 quantile levels requested.
    """
    model_ref = np.asarray(model_ref, dtype=np.float64).ravel()
    obs_ref = np.asarray(obs_ref, dtype=np.float64).ravel()
    if model_ref.size == 0 or obs_ref.size == 0:
        raise EmptySampleError("cannot fit a quantile map on an empty sample")
    if int(n_quantiles) < 2:
        raise ValidationError(f"n_quantiles must be >= 2, got {n_quantiles}")
    if not (np.all(np.isfinite(model_ref)) and np.all(np.isfinite(obs_ref))):
        raise ValidationError("samples must be finite")
    levels = np.linspace(0.0, 1.0, int(n_quantiles))
    src = np.quantile(model_ref, levels)
    tgt = np.quantile(obs_ref, levels)
    return QuantileMap(levels, src, tgt)


def apply_quantile_map(qmap, x):
    """Correct values through the fitted map.

    Inside the source range the correction interpolates linearly between
    matched quantiles.  Below/above the range, the edge correction offset
    (target minus source quantile) is applied unchanged, so the transfer
    function stays continuous and nondecreasing everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    src = qmap.source_quantiles
    tgt = qmap.target_quantiles
    out = np.interp(x, src, tgt)
    lo, hi = src[0], src[-1]
    below = x < lo
    above = x > hi
    if below.any():
        out = np.where(below, x + (tgt[0] - lo), out)
    if above.any():
        out = np.where(above, x + (tgt[-1] - hi), out)
    return out


def _month_slices(times):
    months = (times.astype("datetime64[s]").astype("datetime64[M]")
              .astype(np.int64) % 12 + 1)
    return months


def correct_field(field, ref, mode="pooled", n_quantiles=100, stratify="none"):
    """Quantile-correct a gridded field against a reference field.

    Parameters
    ----------
    field : GridField
        Field to correct.
    ref : GridField
        Reference field providing the target distribution.  For
        `mode="per_cell"` its grid must match `field`; pooled mode only
        pools both fields' samples.
    mode : {"pooled", "per_cell"}
    n_quantiles : int
    stratify : {"none", "month"}
        With "month", separate maps are fitted and applied per calendar
        month (the reference supplies each month's target sample).

    Returns
    -------
    GridField
        Corrected field on the axes of `field`.
    """
    if mode not in ("pooled", "per_cell"):
        raise ValidationError(f"unknown mode {mode!r}")
    if stratify not in ("none", "month"):
        raise ValidationError(f"unknown stratification {stratify!r}")
    if mode == "per_cell":
        if not (np.array_equal(field.lats, ref.lats)
                and np.array_equal(field.lons, ref.lons)):
            raise AxisMismatchError("per-cell correction needs matching grids")

    x = field.values.astype(np.float64)
    r = ref.values.astype(np.float64)
    out = np.empty_like(x)

    if stratify == "month":
        f_months = _month_slices(field.times)
        r_months = _month_slices(ref.times)
        groups = [(f_months == m, r_months == m) for m in range(1, 13)]
        groups = [(fm, rm) for fm, rm in groups if fm.any()]
        for fm, rm in groups:
            if not rm.any():
                raise EmptySampleError(
                    "reference has no samples for a month present in the field"
                )
    else:
        groups = [(np.ones(x.shape[0], bool), np.ones(r.shape[0], bool))]

    for fsel, rsel in groups:
        if mode == "pooled":
            qmap = fit_quantile_map(x[fsel].ravel(), r[rsel].ravel(),
                                    n_quantiles)
            out[fsel] = apply_quantile_map(qmap, x[fsel])
        else:
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    qmap = fit_quantile_map(x[fsel, i, j], r[rsel, i, j],
                                            n_quantiles)
                    out[fsel, i, j] = apply_quantile_map(qmap, x[fsel, i, j])

    return GridField(field.variable, field.times, field.lats, field.lons,
                     out.astype(np.float32))
