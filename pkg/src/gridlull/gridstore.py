"""Gridded weather data model, gridpack file format, and block-mean coarsening.

A `GridField` is a dense (time, lat, lon) raster of one surface variable.
Exactly four variables are supported:

    uas   10 m eastward wind          [m/s]
    vas   10 m northward wind         [m/s]
    tas   surface air temperature     [K]
    rsds  downward shortwave flux     [W/m^2]

Fields are persisted as "gridpack" directories: a small `meta.json` plus a
raw little-endian float32 payload `data.f32le` in (time, lat, lon) row-major
order.  The format is self-describing and round-trips bit-exactly.

Timestamps are UTC epoch seconds with a fixed sub-daily step; hour of day is
always `(epoch // 3600) % 24` (no time zones, no DST).
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    GridpackIoError,
    MetaMismatchError,
    MissingFileError,
    NonDivisibleShapeError,
    NonMonotoneAxisError,
    UnitError,
    ValidationError,
)

#: Canonical unit string per accepted variable id.
VARIABLE_UNITS = {
    "uas": "m/s",
    "vas": "m/s",
    "tas": "K",
    "rsds": "W/m^2",
}

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class VariableId:
    """One of the four accepted surface variables plus its canonical unit."""

    id: str
    units: str

    def __post_init__(self):
        if self.id not in VARIABLE_UNITS:
            raise UnitError(
                f"unknown variable {self.id!r}; accepted: {sorted(VARIABLE_UNITS)}"
            )
        if self.units != VARIABLE_UNITS[self.id]:
            raise UnitError(
                f"variable {self.id!r} requires units "
                f"{VARIABLE_UNITS[self.id]!r}, got {self.units!r}"
            )


def variable(var_id):
    """Return the `VariableId` for `var_id` with its canonical unit."""
    if var_id not in VARIABLE_UNITS:
        raise UnitError(
            f"unknown variable {var_id!r}; accepted: {sorted(VARIABLE_UNITS)}"
        )
    return VariableId(var_id, VARIABLE_UNITS[var_id])


def _check_axis(name, axis):
    axis = np.asarray(axis, dtype=np.float64)
    if axis.ndim != 1 or axis.size == 0:
        raise ValidationError(f"{name} axis must be 1-D and non-empty")
    if axis.size > 1:
        d = np.diff(axis)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise NonMonotoneAxisError(f"{name} axis is not strictly monotone")
    return axis


@dataclass(frozen=True)
class GridField:
    """A (time, lat, lon) raster of one variable.

    Attributes
    ----------
    variable : VariableId
    times : int64 array of UTC epoch seconds, strictly increasing, fixed step
    lats, lons : float64 coordinate axes, strictly monotone (degrees)
    values : float32 array of shape (n_time, n_lat, n_lon), all finite
    """

    variable: VariableId
    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        if times.ndim != 1 or times.size == 0:
            raise ValidationError("times must be 1-D and non-empty")
        if times.size > 1:
            steps = np.diff(times)
            if not np.all(steps > 0):
                raise NonMonotoneAxisError("times must be strictly increasing")
            if not np.all(steps == steps[0]):
                raise ValidationError("times must have a fixed step")
            if SECONDS_PER_DAY % int(steps[0]) != 0:
                raise ValidationError(
                    f"time step {int(steps[0])} s must divide {SECONDS_PER_DAY} s"
                )
        lats = _check_axis("lat", self.lats)
        lons = _check_axis("lon", self.lons)
        values = np.asarray(self.values, dtype=np.float32)
        expected = (times.size, lats.size, lons.size)
        if values.shape != expected:
            raise ValidationError(
                f"values shape {values.shape} != (time, lat, lon) {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("values contain NaN or infinities")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        object.__setattr__(self, "values", values)

    @property
    def time_step_s(self):
        """Sampling step in seconds (step of a length-1 axis is undefined -> 0)."""
        if self.times.size < 2:
            return 0
        return int(self.times[1] - self.times[0])

    @property
    def shape(self):
        return self.values.shape

    def same_axes(self, other):
        """True if `other` has identical time/lat/lon axes."""
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.lats, other.lats)
            and np.array_equal(self.lons, other.lons)
        )

    def hours_of_day(self):
        """Hour of day per timestamp, derived as (epoch // 3600) mod 24."""
        return ((self.times // 3600) % 24).astype(np.int64)

    def months(self):
        """Calendar month (1..12) per timestamp, proleptic Gregorian UTC."""
        dt64 = self.times.astype("datetime64[s]")
        return (dt64.astype("datetime64[M]").astype(np.int64) % 12 + 1).astype(
            np.int64
        )


@dataclass(frozen=True)
class CoarsenSpec:
    """Block-mean coarsening factors for space and time."""

    spatial_factor: int = 1
    temporal_factor: int = 1

    def __post_init__(self):
        if self.spatial_factor < 1 or self.temporal_factor < 1:
            raise ValidationError("coarsening factors must be positive integers")


def coarsen(field, spec):
    """Coarsen `field` by plain block means in space and time.

    Every output cell is the arithmetic mean of a `spatial_factor` x
    `spatial_factor` spatial block over a window of `temporal_factor`
    consecutive steps.  Output latitudes/longitudes are block centroids;
    output timestamps are window starts with step multiplied by the temporal
    factor.  No area weighting by latitude is applied.

    Raises
    ------
    NonDivisibleShapeError
        If a factor does not divide the corresponding axis length.
    """
    fs, ft = spec.spatial_factor, spec.temporal_factor
    nt, ny, nx = field.shape
    if ny % fs != 0 or nx % fs != 0:
        raise NonDivisibleShapeError(
            f"spatial factor {fs} does not divide grid {ny}x{nx}"
        )
    if nt % ft != 0:
        raise NonDivisibleShapeError(
            f"temporal factor {ft} does not divide {nt} time steps"
        )
    blocks = field.values.astype(np.float64).reshape(
        nt // ft, ft, ny // fs, fs, nx // fs, fs
    )
    means = blocks.mean(axis=(1, 3, 5))
    new_times = field.times[::ft]
    new_lats = field.lats.reshape(ny // fs, fs).mean(axis=1)
    new_lons = field.lons.reshape(nx // fs, fs).mean(axis=1)
    return GridField(field.variable, new_times, new_lats, new_lons,
                     means.astype(np.float32))


def save_gridpack(field, path):
    """Write `field` to a gridpack directory at `path`.

    Creates `meta.json` and `data.f32le`; `load_gridpack` inverts this
    bit-exactly.  Raises `GridpackIoError` on any OS-level failure.
    """
    try:
        os.makedirs(path, exist_ok=True)
        meta = {
            "variable": field.variable.id,
            "units": field.variable.units,
            "time_start_epoch_s": int(field.times[0]),
            "time_step_s": field.time_step_s,
            "n_time": int(field.times.size),
            "lats": field.lats.tolist(),
            "lons": field.lons.tolist(),
            "dtype": "f32le",
            "order": "time,lat,lon",
        }
        with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        payload = np.ascontiguousarray(field.values, dtype="<f4")
        with open(os.path.join(path, "data.f32le"), "wb") as fh:
            fh.write(payload.tobytes())
    except OSError as exc:
        raise GridpackIoError(f"cannot write gridpack at {path}: {exc}") from exc


def load_gridpack(path):
    """Load a gridpack directory into a validated `GridField`.

    Raises
    ------
    MissingFileError
        `meta.json` or `data.f32le` absent.
    MetaMismatchError
        Payload size disagrees with the declared shape, or unsupported
        dtype/order declared.
    UnitError, NonMonotoneAxisError, ValidationError
        Propagated from field validation.
    """
    meta_path = os.path.join(path, "meta.json")
    data_path = os.path.join(path, "data.f32le")
    if not os.path.isfile(meta_path):
        raise MissingFileError(f"no meta.json in {path}")
    if not os.path.isfile(data_path):
        raise MissingFileError(f"no data.f32le in {path}")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MetaMismatchError(f"unreadable meta.json in {path}: {exc}") from exc

    for key in ("variable", "units", "time_start_epoch_s", "time_step_s",
                "n_time", "lats", "lons", "dtype", "order"):
        if key not in meta:
            raise MetaMismatchError(f"meta.json missing key {key!r}")
    if meta["dtype"] != "f32le":
        raise MetaMismatchError(f"unsupported dtype {meta['dtype']!r}")
    if meta["order"] != "time,lat,lon":
        raise MetaMismatchError(f"unsupported order {meta['order']!r}")

    var = VariableId(meta["variable"], meta["units"])
    n_time = int(meta["n_time"])
    lats = np.asarray(meta["lats"], dtype=np.float64)
    lons = np.asarray(meta["lons"], dtype=np.float64)
    expected_bytes = n_time * lats.size * lons.size * 4
    actual_bytes = os.path.getsize(data_path)
    if actual_bytes != expected_bytes:
        raise MetaMismatchError(
            f"payload is {actual_bytes} bytes, meta declares {expected_bytes}"
        )
    try:
        raw = np.fromfile(data_path, dtype="<f4")
    except OSError as exc:
        raise GridpackIoError(f"cannot read {data_path}: {exc}") from exc
    values = raw.reshape(n_time, lats.size, lons.size)
    start = int(meta["time_start_epoch_s"])
    step = int(meta["time_step_s"])
    if n_time > 1 and step <= 0:
        raise MetaMismatchError("time_step_s must be positive for n_time > 1")
    times = start + step * np.arange(n_time, dtype=np.int64)
    return GridField(var, times, lats, lons, values)
