"""Per-cell capacity factors for onshore wind, offshore wind, and solar PV.

The conversion chain for wind is: combine the 10 m wind components into a
speed field, extrapolate to hub height with the logarithmic profile, then map
speed to a capacity factor with a generic cubic power curve between cut-in
and rated speed.  Solar PV uses a linear temperature derating around an
NOCT-style cell-temperature proxy.

The turbine curve and PV coefficients are deliberately generic; all constants
are configurable and recorded next to any output they produced.  Maintenance,
outages, wakes, and panel geometry are out of scope: capacity factors here
reflect meteorology only.
"""

import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import AxisMismatchError, InvalidRoughnessError, ValidationError
from .gridstore import GridField


class Technology(enum.Enum):
    ONSHORE_WIND = "onshore_wind"
    OFFSHORE_WIND = "offshore_wind"
    SOLAR_PV = "solar_pv"


@dataclass(frozen=True)
class TurbineParams:
    """Generic turbine: log-law extrapolation plus a cubic power curve.

    CF = 0 below `cut_in_ms` and at/above `cut_out_ms`, 1 between
    `rated_ms` and `cut_out_ms`, and ((s - cut_in)/(rated - cut_in))^3
    in between.
    """

    hub_height_m: float
    roughness_m: float
    cut_in_ms: float
    rated_ms: float
    cut_out_ms: float

    def __post_init__(self):
        if self.hub_height_m <= 0:
            raise ValidationError("hub height must be positive")
        if self.roughness_m <= 0:
            raise ValidationError("roughness length must be positive")
        if not (0 < self.cut_in_ms < self.rated_ms < self.cut_out_ms):
            raise ValidationError(
                "need 0 < cut_in < rated < cut_out, got "
                f"({self.cut_in_ms}, {self.rated_ms}, {self.cut_out_ms})"
            )


@dataclass(frozen=True)
class PvParams:
    """Linear temperature-derated PV model with an NOCT-style cell proxy.

    T_cell = tas + noct_coeff * G;
    CF = clip((G / g_stc) * (1 + temp_coeff * (T_cell - t_ref)), 0, 1).
    """

    g_stc_wm2: float = 1000.0
    temp_coeff_per_k: float = -0.005
    noct_coeff_k_m2_per_w: float = 0.035
    t_ref_k: float = 298.15

    def __post_init__(self):
        if self.g_stc_wm2 <= 0:
            raise ValidationError("g_stc must be positive")
        if self.temp_coeff_per_k > 0:
            raise ValidationError("temperature coefficient must be <= 0")
        if self.noct_coeff_k_m2_per_w < 0:
            raise ValidationError("NOCT coefficient must be >= 0")


# Config-overridable defaults; hub heights, roughness and the
# (cut_in, rated, cut_out) corners differ on- vs offshore.
DEFAULT_ONSHORE = TurbineParams(hub_height_m=100.0, roughness_m=0.1,
                                cut_in_ms=3.0, rated_ms=13.0, cut_out_ms=25.0)
DEFAULT_OFFSHORE = TurbineParams(hub_height_m=120.0, roughness_m=0.0002,
                                 cut_in_ms=3.0, rated_ms=12.0, cut_out_ms=25.0)
DEFAULT_PV = PvParams()

DEFAULT_TECH_PARAMS = {
    Technology.ONSHORE_WIND: DEFAULT_ONSHORE,
    Technology.OFFSHORE_WIND: DEFAULT_OFFSHORE,
    Technology.SOLAR_PV: DEFAULT_PV,
}


@dataclass(frozen=True)
class CfField:
    """A (time, lat, lon) capacity-factor raster for one technology.

    Values are float64 and must lie in [0, 1].
    """

    technology: Technology
    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.int64)
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        if values.shape != (times.size, lats.size, lons.size):
            raise ValidationError(
                f"values shape {values.shape} != "
                f"{(times.size, lats.size, lons.size)}"
            )
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("capacity factors must lie in [0, 1]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)

    @property
    def shape(self):
        return self.values.shape

    def time_mean(self):
        """Long-term mean CF per cell, shape (n_lat, n_lon)."""
        return self.values.mean(axis=0)


def _require_same_axes(a, b):
    if not (np.array_equal(a.times, b.times)
            and np.array_equal(a.lats, b.lats)
            and np.array_equal(a.lons, b.lons)):
        raise AxisMismatchError("fields do not share time/lat/lon axes")


def wind_speed(u, v):
    """Wind speed magnitude sqrt(u^2 + v^2) from the 10 m components.

    Parameters
    ----------
    u, v : GridField
        uas and vas fields on identical axes.

    Returns
    -------
    GridField
        Speed in m/s on the shared axes (stored under the uas variable id).
    """
    _require_same_axes(u, v)
    speed = np.hypot(u.values.astype(np.float64), v.values.astype(np.float64))
    return GridField(u.variable, u.times, u.lats, u.lons,
                     speed.astype(np.float32))


def extrapolate_hub(speed10, params):
    """Extrapolate a 10 m speed field to hub height with the log profile.

    s_hub = s_10 * ln(h / z0) / ln(10 / z0).  Requires roughness < 10 m so
    the reference-height log stays positive.
    """
    z0 = params.roughness_m
    if z0 >= 10.0:
        raise InvalidRoughnessError(
            f"roughness {z0} m must be below the 10 m reference height"
        )
    factor = np.log(params.hub_height_m / z0) / np.log(10.0 / z0)
    hub = speed10.values.astype(np.float64) * factor
    return GridField(speed10.variable, speed10.times, speed10.lats,
                     speed10.lons, hub.astype(np.float32))


def wind_cf(speed_hub, params, technology=Technology.ONSHORE_WIND):
    """Capacity factor from hub-height speed via the cubic generic curve.

    Total on all finite inputs: below cut-in and at/above cut-out the CF is
    0, at/above rated it is 1, in between ((s - cut_in)/(rated - cut_in))^3.
    """
    s = speed_hub.values.astype(np.float64)
    frac = (s - params.cut_in_ms) / (params.rated_ms - params.cut_in_ms)
    cf = np.clip(frac, 0.0, 1.0) ** 3
    cf[s >= params.rated_ms] = 1.0
    cf[s >= params.cut_out_ms] = 0.0
    cf[s < params.cut_in_ms] = 0.0
    return CfField(technology, speed_hub.times, speed_hub.lats,
                   speed_hub.lons, cf)


def solar_cf(rsds, tas, params=DEFAULT_PV):
    """Solar PV capacity factor from irradiance and air temperature.

    Cell temperature is approximated as tas + noct_coeff * G, and output
    derates linearly with cell temperature above the reference; the result
    is clipped to [0, 1].
    """
    _require_same_axes(rsds, tas)
    g = rsds.values.astype(np.float64)
    t_cell = tas.values.astype(np.float64) + params.noct_coeff_k_m2_per_w * g
    cf = (g / params.g_stc_wm2) * (
        1.0 + params.temp_coeff_per_k * (t_cell - params.t_ref_k)
    )
    cf = np.clip(cf, 0.0, 1.0)
    return CfField(Technology.SOLAR_PV, rsds.times, rsds.lats, rsds.lons, cf)


def cf_from_weather(fields, tech_params=None):
    """Run the full weather-to-CF chain for all three technologies.

    Parameters
    ----------
    fields : mapping
        Variable id -> GridField for 'uas', 'vas', 'tas', 'rsds',
        all on identical axes.
    tech_params : mapping, optional
        Technology -> TurbineParams/PvParams overrides.

    Returns
    -------
    dict
        Technology -> CfField.
    """
    params = dict(DEFAULT_TECH_PARAMS)
    if tech_params:
        params.update(tech_params)
    speed = wind_speed(fields["uas"], fields["vas"])
    out = {}
    for tech in (Technology.ONSHORE_WIND, Technology.OFFSHORE_WIND):
        hub = extrapolate_hub(speed, params[tech])
        out[tech] = wind_cf(hub, params[tech], technology=tech)
    out[Technology.SOLAR_PV] = solar_cf(fields["rsds"], fields["tas"],
                                        params[Technology.SOLAR_PV])
    return out


def load_tech_params(path):
    """Read technology parameters from a JSON file.

    The file maps technology names to parameter fields, e.g.::

        {"onshore_wind": {"hub_height_m": 100, "roughness_m": 0.1,
                          "cut_in_ms": 3, "rated_ms": 13, "cut_out_ms": 25},
         "solar_pv": {"temp_coeff_per_k": -0.004}}

    Missing technologies or fields fall back to the defaults.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    params = dict(DEFAULT_TECH_PARAMS)
    for tech in (Technology.ONSHORE_WIND, Technology.OFFSHORE_WIND):
        if tech.value in raw:
            base = params[tech]
            merged = {
                "hub_height_m": base.hub_height_m,
                "roughness_m": base.roughness_m,
                "cut_in_ms": base.cut_in_ms,
                "rated_ms": base.rated_ms,
                "cut_out_ms": base.cut_out_ms,
            }
            merged.update(raw[tech.value])
            params[tech] = TurbineParams(**merged)
    if Technology.SOLAR_PV.value in raw:
        base = params[Technology.SOLAR_PV]
        merged = {
            "g_stc_wm2": base.g_stc_wm2,
            "temp_coeff_per_k": base.temp_coeff_per_k,
            "noct_coeff_k_m2_per_w": base.noct_coeff_k_m2_per_w,
            "t_ref_k": base.t_ref_k,
        }
        merged.update(raw[Technology.SOLAR_PV.value])
        params[Technology.SOLAR_PV] = PvParams(**merged)
    return params
