"""Synthetic gridded weather for tests, demos, and pipeline dry runs.

Real reanalysis/climate archives are out of scope, so this module fabricates
physically plausible uas/vas/tas/rsds rasters: seasonal sinusoids, a proper
solar-geometry diurnal cycle, first-order autoregressive weather noise, and
a few smooth spatial modes so coarse and fine resolutions genuinely differ.

The defaults are tuned so the downstream capacity-factor pipeline shows the
familiar climatology: wind speeds peak in winter but occasionally collapse
for days, solar output peaks in June, and combined low-generation events
concentrate in November-January.
"""

import numpy as np

from .gridstore import GridField, variable

SECONDS_PER_YEAR = 365.25 * 86400.0


def _ar1(rng, n, phi, sigma):
    """Stationary AR(1) path with lag-1 correlation phi and marginal std sigma."""
    innov_std = sigma * np.sqrt(1.0 - phi * phi)
    x = np.empty(n)
    x[0] = rng.normal(0.0, sigma)
    eps = rng.normal(0.0, innov_std, size=n - 1)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i - 1]
    return x


def _spatial_modes(rng, lats, lons, n_modes=3):
    """Smooth unit-scale spatial patterns from low-order harmonics."""
    ny, nx = lats.size, lons.size
    yy = np.linspace(0.0, np.pi, ny)[:, None]
    xx = np.linspace(0.0, np.pi, nx)[None, :]
    modes = []
    for k in range(n_modes):
        a, b = rng.uniform(0.5, 1.5, size=2)
        phase_y, phase_x = rng.uniform(0.0, np.pi, size=2)
        modes.append(np.cos(a * yy + phase_y) * np.cos(b * xx + phase_x))
    return np.stack(modes)


def _day_of_year(times):
    dt = times.astype("datetime64[s]")
    year_start = dt.astype("datetime64[Y]").astype("datetime64[s]")
    return (dt - year_start).astype(np.int64) / 86400.0


def _solar_elevation_sin(times, lat_deg):
    """Sine of solar elevation from day-of-year and UTC hour (no equation of
    time; adequate for synthetic data)."""
    doy = _day_of_year(times)
    hour = (times % 86400) / 3600.0
    decl = np.deg2rad(23.44) * np.sin(2.0 * np.pi * (doy - 81.0) / 365.25)
    hour_angle = np.deg2rad(15.0) * (hour - 12.0)
    lat = np.deg2rad(lat_deg)
    s = (np.sin(lat) * np.sin(decl)
         + np.cos(lat) * np.cos(decl) * np.cos(hour_angle))
    return np.maximum(s, 0.0)


def synth_weather(lats=None, lons=None, start_year=1990, n_years=2,
                  step_s=21600, seed=0, wind_mean=7.5, wind_seasonal=2.2,
                  wind_sigma=2.6, spatial_amp=0.6):
    """Generate a consistent set of synthetic uas/vas/tas/rsds fields.

    Parameters
    ----------
    lats, lons : 1-D arrays, optional
        Grid cell centers; default a 4x4 grid around 51N, 10E.
    start_year : int
        First calendar year; series start at Jan 1 00:00 UTC.
    n_years : int
        Whole calendar years to generate (365-day years for step alignment).
    step_s : int
        Sampling step in seconds; must divide 86400.
    seed : int
        RNG seed; identical seeds give identical fields.
    wind_mean, wind_seasonal, wind_sigma : float
        Annual-mean wind speed, amplitude of its winter-peaking seasonal
        cycle, and AR(1) marginal std of the speed anomaly (all m/s).
    spatial_amp : float
        Strength of the smooth spatial modes relative to each variable's
        natural scale.

    Returns
    -------
    dict
        Variable id -> GridField for "uas", "vas", "tas", "rsds".
    """
    rng = np.random.default_rng(seed)
    if lats is None:
        lats = 50.0 + 0.5 * np.arange(4)
    if lons is None:
        lons = 8.0 + 0.5 * np.arange(4)
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)

    start = np.datetime64(f"{start_year:04d}-01-01T00:00:00").astype(
        "datetime64[s]").astype(np.int64)
    n_steps = int(n_years * 365 * 86400 // step_s)
    times = start + step_s * np.arange(n_steps, dtype=np.int64)
    doy = _day_of_year(times)
    season = np.cos(2.0 * np.pi * (doy - 15.0) / 365.25)  # +1 mid-January

    # --- wind: winter-peaking speed with slow AR(1) anomalies and a slowly
    # turning direction; deep lulls arise when the anomaly dips.
    phi_6h = 0.88 ** (step_s / 21600.0)
    speed_anom = _ar1(rng, n_steps, phi_6h, wind_sigma)
    speed = np.maximum(wind_mean + wind_seasonal * season + speed_anom, 0.0)
    theta = np.cumsum(rng.normal(0.0, 0.15, size=n_steps))
    base_u = speed * np.cos(theta)
    base_v = speed * np.sin(theta)

    # --- temperature: summer-peaking cycle, small diurnal term, AR noise.
    hour = (times % 86400) / 3600.0
    diurnal = np.cos(2.0 * np.pi * (hour - 14.0) / 24.0)
    base_t = (281.0 - 9.0 * season + 2.0 * diurnal
              + _ar1(rng, n_steps, phi_6h, 2.0))

    # --- solar: clear-sky elevation scaled by an AR(1) cloud factor.
    elev = _solar_elevation_sin(times, float(lats.mean()))
    cloud = np.clip(0.68 + _ar1(rng, n_steps, 0.75, 0.3), 0.15, 1.0)
    base_g = 1100.0 * elev * cloud

    modes = _spatial_modes(rng, lats, lons)
    coeffs = {name: np.stack([_ar1(rng, n_steps, 0.95, 1.0)
                              for _ in range(len(modes))])
              for name in ("uas", "vas", "tas", "rsds")}

    def gridded(base, name, scale):
        anom = np.einsum("mt,myx->tyx", coeffs[name], modes)
        return base[:, None, None] + spatial_amp * scale * anom

    uas = gridded(base_u, "uas", 1.2)
    vas = gridded(base_v, "vas", 1.2)
    tas = gridded(base_t, "tas", 1.5)
    rsds = gridded(base_g, "rsds", 60.0)
    # Solar modulation must vanish at night and stay non-negative.
    rsds = np.clip(rsds * (elev[:, None, None] > 0), 0.0, None)

    fields = {}
    for name, vals in (("uas", uas), ("vas", vas), ("tas", tas),
                       ("rsds", rsds)):
        fields[name] = GridField(variable(name), times, lats, lons,
                                 vals.astype(np.float32))
    return fields
