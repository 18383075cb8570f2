"""Capacity allocation and the national combined capacity-factor series.

Installed capacity for each technology is spread over grid cells in
proportion to the long-term local resource, weighted by each cell's area
share inside the region of interest.  Border cells enter with a partial area
fraction (estimated on a 16x16 subcell point lattice).  The national
combined series is then the weight-normalized sum over cells and
technologies, so a capacity layout is fully described by weights that sum
to one.

Cells whose in-region area fraction is at least 0.5 count as land and are
eligible for onshore wind and solar; cells below 0.5 count as water (or
out-of-region) and are eligible for offshore wind, entering with the
complement fraction.  This mirrors the usual ">= 50% water coverage" rule
and is a documented desk-scale simplification.
"""

import csv
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon
from shapely import contains_xy

from .errors import (
    AxisMismatchError,
    DegeneratePolygonError,
    EmptyRegionError,
    ValidationError,
    ZeroResourceError,
)
from .powermodel import Technology

#: Subcell lattice resolution for border-cell area fractions (error <= 1/256).
LATTICE_N = 16

#: 2024 German installed-capacity mix, primary accounting:
#: (share of total, installed GW) per technology.
CAPACITY_2024 = {
    Technology.SOLAR_PV: (0.577, 99.3),
    Technology.ONSHORE_WIND: (0.369, 63.5),
    Technology.OFFSHORE_WIND: (0.054, 9.2),
}

#: Alternate published accounting of the same 2024 mix (grid-agency totals);
#: shares derived from the GW figures.
CAPACITY_2024_ALT = {
    Technology.SOLAR_PV: (66.5 / 134.6, 66.5),
    Technology.ONSHORE_WIND: (60.4 / 134.6, 60.4),
    Technology.OFFSHORE_WIND: (7.7 / 134.6, 7.7),
}


def technology_shares_2024(alternate=False):
    """Default 2024 German capacity mix as {Technology: (share, gw)}.

    With `alternate=True` the grid-agency accounting (66.5/60.4/7.7 GW) is
    returned instead of the primary one (99.3/63.5/9.2 GW).  Both are
    citeable published figures; neither is silently preferred beyond this
    explicit flag.
    """
    return dict(CAPACITY_2024_ALT if alternate else CAPACITY_2024)


@dataclass(frozen=True)
class RegionMask:
    """Per-cell area fraction inside the region of interest, in [0, 1]."""

    lats: np.ndarray
    lons: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        fr = np.asarray(self.fractions, dtype=np.float64)
        if fr.shape != (lats.size, lons.size):
            raise ValidationError(
                f"fractions shape {fr.shape} != {(lats.size, lons.size)}"
            )
        if fr.size and (fr.min() < 0.0 or fr.max() > 1.0):
            raise ValidationError("area fractions must lie in [0, 1]")
        if not np.any(fr > 0.0):
            raise EmptyRegionError("region mask has no cell with positive area")
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        object.__setattr__(self, "fractions", fr)


def _axis_spacing(axis):
    # Single-point axes carry no spacing information; assume unit cells.
    if axis.size < 2:
        return 1.0
    return float(abs(axis[1] - axis[0]))


def mask_from_polygon(polygon, lats, lons):
    """Rasterize a (lon, lat) polygon onto grid cells as area fractions.

    Each cell's fraction is the share of a 16x16 lattice of subcell center
    points that falls inside the polygon, giving a deterministic estimate
    with error at most 1/256 per cell.

    Parameters
    ----------
    polygon : sequence of (lon, lat)
        Ordered vertices; closed implicitly, must not self-intersect.
    lats, lons : 1-D arrays
        Cell-center coordinates of the target grid.

    Raises
    ------
    DegeneratePolygonError
        Fewer than 3 vertices, zero area, or self-intersection.
    EmptyRegionError
        Polygon does not overlap any grid cell.
    """
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(pts) < 3:
        raise DegeneratePolygonError(
            f"polygon needs at least 3 vertices, got {len(pts)}"
        )
    poly = Polygon(pts)
    if not poly.is_valid:
        raise DegeneratePolygonError("polygon is self-intersecting or invalid")
    if poly.area <= 0.0:
        raise DegeneratePolygonError("polygon has zero area")

    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    dlat = _axis_spacing(lats) * (1 if lats.size < 2 else np.sign(lats[1] - lats[0]))
    dlon = _axis_spacing(lons) * (1 if lons.size < 2 else np.sign(lons[1] - lons[0]))

    offsets = (np.arange(LATTICE_N) + 0.5) / LATTICE_N - 0.5
    sub_lat = lats[:, None] + offsets[None, :] * dlat   # (n_lat, 16)
    sub_lon = lons[:, None] + offsets[None, :] * dlon   # (n_lon, 16)
    # Full lattice: (n_lat, 16, n_lon, 16) -> flat point list.
    xx = np.broadcast_to(sub_lon[None, None, :, :],
                         (lats.size, LATTICE_N, lons.size, LATTICE_N))
    yy = np.broadcast_to(sub_lat[:, :, None, None],
                         (lats.size, LATTICE_N, lons.size, LATTICE_N))
    inside = contains_xy(poly, xx.ravel(), yy.ravel())
    fractions = inside.reshape(lats.size, LATTICE_N, lons.size, LATTICE_N)
    fractions = fractions.sum(axis=(1, 3)) / (LATTICE_N * LATTICE_N)
    return RegionMask(lats, lons, fractions)


@dataclass(frozen=True)
class TechAllocation:
    """Installed capacity and combined-series weights for one technology."""

    total_gw: float
    capacity_gw: np.ndarray   # (n_lat, n_lon)
    weight: np.ndarray        # (n_lat, n_lon), sums to total/grand-total


@dataclass(frozen=True)
class CapacityLayout:
    """Per-cell, per-technology installed capacity plus normalized weights.

    Invariants: each technology's cell capacities sum to its national total,
    and all weights together sum to exactly one.
    """

    lats: np.ndarray
    lons: np.ndarray
    allocations: dict

    def weight_sum(self):
        return float(sum(a.weight.sum() for a in self.allocations.values()))


def allocate_capacity(cf_means, totals, mask):
    """Allocate national capacities over cells proportional to the resource.

    For each technology k with national total C_k, cell i receives

        c[i,k] = C_k * a_i * mean_cf[i,k] / sum_j(a_j * mean_cf[j,k])

    where a_i is the cell's effective area weight: the in-region fraction
    for land technologies (cells with fraction >= 0.5), the complement
    fraction for offshore wind (cells with fraction < 0.5).  Weights
    w[i,k] = c[i,k] / sum(c) then sum to one over all cells and
    technologies.

    Parameters
    ----------
    cf_means : mapping
        Technology -> (n_lat, n_lon) long-term mean CF.
    totals : mapping
        Technology -> national installed GW (>= 0).
    mask : RegionMask

    Raises
    ------
    ZeroResourceError
        A technology with positive total has zero weighted resource.
    """
    land = mask.fractions >= 0.5
    allocations = {}
    for tech, total in totals.items():
        cf_mean = np.asarray(cf_means[tech], dtype=np.float64)
        if cf_mean.shape != mask.fractions.shape:
            raise AxisMismatchError(
                f"{tech.value} mean CF shape {cf_mean.shape} != mask "
                f"{mask.fractions.shape}"
            )
        if tech is Technology.OFFSHORE_WIND:
            area = np.where(~land, 1.0 - mask.fractions, 0.0)
        else:
            area = np.where(land, mask.fractions, 0.0)
        weighted = area * cf_mean
        denom = weighted.sum()
        if total > 0 and denom <= 0.0:
            raise ZeroResourceError(
                f"no usable resource to allocate {total} GW of {tech.value}"
            )
        capacity = total * weighted / denom if denom > 0 else np.zeros_like(weighted)
        allocations[tech] = [total, capacity]

    grand_total = sum(cap.sum() for _, cap in allocations.values())
    if grand_total <= 0.0:
        raise ZeroResourceError("all technology totals are zero")
    final = {
        tech: TechAllocation(total_gw=float(total), capacity_gw=cap,
                             weight=cap / grand_total)
        for tech, (total, cap) in allocations.items()
    }
    return CapacityLayout(mask.lats, mask.lons, final)


@dataclass(frozen=True)
class CfSeries:
    """A national capacity-factor time series with values in [0, 1]."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise ValidationError("times and values must be equal-length 1-D")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("series values must lie in [0, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.times.size

    @property
    def step_s(self):
        if self.times.size < 2:
            return 0
        return int(self.times[1] - self.times[0])


def combined_cf(cf_fields, layout):
    """Weighted national series: sum over cells and technologies of w * CF.

    All fields must share axes with the layout and each other.  Because
    weights sum to one and each CF lies in [0, 1], the output does too
    (clipped only against float round-off).
    """
    techs = list(layout.allocations)
    first = cf_fields[techs[0]]
    n_time = first.times.size
    for tech in techs:
        f = cf_fields[tech]
        if not (np.array_equal(f.lats, layout.lats)
                and np.array_equal(f.lons, layout.lons)):
            raise AxisMismatchError(f"{tech.value} CF grid differs from layout")
        if not np.array_equal(f.times, first.times):
            raise AxisMismatchError("CF fields do not share a time axis")
    series = np.zeros(n_time, dtype=np.float64)
    for tech in techs:
        w = layout.allocations[tech].weight
        series += np.tensordot(cf_fields[tech].values, w, axes=([1, 2], [0, 1]))
    return CfSeries(first.times, np.clip(series, 0.0, 1.0))


def layout_to_csv(layout, path):
    """Write a layout as CSV rows (lat, lon, technology, capacity_gw, weight)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "technology", "capacity_gw", "weight"])
        for tech, alloc in layout.allocations.items():
            for i, lat in enumerate(layout.lats):
                for j, lon in enumerate(layout.lons):
                    writer.writerow([
                        f"{lat:.6f}", f"{lon:.6f}", tech.value,
                        f"{alloc.capacity_gw[i, j]:.10g}",
                        f"{alloc.weight[i, j]:.10g}",
                    ])
