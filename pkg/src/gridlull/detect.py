"""Detection of prolonged combined low wind and solar generation.

An event is a period during which the trailing 48-hour mean of the national
combined capacity factor stays strictly below a threshold (default 0.06).
Consecutive below-threshold windows merge into a single event that is placed
on its first date of occurrence.

Conventions, all testable:

- The rolling window is trailing, so events stay causal and are dateable to
  the first raw sample their first window covers.
- Duration counts the raw-sample coverage of the run of below-threshold
  windows: run_length * step + (window - step).  A single below-threshold
  window therefore reports the minimum duration of one full window.
- The comparison is strict (`cf < threshold`); a sample at exactly the
  threshold is not part of an event.
- Events spanning New Year belong to their start year.
"""

import datetime
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptySeriesError,
    ValidationError,
    WindowTooLargeError,
)
from .aggregate import CfSeries

HOUR = 3600


@dataclass(frozen=True)
class DetectionConfig:
    """Window length and threshold for event detection."""

    window_hours: int = 48
    threshold: float = 0.06

    def __post_init__(self):
        if self.window_hours <= 0:
            raise ValidationError("window_hours must be positive")
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError("threshold must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class Event:
    """One detected low-generation event.

    `start` is the epoch second of the first raw sample covered by the first
    below-threshold window; `min_cf`/`mean_cf` summarize the smoothed values
    of the run and are both strictly below the detection threshold.
    """

    start: int
    duration_hours: float
    min_cf: float
    mean_cf: float

    def start_iso(self):
        dt = datetime.datetime.fromtimestamp(self.start, tz=datetime.timezone.utc)
        return dt.strftime("%Y-%m-%dT%H:%M:%SZ")

    @property
    def start_year(self):
        return datetime.datetime.fromtimestamp(
            self.start, tz=datetime.timezone.utc
        ).year

    @property
    def start_month(self):
        return datetime.datetime.fromtimestamp(
            self.start, tz=datetime.timezone.utc
        ).month


@dataclass(frozen=True)
class EventList:
    """Events ordered strictly by start time.

    Detection produces maximal runs, so no two events share a
    below-threshold window; their raw-sample coverages may still touch
    through the trailing windows of a short gap.
    """

    events: tuple = field(default_factory=tuple)

    def __post_init__(self):
        events = tuple(self.events)
        for a, b in zip(events, events[1:]):
            if b.start <= a.start:
                raise ValidationError("events must be strictly ordered by start")
        object.__setattr__(self, "events", events)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def __getitem__(self, idx):
        return self.events[idx]


def rolling_mean(series, window_hours):
    """Trailing arithmetic mean over a fixed window.

    Each output sample is the mean of the window ending at (and stamped
    with) that sample's timestamp, so the output has n - w + 1 samples for
    a w-sample window.

    Raises
    ------
    WindowTooLargeError
        Window longer than the series.
    ValidationError
        Window not a positive multiple of the sampling step.
    """
    n = len(series)
    if n == 0:
        raise EmptySeriesError("cannot smooth an empty series")
    step_s = series.step_s
    if step_s <= 0:
        raise ValidationError("series needs at least two samples with a step")
    window_s = int(window_hours) * HOUR
    if window_s <= 0 or window_s % step_s != 0:
        raise ValidationError(
            f"window of {window_hours} h is not a positive multiple of the "
            f"{step_s // HOUR} h step"
        )
    w = window_s // step_s
    if w > n:
        raise WindowTooLargeError(f"window of {w} samples exceeds series of {n}")
    windows = np.lib.stride_tricks.sliding_window_view(series.values, w)
    smoothed = windows.mean(axis=-1)
    return CfSeries(series.times[w - 1:], np.clip(smoothed, 0.0, 1.0))


def detect_events(cf, cfg=DetectionConfig(), presmoothed=False):
    """Find maximal runs of below-threshold smoothed windows.

    Parameters
    ----------
    cf : CfSeries
        Raw combined CF series, or an already-smoothed one if
        `presmoothed=True` (its timestamps must then be window-end stamps
        produced by `rolling_mean` with the same window).
    cfg : DetectionConfig
    presmoothed : bool
        Skip the internal rolling mean.

    Returns
    -------
    EventList
        One event per maximal run of consecutive smoothed samples strictly
        below `cfg.threshold`.  Event start is mapped back to the first raw
        sample of the run's first window; duration is
        run_length * step + (window - step) hours.
    """
    if len(cf) == 0:
        raise EmptySeriesError("cannot detect events on an empty series")
    smoothed = cf if presmoothed else rolling_mean(cf, cfg.window_hours)
    step_s = smoothed.step_s
    if step_s <= 0:
        raise ValidationError("smoothed series needs at least two samples")
    window_s = int(cfg.window_hours) * HOUR

    below = smoothed.values < cfg.threshold
    if not below.any():
        return EventList(())
    # Run boundaries: starts where below turns on, ends where it turns off.
    edges = np.diff(below.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if below[0]:
        starts = np.concatenate(([0], starts))
    if below[-1]:
        ends = np.concatenate((ends, [below.size]))

    events = []
    for i0, i1 in zip(starts, ends):
        run = smoothed.values[i0:i1]
        run_len = i1 - i0
        start_epoch = int(smoothed.times[i0]) - (window_s - step_s)
        duration_h = (run_len * step_s + (window_s - step_s)) / HOUR
        events.append(Event(
            start=start_epoch,
            duration_hours=duration_h,
            min_cf=float(run.min()),
            mean_cf=float(run.mean()),
        ))
    return EventList(tuple(events))


def events_per_year(events, years):
    """Count events per calendar year of their start date.

    Parameters
    ----------
    events : EventList
    years : iterable of int
        Years to report; years without events get a zero.

    Returns
    -------
    dict
        year -> event count, in the order of `years`.
    """
    counts = {int(y): 0 for y in years}
    for ev in events:
        y = ev.start_year
        if y in counts:
            counts[y] += 1
    return counts

def monthly_climatology(events, n_years=None):
    """Average number of events per calendar month per year.

    Parameters
    ----------
    events : EventList
    n_years : int, optional
        Number of years the event record spans.  If omitted it is inferred
        as the span of calendar years touched by the events' start dates,
        which requires a non-empty list.

    Returns
    -------
    ndarray
        12 values, mean events per year for Jan..Dec.

    Raises
    ------
    InsufficientSpanError
        No events and no explicit `n_years`, or a non-positive span.
    """
    from .errors import InsufficientSpanError

    if n_years is None:
        if len(events) == 0:
            raise InsufficientSpanError(
                "cannot infer the record span from an empty event list"
            )
        years = [ev.start_year for ev in events]
        n_years = max(years) - min(years) + 1
    if n_years < 1:
        raise InsufficientSpanError(f"need at least one full year, got {n_years}")
    counts = np.zeros(12, dtype=np.float64)
    for ev in events:
        counts[ev.start_month - 1] += 1
    return counts / float(n_years)


def duration_histogram(events, bin_hours):
    """Histogram of event durations with uniform bins starting at zero.

    Returns
    -------
    (edges, counts)
        `edges` has one more entry than `counts`; bin i covers
        [edges[i], edges[i+1]).  Both are empty for an empty event list.
    """
    if bin_hours <= 0:
        raise ValidationError("bin_hours must be positive")
    if len(events) == 0:
        return np.array([]), np.array([], dtype=np.int64)
    durations = np.array([ev.duration_hours for ev in events])
    n_bins = int(np.floor(durations.max() / bin_hours)) + 1
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_hours
    idx = np.minimum((durations / bin_hours).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return edges, counts
