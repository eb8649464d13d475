"""GPS trip logs: parsing, route matching, velocity-profile extraction.

A trip is reduced to one speed value per standard point (the velocity
profile). Speeds come from the logger's speed channel, not from
differentiated positions, which would be far noisier.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import NonMonotonicTime, ParseError, UnmatchedTrip
from .route import Route, project_points

TRIP_META_FIELDS = ["trip_id", "start_datetime_iso8601"]
TRIP_SAMPLE_FIELDS = ["t_rel_s", "lat", "lon", "speed_mps", "heading_deg", "altitude_m"]

DEFAULT_MAX_OFFSET_M = 50.0
DEFAULT_MIN_COVERAGE = 0.95


def parse_iso8601(value: str) -> float:
    """ISO-8601 string to UTC epoch seconds; naive values are taken as UTC."""
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_iso8601(epoch_s: float) -> str:
    return datetime.fromtimestamp(epoch_s, tz=timezone.utc).isoformat()


@dataclass
class TripLog:
    trip_id: str
    start_epoch_s: float
    t_rel_s: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed_mps: np.ndarray
    heading_deg: np.ndarray
    altitude_m: np.ndarray

    def __len__(self) -> int:
        return len(self.t_rel_s)


@dataclass
class VelocityProfile:
    """Driver speed at each standard point, index-aligned with the route."""

    trip_id: str
    start_epoch_s: float
    speeds_mps: np.ndarray

    def __post_init__(self):
        self.speeds_mps = np.asarray(self.speeds_mps, dtype=float)
        if (self.speeds_mps < 0).any():
            raise ValueError("profile speeds must be >= 0")

    def __len__(self) -> int:
        return len(self.speeds_mps)


@dataclass
class MatchVerdict:
    """Outcome of matching a trip against the route, with diagnostics."""

    accepted: bool
    coverage: float
    n_outliers: int
    reason: str = ""


def parse_trip_log(path: str) -> TripLog:
    """Read a trip log file; rejects non-monotonic time and empty logs."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        meta_header = next(reader, None)
        if meta_header is None or [h.strip() for h in meta_header] != TRIP_META_FIELDS:
            raise ParseError(path, 1, f"expected header {','.join(TRIP_META_FIELDS)}")
        meta = next(reader, None)
        if meta is None or len(meta) < 2:
            raise ParseError(path, 2, "missing trip metadata row")
        trip_id = meta[0].strip()
        try:
            start_epoch = parse_iso8601(meta[1])
        except ValueError as exc:
            raise ParseError(path, 2, str(exc)) from exc
        sample_header = next(reader, None)
        if sample_header is None or [h.strip() for h in sample_header] != TRIP_SAMPLE_FIELDS:
            raise ParseError(path, 3, f"expected header {','.join(TRIP_SAMPLE_FIELDS)}")

        cols: list[list[float]] = [[], [], [], [], [], []]
        last_t = None
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                values = [float(v) for v in row[:6]]
                if len(row) < 6:
                    raise ValueError("short row")
            except ValueError as exc:
                raise ParseError(path, reader.line_num, ",".join(row)) from exc
            if last_t is not None and values[0] <= last_t:
                raise NonMonotonicTime(path, reader.line_num, f"t_rel_s {values[0]} after {last_t}")
            if values[3] < 0:
                raise ParseError(path, reader.line_num, f"negative speed {values[3]}")
            last_t = values[0]
            for c, v in zip(cols, values):
                c.append(v)

    if not cols[0]:
        raise ParseError(path, 1, "trip log has no samples")
    return TripLog(
        trip_id=trip_id,
        start_epoch_s=start_epoch,
        t_rel_s=np.array(cols[0]),
        lat=np.array(cols[1]),
        lon=np.array(cols[2]),
        speed_mps=np.array(cols[3]),
        heading_deg=np.array(cols[4]),
        altitude_m=np.array(cols[5]),
    )


def write_trip_log(trip: TripLog, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRIP_META_FIELDS)
        writer.writerow([trip.trip_id, format_iso8601(trip.start_epoch_s)])
        writer.writerow(TRIP_SAMPLE_FIELDS)
        for i in range(len(trip)):
            writer.writerow(
                [
                    repr(float(trip.t_rel_s[i])),
                    repr(float(trip.lat[i])),
                    repr(float(trip.lon[i])),
                    repr(float(trip.speed_mps[i])),
                    repr(float(trip.heading_deg[i])),
                    repr(float(trip.altitude_m[i])),
                ]
            )


def _monotone_clean(arcs: np.ndarray) -> np.ndarray:
    """Indices of samples whose arc positions never jump backward."""
    keep = []
    last = -np.inf
    for i, a in enumerate(arcs):
        if a >= last:
            keep.append(i)
            last = a
    return np.array(keep, dtype=int)


def match_trip_to_route(
    trip: TripLog,
    route: Route,
    max_offset_m: float = DEFAULT_MAX_OFFSET_M,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
) -> MatchVerdict:
    """Decide whether a trip drove the route.

    A standard point counts as covered when some trip sample lies within
    ``max_offset_m`` of it; the trip is accepted when at least
    ``min_coverage`` of standard points are covered.
    """
    frame = route._frame
    sx, sy = frame.xy(trip.lat, trip.lon)
    px, py = frame.xy(
        [sp.position.lat for sp in route.standard_points],
        [sp.position.lon for sp in route.standard_points],
    )
    d2 = (px[:, None] - sx[None, :]) ** 2 + (py[:, None] - sy[None, :]) ** 2
    covered = np.sqrt(d2.min(axis=1)) <= max_offset_m
    coverage = float(covered.mean())

    arcs, offsets = project_points(route, trip.lat, trip.lon)
    on_route = offsets <= max_offset_m
    kept = _monotone_clean(arcs[on_route])
    n_outliers = int(on_route.sum()) - len(kept)

    accepted = coverage >= min_coverage
    reason = "" if accepted else f"coverage {coverage:.3f} below {min_coverage}"
    return MatchVerdict(accepted=accepted, coverage=coverage, n_outliers=n_outliers, reason=reason)


def extract_velocity_profile(
    trip: TripLog,
    route: Route,
    max_offset_m: float = DEFAULT_MAX_OFFSET_M,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
    verdict: MatchVerdict | None = None,
) -> VelocityProfile:
    """Reduce an accepted trip to one speed per standard point.

    Speeds interpolate linearly between the samples bracketing each
    standard point when both lie within twice the nominal sample
    spacing; wider gaps interpolate between the nearest valid standard
    points, and leading/trailing gaps copy the nearest valid value.

    Raises:
        UnmatchedTrip: the trip was rejected by ``match_trip_to_route``.
    """
    if verdict is None:
        verdict = match_trip_to_route(trip, route, max_offset_m, min_coverage)
    if not verdict.accepted:
        raise UnmatchedTrip(f"trip {trip.trip_id!r}: {verdict.reason}")

    arcs, offsets = project_points(route, trip.lat, trip.lon)
    on_route = offsets <= max_offset_m
    arcs = arcs[on_route]
    speeds = trip.speed_mps[on_route]
    kept = _monotone_clean(arcs)
    arcs, speeds = arcs[kept], speeds[kept]

    # collapse equal-arc runs (stationary vehicle) keeping the last sample
    uniq_idx = np.flatnonzero(np.append(np.diff(arcs) > 0, True))
    arcs, speeds = arcs[uniq_idx], speeds[uniq_idx]
    if len(arcs) < 2:
        raise UnmatchedTrip(f"trip {trip.trip_id!r}: too few usable samples")

    spacing = float(np.median(np.diff(arcs)))
    gap_limit = 2.0 * spacing
    sp_arcs = route.sp_arcs

    left = np.searchsorted(arcs, sp_arcs, side="right") - 1
    right = left + 1
    left_ok = left >= 0
    right_ok = right < len(arcs)
    dist_left = np.where(left_ok, sp_arcs - arcs[np.clip(left, 0, None)], np.inf)
    dist_right = np.where(right_ok, arcs[np.clip(right, None, len(arcs) - 1)] - sp_arcs, np.inf)

    values = np.interp(sp_arcs, arcs, speeds)
    both_near = (dist_left <= gap_limit) & (dist_right <= gap_limit)
    one_near = np.minimum(dist_left, dist_right) <= gap_limit
    nearest_is_left = dist_left <= dist_right
    nearest_speed = np.where(
        nearest_is_left,
        speeds[np.clip(left, 0, len(arcs) - 1)],
        speeds[np.clip(right, 0, len(arcs) - 1)],
    )
    values = np.where(both_near, values, nearest_speed)
    valid = one_near

    if not valid.any():
        raise UnmatchedTrip(f"trip {trip.trip_id!r}: no standard point near any sample")
    if not valid.all():
        idx = np.arange(len(sp_arcs))
        values = np.where(valid, values, np.interp(idx, idx[valid], values[valid]))

    return VelocityProfile(
        trip_id=trip.trip_id,
        start_epoch_s=trip.start_epoch_s,
        speeds_mps=np.maximum(values, 0.0),
    )
