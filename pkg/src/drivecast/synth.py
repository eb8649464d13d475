"""Deterministic synthetic world: road geometry, diurnal traffic, drivers.

Stands in for proprietary map/traffic databases and GPS loggers. One
master seed drives separate named streams for the world geometry, the
traffic histories, and each trip, so changing the trip count never
perturbs the world itself.

The driver persona is affine in traffic speed and curvature: speed at a
standard point is ``speed_ratio`` times the section speed sampled at the
trip start (lagged by the reaction time), minus the curvature penalty,
plus Gaussian noise. That keeps the mapping learnable from the assembled
features while staying out of reach of the non-learned baselines.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParams
from .route import (
    EARTH_RADIUS_M,
    GeoPoint,
    Route,
    ShapePoint,
    _cumulative_arcs,
    _interp_position,
    write_shape_points,
)
from .tmc import TmcHistory, TmcSection, sample_tmc, write_history_csv, write_section_table
from .trips import TripLog, VelocityProfile, parse_iso8601, write_trip_log

HISTORY_START_EPOCH = parse_iso8601("2026-03-02T00:00:00+00:00")

_DEG = 180.0 / math.pi


@dataclass(frozen=True)
class WorldParams:
    seed: int = 0
    route_length_m: float = 5000.0
    n_shape_points: int = 40
    n_sections: int = 5
    diurnal_amplitude_mps: float = 6.0
    diurnal_phase_h: float = 7.0
    congestion_rate_per_day: float = 2.0
    congestion_depth_mps: float = 8.0
    tmc_sample_period_s: float = 60.0
    history_days: float = 1.0
    base_speed_mps: float = 30.0
    winding_rad: float = 0.35
    origin_lat: float = 42.30
    origin_lon: float = -83.70

    def __post_init__(self):
        positives = {
            "route_length_m": self.route_length_m,
            "tmc_sample_period_s": self.tmc_sample_period_s,
            "history_days": self.history_days,
            "base_speed_mps": self.base_speed_mps,
        }
        for name, value in positives.items():
            if value <= 0:
                raise InvalidParams(f"{name} must be > 0, got {value}")
        if self.n_shape_points < 2:
            raise InvalidParams(f"n_shape_points must be >= 2, got {self.n_shape_points}")
        if not 1 <= self.n_sections <= self.n_shape_points:
            raise InvalidParams(
                f"n_sections must be in [1, n_shape_points], got {self.n_sections}"
            )
        if min(self.diurnal_amplitude_mps, self.congestion_rate_per_day,
               self.congestion_depth_mps, self.winding_rad) < 0:
            raise InvalidParams("amplitudes, rates and winding must be >= 0")


@dataclass(frozen=True)
class DriverPersona:
    speed_ratio: float = 1.08
    curvature_sensitivity: float = 5.0  # m/s slowdown per |curvature|*100 m
    noise_sigma_mps: float = 0.5
    reaction_lag_s: float = 1.0

    def __post_init__(self):
        if self.speed_ratio <= 0:
            raise InvalidParams(f"speed_ratio must be > 0, got {self.speed_ratio}")
        if self.noise_sigma_mps < 0:
            raise InvalidParams(f"noise_sigma_mps must be >= 0, got {self.noise_sigma_mps}")
        if self.reaction_lag_s < 0:
            raise InvalidParams(f"reaction_lag_s must be >= 0, got {self.reaction_lag_s}")


@dataclass
class SyntheticWorld:
    params: WorldParams
    shape_points: list[ShapePoint]
    sections: list[TmcSection]
    history: TmcHistory
    history_start_epoch_s: float = HISTORY_START_EPOCH


def _stream_rng(seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(name.encode()), index])
    )


def _geo_from_xy(x: float, y: float, params: WorldParams) -> GeoPoint:
    lat = params.origin_lat + (y / EARTH_RADIUS_M) * _DEG
    lon = params.origin_lon + (
        x / (EARTH_RADIUS_M * math.cos(math.radians(params.origin_lat)))
    ) * _DEG
    return GeoPoint(lat, lon)


def _generate_geometry(params: WorldParams, rng: np.random.Generator) -> list[ShapePoint]:
    n = params.n_shape_points
    segs = rng.uniform(0.7, 1.3, n - 1)
    segs *= params.route_length_m / segs.sum()
    wavelength = max(params.route_length_m / 3.0, 1.0)
    phase = rng.uniform(0, 2 * math.pi)

    # lane and speed-limit zones switch at a few interior points
    lane_changes = sorted(rng.choice(np.arange(5, n - 5), size=2, replace=False)) if n > 12 else []
    lanes_by_zone = [int(rng.integers(2, 5)) for _ in range(len(lane_changes) + 1)]
    limit_changes = sorted(rng.choice(np.arange(5, n - 5), size=2, replace=False)) if n > 12 else []
    limits_by_zone = [float(rng.choice([24.6, 29.1, 31.3])) for _ in range(len(limit_changes) + 1)]

    points = []
    x = y = s = 0.0
    for i in range(n):
        lane_zone = sum(1 for c in lane_changes if i >= c)
        limit_zone = sum(1 for c in limit_changes if i >= c)
        altitude = 240.0 + 18.0 * math.sin(2 * math.pi * s / 2800.0 + 0.7)
        points.append(
            ShapePoint(
                position=_geo_from_xy(x, y, params),
                altitude_m=altitude,
                lanes=lanes_by_zone[lane_zone],
                speed_limit_mps=limits_by_zone[limit_zone],
            )
        )
        if i < n - 1:
            heading = params.winding_rad * math.sin(2 * math.pi * s / wavelength + phase)
            x += segs[i] * math.cos(heading)
            y += segs[i] * math.sin(heading)
            s += segs[i]
    return points


def _generate_sections(
    params: WorldParams, shape_points: list[ShapePoint], rng: np.random.Generator
) -> list[TmcSection]:
    positions = [sp.position for sp in shape_points]
    arcs = _cumulative_arcs(positions)
    total = float(arcs[-1])
    n = params.n_sections
    bounds = [0.0]
    for i in range(1, n):
        jitter = rng.uniform(-0.15, 0.15) * total / n
        bounds.append(i * total / n + jitter)
    bounds.append(total)

    sections = []
    for i in range(n):
        lo, hi = bounds[i], bounds[i + 1]
        vertex_arcs = [lo] + [float(a) for a in arcs if lo < a < hi] + [hi]
        geometry = [_interp_position(positions, arcs, a) for a in vertex_arcs]
        sections.append(
            TmcSection(code=f"SEC{i + 1:02d}", geometry=geometry, start_arc_m=lo, end_arc_m=hi)
        )
    return sections


def _generate_history(
    params: WorldParams, sections: list[TmcSection], rng: np.random.Generator
) -> TmcHistory:
    period = params.tmc_sample_period_s
    n_samples = int(params.history_days * 86400.0 / period)
    ts = HISTORY_START_EPOCH + period * np.arange(n_samples)
    hours = ((ts - HISTORY_START_EPOCH) / 3600.0) % 24.0
    diurnal = 0.5 * (1.0 + np.sin(2 * math.pi * (hours - params.diurnal_phase_h) / 24.0))

    series = {}
    for section in sections:
        freeflow = params.base_speed_mps + float(rng.uniform(-2.0, 3.0))
        current = freeflow - params.diurnal_amplitude_mps * diurnal
        n_events = rng.poisson(params.congestion_rate_per_day * params.history_days)
        for _ in range(n_events):
            center = float(rng.uniform(ts[0], ts[-1]))
            width = float(rng.uniform(300.0, 900.0))
            depth = float(rng.uniform(0.3, 1.0)) * params.congestion_depth_mps
            current = current - depth * np.exp(-0.5 * ((ts - center) / width) ** 2)
        current = np.clip(current, 2.0, None)
        series[section.code] = (ts.copy(), current, np.full(n_samples, freeflow))
    return TmcHistory(series=series, sample_period_s=period)


def generate_world(params: WorldParams) -> SyntheticWorld:
    """Build geometry, sections, and traffic history from one seed."""
    shape_points = _generate_geometry(params, _stream_rng(params.seed, "world"))
    sections = _generate_sections(params, shape_points, _stream_rng(params.seed, "sections"))
    history = _generate_history(params, sections, _stream_rng(params.seed, "traffic"))
    return SyntheticWorld(params=params, shape_points=shape_points, sections=sections,
                          history=history)


def write_world(world: SyntheticWorld, out_dir: str) -> dict[str, str]:
    """Write route, section table, and per-day history files.

    Returns the paths keyed by role ("route", "sections", "history_dir").
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    route_path = out / "route.csv"
    sections_path = out / "sections.csv"
    history_dir = out / "history"
    history_dir.mkdir(exist_ok=True)

    write_shape_points(world.shape_points, str(route_path))
    write_section_table(world.sections, str(sections_path))

    period = world.params.tmc_sample_period_s
    n_days = max(1, int(math.ceil(world.params.history_days)))
    for day in range(n_days):
        t_lo = HISTORY_START_EPOCH + day * 86400.0
        t_hi = t_lo + 86400.0
        rows = []
        for code in sorted(world.history.series):
            ts, cur, free = world.history.series[code]
            mask = (ts >= t_lo) & (ts < t_hi)
            rows.extend(zip([code] * int(mask.sum()), ts[mask], cur[mask], free[mask]))
        rows.sort(key=lambda r: (r[1], r[0]))
        write_history_csv(rows, str(history_dir / f"day_{day:03d}.csv"))

    return {
        "route": str(route_path),
        "sections": str(sections_path),
        "history_dir": str(history_dir),
    }


def persona_profile(
    route: Route,
    history: TmcHistory,
    persona: DriverPersona,
    trip_start: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Driver speed at each standard point for one trip."""
    speeds = []
    t_ref = trip_start - persona.reaction_lag_s
    for sp in route.standard_points:
        traffic = sample_tmc(history, sp.tmc_code, t_ref)
        v = (
            persona.speed_ratio * traffic
            - persona.curvature_sensitivity * abs(sp.curvature_per_m) * 100.0
        )
        if persona.noise_sigma_mps > 0:
            v += float(rng.normal(0.0, persona.noise_sigma_mps))
        speeds.append(max(v, 1.0))
    return np.array(speeds)


def _bearing_deg(positions: list[GeoPoint], arcs: np.ndarray, s: float) -> float:
    j = int(np.searchsorted(arcs, s, side="right")) - 1
    j = min(max(j, 0), len(positions) - 2)
    a, b = positions[j], positions[j + 1]
    dy = b.lat - a.lat
    dx = (b.lon - a.lon) * math.cos(math.radians(a.lat))
    return (90.0 - math.degrees(math.atan2(dy, dx))) % 360.0


def synthesize_trip(
    route: Route,
    profile_speeds: np.ndarray,
    trip_id: str,
    trip_start: float,
) -> TripLog:
    """Integrate a per-point speed profile into a 1 Hz GPS log."""
    positions = [sp.position for sp in route.shape_points]
    arcs = _cumulative_arcs(positions)
    shape_alts = np.array([sp.altitude_m for sp in route.shape_points])
    sp_arcs = route.sp_arcs
    total = route.total_length_m

    def speed_at(s: float) -> float:
        return float(np.interp(s, sp_arcs, profile_speeds))

    t_rel, lats, lons, speeds, headings, alts = [], [], [], [], [], []

    def record(t: float, s: float) -> None:
        pos = _interp_position(positions, arcs, s)
        t_rel.append(t)
        lats.append(pos.lat)
        lons.append(pos.lon)
        speeds.append(speed_at(s))
        headings.append(_bearing_deg(positions, arcs, s))
        alts.append(float(np.interp(s, arcs, shape_alts)))

    t, s = 0.0, 0.0
    record(t, s)
    sub = 0.1  # integration sub-step, seconds
    while s < total:
        for _ in range(10):
            # floor keeps the integration advancing even on a zero-speed profile
            s += max(speed_at(s), 0.1) * sub
            t += sub
            if s >= total:
                break
        t = round(t, 6)
        record(t, min(s, total))
    return TripLog(
        trip_id=trip_id,
        start_epoch_s=trip_start,
        t_rel_s=np.array(t_rel),
        lat=np.array(lats),
        lon=np.array(lons),
        speed_mps=np.array(speeds),
        heading_deg=np.array(headings),
        altitude_m=np.array(alts),
    )


def generate_trips(
    world: SyntheticWorld,
    persona: DriverPersona,
    count: int,
    seed: int,
    spacing_m: float = 100.0,
) -> list[tuple[TripLog, VelocityProfile]]:
    """Simulate repeated drives of the route by one driver.

    Each trip draws its own stream from the seed, so trips 0..k are
    identical regardless of the requested count.
    """
    from .route import build_route
    from .tmc import map_route_to_tmc

    if count < 1:
        raise InvalidParams(f"count must be >= 1, got {count}")
    route = build_route(world.shape_points, spacing_m=spacing_m)
    map_route_to_tmc(route, world.sections)

    span = world.params.history_days * 86400.0
    margin = 20.0 * world.params.tmc_sample_period_s
    est_duration = route.total_length_m / 5.0 + 120.0
    lo = HISTORY_START_EPOCH + margin
    hi = HISTORY_START_EPOCH + span - est_duration
    if hi <= lo:
        raise InvalidParams("history span too short for trip generation")

    trips = []
    for i in range(count):
        rng = _stream_rng(seed, "trips", i)
        trip_start = float(round(rng.uniform(lo, hi)))
        speeds = persona_profile(route, world.history, persona, trip_start, rng)
        trip_id = f"trip_{i:03d}"
        log = synthesize_trip(route, speeds, trip_id, trip_start)
        trips.append((log, VelocityProfile(trip_id, trip_start, speeds)))
    return trips


def write_trips(
    trips: list[tuple[TripLog, VelocityProfile]], out_dir: str
) -> dict[str, str]:
    """Write trip logs plus the exact ground-truth profiles used."""
    import csv

    out = Path(out_dir)
    trips_dir = out / "trips"
    trips_dir.mkdir(parents=True, exist_ok=True)
    for log, _ in trips:
        write_trip_log(log, str(trips_dir / f"{log.trip_id}.csv"))
    truths_path = out / "ground_truth_profiles.csv"
    with open(truths_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["trip_id", "start_epoch_s", "sp_index", "speed_mps"])
        for _, profile in trips:
            for idx, v in enumerate(profile.speeds_mps):
                writer.writerow(
                    [profile.trip_id, repr(profile.start_epoch_s), idx, repr(float(v))]
                )
    return {"trips_dir": str(trips_dir), "ground_truth": str(truths_path)}
