"""TMC traffic-history handling: section cover mapping and history extraction.

Maps a route to the minimum ordered sequence of TMC sections covering its
standard points, then pulls all matching records out of an archive of
history files. Temporal lookups are zero-order hold: TMC broadcasts are
stepwise, so the speed at time t is the latest observation at or before t.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NoData, ParseError, UncoveredPoint
from .route import GeoPoint, Route

logger = logging.getLogger(__name__)

HISTORY_FILE_FIELDS = ["tmc_code", "timestamp_utc_s", "current_speed_mps", "freeflow_speed_mps"]
SECTION_FILE_FIELDS = ["tmc_code", "geometry"]

DEFAULT_LATERAL_THRESHOLD_M = 30.0
DEFAULT_SAMPLE_PERIOD_S = 60.0


@dataclass(frozen=True)
class TmcObservation:
    code: str
    timestamp: float
    current_speed_mps: float
    freeflow_speed_mps: float

    def __post_init__(self):
        if self.current_speed_mps < 0:
            raise ValueError(f"current_speed_mps must be >= 0, got {self.current_speed_mps}")
        if self.freeflow_speed_mps <= 0:
            raise ValueError(f"freeflow_speed_mps must be > 0, got {self.freeflow_speed_mps}")


@dataclass
class TmcSection:
    """A coded stretch of road; arc span is filled when mapped to a route."""

    code: str
    geometry: list[GeoPoint]
    start_arc_m: float | None = None
    end_arc_m: float | None = None


@dataclass
class TmcHistory:
    """Per-code observation series, each sorted ascending by timestamp."""

    series: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    sample_period_s: float = DEFAULT_SAMPLE_PERIOD_S
    missing_codes: tuple[str, ...] = ()

    @property
    def codes(self) -> list[str]:
        return list(self.series)

    def observations(self, code: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(timestamps, current speeds, freeflow speeds) for a code."""
        if code not in self.series:
            raise NoData(code)
        return self.series[code]

    def __len__(self) -> int:
        return sum(len(ts) for ts, _, _ in self.series.values())


def minimum_interval_cover(intervals: Sequence[tuple[int, int]], n_points: int) -> list[int]:
    """Minimum ordered subset of index intervals covering 0..n_points-1.

    Greedy farthest-reach selection, optimal for interval covering on a
    line. Returns positions into ``intervals`` in cover order.

    Raises:
        UncoveredPoint: some point is covered by no interval.
    """
    chosen: list[int] = []
    covered_until = -1
    while covered_until < n_points - 1:
        target = covered_until + 1
        best = -1
        for i, (lo, hi) in enumerate(intervals):
            if lo <= target <= hi and (best < 0 or hi > intervals[best][1]):
                best = i
        if best < 0:
            raise UncoveredPoint(target)
        chosen.append(best)
        covered_until = intervals[best][1]
    return chosen


def _point_to_polyline_distances(route: Route, geometry: list[GeoPoint]) -> np.ndarray:
    """Distance from every standard point to a section polyline, meters."""
    frame = route._frame
    px, py = frame.xy(
        [sp.position.lat for sp in route.standard_points],
        [sp.position.lon for sp in route.standard_points],
    )
    gx, gy = frame.xy([g.lat for g in geometry], [g.lon for g in geometry])
    if len(geometry) == 1:
        return np.hypot(px - gx[0], py - gy[0])
    ax, ay = gx[:-1][None, :], gy[:-1][None, :]
    dx, dy = np.diff(gx)[None, :], np.diff(gy)[None, :]
    len2 = dx * dx + dy * dy
    t = ((px[:, None] - ax) * dx + (py[:, None] - ay) * dy) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    d2 = (px[:, None] - (ax + t * dx)) ** 2 + (py[:, None] - (ay + t * dy)) ** 2
    return np.sqrt(d2.min(axis=1))


def map_route_to_tmc(
    route: Route,
    sections: Sequence[TmcSection],
    lateral_threshold_m: float = DEFAULT_LATERAL_THRESHOLD_M,
) -> list[str]:
    """Assign every standard point its covering section; return the cover.

    The cover is the minimum-cardinality ordered code sequence such that
    each standard point lies within ``lateral_threshold_m`` of its
    assigned section. Overlap points go to the section with the longest
    remaining coverage. Also fills each mapped section's arc span and
    writes ``tmc_code`` onto the route's standard points.
    """
    from .route import project_points  # local import to keep module load light

    n = len(route.standard_points)
    covered: list[np.ndarray] = []
    intervals: list[tuple[int, int]] = []
    usable: list[int] = []
    for si, section in enumerate(sections):
        dists = _point_to_polyline_distances(route, section.geometry)
        mask = dists <= lateral_threshold_m
        if mask.any():
            idx = np.flatnonzero(mask)
            covered.append(mask)
            intervals.append((int(idx[0]), int(idx[-1])))
            usable.append(si)

    chosen_local = minimum_interval_cover(intervals, n)
    chosen = [usable[i] for i in chosen_local]

    # Longest-remaining-coverage assignment on overlap points.
    for i, sp in enumerate(route.standard_points):
        best = -1
        best_hi = -1
        for ci, li in zip(chosen, chosen_local):
            lo, hi = intervals[li]
            if lo <= i <= hi and covered[li][i] and hi > best_hi:
                best, best_hi = ci, hi
        if best < 0:
            raise UncoveredPoint(i)
        sp.tmc_code = sections[best].code

    for ci in chosen:
        section = sections[ci]
        arcs, _ = project_points(
            route,
            [g.lat for g in section.geometry],
            [g.lon for g in section.geometry],
        )
        section.start_arc_m = float(arcs.min())
        section.end_arc_m = float(arcs.max())

    return [sections[ci].code for ci in chosen]


def _resolve_archive(archive: str | Path | Iterable[str | Path]) -> list[Path]:
    if isinstance(archive, (str, Path)):
        p = Path(archive)
        if p.is_dir():
            return sorted(p.glob("*.csv"))
        return [p]
    return [Path(a) for a in archive]


def extract_tmc_history(
    codes: Sequence[str],
    archive: str | Path | Iterable[str | Path],
    sample_period_s: float | None = None,
) -> TmcHistory:
    """Merge all archive records for the requested codes into one history.

    Duplicate (code, timestamp) records keep the last-read value, so
    re-ingesting corrected files is deterministic. Codes absent from the
    archive are reported in ``missing_codes`` (warning, not an error).
    """
    wanted = set(codes)
    staged: dict[str, dict[float, tuple[float, float]]] = {c: {} for c in wanted}
    for path in _resolve_archive(archive):
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != HISTORY_FILE_FIELDS:
                raise ParseError(str(path), 1, f"expected header {','.join(HISTORY_FILE_FIELDS)}")
            for row in reader:
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                code = row[0]
                if code not in wanted:
                    continue
                try:
                    ts = float(row[1])
                    cur = float(row[2])
                    free = float(row[3])
                except (ValueError, IndexError) as exc:
                    raise ParseError(str(path), reader.line_num, ",".join(row)) from exc
                if cur < 0 or free <= 0:
                    raise ParseError(str(path), reader.line_num, f"invalid speeds: {','.join(row)}")
                staged[code][ts] = (cur, free)

    series = {}
    missing = []
    for code in codes:
        if code in series:
            continue
        rows = staged.get(code) or {}
        if not rows:
            missing.append(code)
            continue
        ts = np.array(sorted(rows))
        cur = np.array([rows[t][0] for t in ts])
        free = np.array([rows[t][1] for t in ts])
        series[code] = (ts, cur, free)

    if missing:
        logger.warning("no history records for codes: %s", ", ".join(missing))

    if sample_period_s is None:
        diffs = [np.diff(ts) for ts, _, _ in series.values() if len(ts) > 1]
        sample_period_s = float(np.median(np.concatenate(diffs))) if diffs else DEFAULT_SAMPLE_PERIOD_S

    return TmcHistory(series=series, sample_period_s=sample_period_s, missing_codes=tuple(missing))


def sample_tmc(history: TmcHistory, code: str, t: float) -> float:
    """Current speed for a code at time t (zero-order hold, clamped)."""
    ts, cur, _ = history.observations(code)
    if len(ts) == 0:
        raise NoData(code)
    idx = int(np.searchsorted(ts, t, side="right")) - 1
    return float(cur[max(idx, 0)])


def load_section_table(path: str) -> list[TmcSection]:
    """Read a section table file (code + semicolon-separated lat:lon list)."""
    sections = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SECTION_FILE_FIELDS:
            raise ParseError(path, 1, f"expected header {','.join(SECTION_FILE_FIELDS)}")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                code = row[0].strip()
                if code in seen:
                    raise ValueError(f"duplicate section code {code!r}")
                seen.add(code)
                geometry = []
                for vertex in row[1].split(";"):
                    lat_s, lon_s = vertex.split(":")
                    geometry.append(GeoPoint(float(lat_s), float(lon_s)))
                if not geometry:
                    raise ValueError("empty geometry")
                sections.append(TmcSection(code=code, geometry=geometry))
            except (ValueError, IndexError) as exc:
                raise ParseError(path, reader.line_num, str(exc)) from exc
    return sections


def write_section_table(sections: Sequence[TmcSection], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SECTION_FILE_FIELDS)
        for s in sections:
            geom = ";".join(f"{repr(g.lat)}:{repr(g.lon)}" for g in s.geometry)
            writer.writerow([s.code, geom])


def write_history_csv(rows: Iterable[tuple[str, float, float, float]], path: str) -> None:
    """Write (code, timestamp, current, freeflow) rows in the archive schema."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_FILE_FIELDS)
        for code, ts, cur, free in rows:
            writer.writerow([code, repr(float(ts)), repr(float(cur)), repr(float(free))])
