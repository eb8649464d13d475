"""Route geometry: shape points, equally spaced standard points, projections.

A route is a polyline of shape points (map vertices carrying road
attributes) resampled into standard points every ``spacing_m`` meters of
arc length. All distances are meters; coordinates are WGS-84 degrees.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRoute, ParseError

EARTH_RADIUS_M = 6_371_000.0

# Curvatures below this (radius > 1e12 m) are indistinguishable from
# floating-point noise of the planar cross product and snap to zero.
_CURVATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 position in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"lat out of range [-90, 90]: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"lon out of range [-180, 180]: {self.lon}")


@dataclass(frozen=True)
class ShapePoint:
    """Map-geometry vertex with the road attributes it carries."""

    position: GeoPoint
    altitude_m: float
    lanes: int
    speed_limit_mps: float
    tmc_code: str = ""

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes}")
        if self.speed_limit_mps <= 0:
            raise ValueError(f"speed_limit_mps must be > 0, got {self.speed_limit_mps}")


@dataclass
class StandardPoint:
    """One of the equally spaced points a route is resampled into.

    ``tmc_code`` starts as the upstream shape point's code and is
    overwritten by the section-cover assignment (see ``tmc`` module).
    """

    index: int
    position: GeoPoint
    arc_position_m: float
    dist_to_upstream_shape_m: float
    curvature_per_m: float
    altitude_m: float
    lanes: int
    speed_limit_mps: float
    tmc_code: str = ""


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


class _PlanarFrame:
    """Equirectangular projection about a reference point.

    Adequate for route-scale geometry (tens of km); all offsets and
    curvature estimates here are local, so global distortion stays far
    below the tolerances used in this package.
    """

    def __init__(self, origin: GeoPoint):
        self.origin = origin
        self._coslat = math.cos(math.radians(origin.lat))
        self._scale = EARTH_RADIUS_M * math.pi / 180.0

    def xy(self, lat, lon):
        x = (np.asarray(lon, dtype=float) - self.origin.lon) * self._scale * self._coslat
        y = (np.asarray(lat, dtype=float) - self.origin.lat) * self._scale
        return x, y


def _dedupe(points: list[GeoPoint]) -> list[int]:
    """Indices of points after dropping consecutive duplicates."""
    kept = [0]
    for i in range(1, len(points)):
        prev = points[kept[-1]]
        if points[i].lat != prev.lat or points[i].lon != prev.lon:
            kept.append(i)
    return kept


def _cumulative_arcs(points: list[GeoPoint]) -> np.ndarray:
    arcs = np.zeros(len(points))
    for i in range(1, len(points)):
        arcs[i] = arcs[i - 1] + haversine_distance(points[i - 1], points[i])
    return arcs


def _interp_position(points: list[GeoPoint], arcs: np.ndarray, arc: float) -> GeoPoint:
    """Position at an arc length, linear in lat/lon within a segment."""
    j = int(np.searchsorted(arcs, arc, side="right")) - 1
    j = min(max(j, 0), len(points) - 2)
    seg = arcs[j + 1] - arcs[j]
    f = 0.0 if seg <= 0 else (arc - arcs[j]) / seg
    f = min(max(f, 0.0), 1.0)
    a, b = points[j], points[j + 1]
    return GeoPoint(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))


def curvature_at(shape_points: list[ShapePoint], arc_position_m: float) -> float:
    """Signed curvature (1/m) at an arc position along the shape polyline.

    Menger circumradius formula on the vertex triple around the nearest
    interior vertex, evaluated in a local planar projection. Positive
    means a left turn; collinear neighborhoods return 0. Endpoints use
    the nearest interior triple.
    """
    positions = [sp.position for sp in shape_points]
    kept = _dedupe(positions)
    positions = [positions[i] for i in kept]
    if len(positions) < 3:
        return 0.0
    arcs = _cumulative_arcs(positions)
    interior = np.arange(1, len(positions) - 1)
    v = int(interior[np.argmin(np.abs(arcs[interior] - arc_position_m))])

    frame = _PlanarFrame(positions[v])
    pts = positions[v - 1 : v + 2]
    x, y = frame.xy([p.lat for p in pts], [p.lon for p in pts])
    abx, aby = x[1] - x[0], y[1] - y[0]
    bcx, bcy = x[2] - x[1], y[2] - y[1]
    cross = abx * bcy - aby * bcx
    d_ab = math.hypot(abx, aby)
    d_bc = math.hypot(bcx, bcy)
    d_ca = math.hypot(x[2] - x[0], y[2] - y[0])
    if d_ab == 0.0 or d_bc == 0.0 or d_ca == 0.0:
        return 0.0
    k = 2.0 * cross / (d_ab * d_bc * d_ca)
    return 0.0 if abs(k) < _CURVATURE_FLOOR else k


@dataclass
class Route:
    """Shape-point polyline plus its standard-point resampling."""

    shape_points: list[ShapePoint]
    standard_points: list[StandardPoint]
    spacing_m: float
    _arcs: np.ndarray = field(init=False, repr=False)
    _vx: np.ndarray = field(init=False, repr=False)
    _vy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        positions = [sp.position for sp in self.shape_points]
        self._arcs = _cumulative_arcs(positions)
        mid = positions[len(positions) // 2]
        self._frame = _PlanarFrame(mid)
        self._vx, self._vy = self._frame.xy(
            [p.lat for p in positions], [p.lon for p in positions]
        )

    @property
    def total_length_m(self) -> float:
        return float(self._arcs[-1])

    def __len__(self) -> int:
        return len(self.standard_points)

    @property
    def sp_arcs(self) -> np.ndarray:
        return np.array([sp.arc_position_m for sp in self.standard_points])


def build_route(shape_points: list[ShapePoint], spacing_m: float = 100.0) -> Route:
    """Resample a shape-point polyline into standard points.

    Standard points sit at arc lengths 0, spacing, 2*spacing, ... plus a
    terminal point at the exact route end when the length is not a
    multiple of the spacing. Lanes, speed limit and tmc code come from
    the upstream shape point; altitude is interpolated linearly.

    Raises:
        DegenerateRoute: fewer than 2 distinct shape points, zero
            length, or total length below the spacing.
    """
    if spacing_m <= 0:
        raise ValueError(f"spacing_m must be > 0, got {spacing_m}")
    kept = _dedupe([sp.position for sp in shape_points]) if shape_points else []
    points = [shape_points[i] for i in kept]
    if len(points) < 2:
        raise DegenerateRoute("need at least 2 distinct shape points")
    positions = [sp.position for sp in points]
    arcs = _cumulative_arcs(positions)
    total = float(arcs[-1])
    if total <= 0.0:
        raise DegenerateRoute("route has zero length")
    if total < spacing_m:
        raise DegenerateRoute(
            f"route length {total:.1f} m shorter than spacing {spacing_m} m"
        )

    n_whole = int(math.floor(total / spacing_m + 1e-9))
    targets = [i * spacing_m for i in range(n_whole + 1)]
    if targets[-1] < total * (1.0 - 1e-9):
        targets.append(total)
    targets[-1] = min(targets[-1], total)

    standard_points = []
    for idx, a in enumerate(targets):
        u = int(np.searchsorted(arcs, a, side="right")) - 1
        u = min(max(u, 0), len(points) - 1)
        src = points[u]
        if u + 1 < len(points):
            seg = arcs[u + 1] - arcs[u]
            f = 0.0 if seg <= 0 else (a - arcs[u]) / seg
            alt = src.altitude_m + f * (points[u + 1].altitude_m - src.altitude_m)
        else:
            alt = src.altitude_m
        standard_points.append(
            StandardPoint(
                index=idx,
                position=_interp_position(positions, arcs, a),
                arc_position_m=float(a),
                dist_to_upstream_shape_m=float(a - arcs[u]),
                curvature_per_m=curvature_at(points, a),
                altitude_m=float(alt),
                lanes=src.lanes,
                speed_limit_mps=src.speed_limit_mps,
                tmc_code=src.tmc_code,
            )
        )
    return Route(shape_points=points, standard_points=standard_points, spacing_m=spacing_m)


def project_points(route: Route, lats, lons) -> tuple[np.ndarray, np.ndarray]:
    """Project positions onto the route polyline.

    Returns (arc positions, lateral offsets) in meters, one pair per
    input point. Points beyond the ends clamp to the nearest endpoint.
    """
    px, py = route._frame.xy(lats, lons)
    px = np.atleast_1d(px)[:, None]
    py = np.atleast_1d(py)[:, None]
    ax, ay = route._vx[:-1][None, :], route._vy[:-1][None, :]
    dx = np.diff(route._vx)[None, :]
    dy = np.diff(route._vy)[None, :]
    len2 = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    cx = ax + t * dx
    cy = ay + t * dy
    d2 = (px - cx) ** 2 + (py - cy) ** 2
    best = np.argmin(d2, axis=1)
    rows = np.arange(len(best))
    seg_lens = np.diff(route._arcs)
    arc = route._arcs[best] + t[rows, best] * seg_lens[best]
    offset = np.sqrt(d2[rows, best])
    return arc, offset


def project_point(route: Route, p: GeoPoint) -> tuple[float, float]:
    """Arc position and lateral offset of the projection of ``p``."""
    arc, offset = project_points(route, [p.lat], [p.lon])
    return float(arc[0]), float(offset[0])


ROUTE_FILE_FIELDS = ["lat", "lon", "altitude_m", "lanes", "speed_limit_mps", "tmc_code"]


def load_shape_points(path: str) -> list[ShapePoint]:
    """Read a route geometry file (CSV, one shape point per row)."""
    points = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ROUTE_FILE_FIELDS:
            raise ParseError(path, 1, f"expected header {','.join(ROUTE_FILE_FIELDS)}")
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                points.append(
                    ShapePoint(
                        position=GeoPoint(float(row[0]), float(row[1])),
                        altitude_m=float(row[2]),
                        lanes=int(row[3]),
                        speed_limit_mps=float(row[4]),
                        tmc_code=row[5].strip(),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise ParseError(path, reader.line_num, str(exc)) from exc
    if not points:
        raise ParseError(path, 1, "no shape points in file")
    return points


def write_shape_points(points: list[ShapePoint], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ROUTE_FILE_FIELDS)
        for sp in points:
            writer.writerow(
                [
                    repr(sp.position.lat),
                    repr(sp.position.lon),
                    repr(sp.altitude_m),
                    sp.lanes,
                    repr(sp.speed_limit_mps),
                    sp.tmc_code,
                ]
            )
