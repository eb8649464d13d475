import math

import pytest

from drivecast.route import EARTH_RADIUS_M, GeoPoint, ShapePoint, build_route

DEG = 180.0 / math.pi


def geo_at(x_m: float, y_m: float, lat0: float = 0.0, lon0: float = 0.0) -> GeoPoint:
    """GeoPoint at a planar (east, north) meter offset from (lat0, lon0)."""
    lat = lat0 + (y_m / EARTH_RADIUS_M) * DEG
    lon = lon0 + (x_m / (EARTH_RADIUS_M * math.cos(math.radians(lat0)))) * DEG
    return GeoPoint(lat, lon)


def make_shape_points(xy, lat0=0.0, lon0=0.0, altitude=250.0, lanes=2,
                      speed_limit=30.0, tmc_code=""):
    return [
        ShapePoint(
            position=geo_at(x, y, lat0, lon0),
            altitude_m=altitude,
            lanes=lanes,
            speed_limit_mps=speed_limit,
            tmc_code=tmc_code,
        )
        for x, y in xy
    ]


@pytest.fixture
def straight_route_1km():
    """Straight eastward 1000 m polyline at the equator, spacing 100 m."""
    shape = make_shape_points([(0, 0), (400, 0), (1000, 0)])
    return build_route(shape, spacing_m=100.0)
