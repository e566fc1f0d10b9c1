import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsky.core import EntityCollection, QuadSkyError
from quadsky.geo import EARTH_RADIUS_M, Projection, haversine, haversine_many, project

from conftest import ent

DEG = EARTH_RADIUS_M * math.pi / 180  # 111,194.93 m


def test_haversine_examples():
    assert haversine((10, 20), (10, 20)) == 0
    assert haversine((0, 0), (0, 1)) == pytest.approx(111_194.9, abs=0.1)
    assert haversine((0, 0), (1, 0)) == pytest.approx(111_194.9, abs=0.1)


def test_projection_examples():
    c = EntityCollection([ent(id_="a", lat=59.5, lon=10.0), ent(id_="b", lat=60.5, lon=10.0)])
    pts, proj = project(c)
    assert proj.lat0 == pytest.approx(60.0)
    assert pts[1, 1] == pytest.approx(DEG / 2)
    x, y = proj.forward(60.0, 11.0)
    assert float(x) == pytest.approx(55_597.5, abs=0.1)
    assert float(y) == pytest.approx(0.0)
    cx, cy = proj.forward(proj.lat0, proj.lon0)
    assert (float(cx), float(cy)) == (0.0, 0.0)
    y1 = proj.forward(61.0, proj.lon0)[1]
    assert float(y1) == pytest.approx(111_194.9, abs=0.1)


def test_project_errors():
    with pytest.raises(QuadSkyError):
        project(EntityCollection([]))
    with pytest.raises(QuadSkyError, match="antimeridian"):
        project(EntityCollection([ent(id_="a", lon=-179.5), ent(id_="b", lon=179.5)]))
    with pytest.raises(QuadSkyError, match="polar"):
        project(EntityCollection([ent(id_="a", lat=89.5)]))


lat_s = st.floats(-60, 60)
lon_s = st.floats(-170, 170)


@settings(max_examples=200, deadline=None)
@given(lat_s, lon_s, st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_round_trip(lat0, lon0, dlat, dlon):
    p = Projection(lat0, lon0)
    x, y = p.forward(lat0 + dlat, lon0 + dlon)
    lat, lon = p.inverse(x, y)
    assert abs(float(lat) - (lat0 + dlat)) < 1e-6 and abs(float(lon) - (lon0 + dlon)) < 1e-6


@settings(max_examples=200, deadline=None)
@given(lat_s, lon_s, *[st.floats(-0.5, 0.5)] * 6)
def test_haversine_metric_properties(lat, lon, a, b, c, d, e, f):
    p, q, r = (lat + a, lon + b), (lat + c, lon + d), (lat + e, lon + f)
    assert haversine(p, q) == pytest.approx(haversine(q, p), rel=1e-12, abs=1e-9)
    assert haversine(p, q) >= 0
    assert haversine(p, r) <= (haversine(p, q) + haversine(q, r)) * (1 + 1e-6) + 1e-6


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    a = rng.uniform(-60, 60, (100, 2))
    b = a + rng.uniform(-1, 1, (100, 2))
    got = haversine_many(a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    want = [haversine(tuple(p), tuple(q)) for p, q in zip(a, b)]
    assert np.allclose(got, want, rtol=1e-12)


def _pairs_error(lat0, half_deg, n=500, seed=1):
    rng = np.random.default_rng(seed)
    lat = lat0 + rng.uniform(-half_deg, half_deg, n)
    lon = 10 + rng.uniform(-half_deg, half_deg, n) / math.cos(math.radians(lat0))
    c = EntityCollection([ent(id_=str(i), lat=la, lon=lo) for i, (la, lo) in enumerate(zip(lat, lon))])
    pts, proj = project(c)
    i, j = rng.integers(0, n, (2, 4000))
    keep = i != j
    i, j = i[keep], j[keep]
    hv = haversine_many(lat[i], lon[i], lat[j], lon[j])
    eu = np.hypot(*(pts[i] - pts[j]).T)
    rel = np.abs(hv - eu) / hv
    # east-west scale is exact only at the reference latitude
    phis = np.radians(lat)
    bound = np.abs(math.cos(math.radians(proj.lat0)) / np.cos(phis) - 1).max()
    return rel.max(), bound


@pytest.mark.parametrize("lat0", [0.0, 30.0, 57.0, 65.0])
def test_projection_error_within_scale_bound(lat0):
    err, bound = _pairs_error(lat0, 0.6)
    assert err <= bound * 1.01 + 1e-5


@pytest.mark.parametrize("lat0,half_deg", [(0.0, 0.6), (57.0, 0.02), (65.0, 0.02)])
def test_projection_error_below_1e3_where_bound_allows(lat0, half_deg):
    # 100 km on the equator, about 2 km at Nordic latitudes (blocking scale)
    err, _ = _pairs_error(lat0, half_deg)
    assert err < 1e-3
