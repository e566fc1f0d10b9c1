import numpy as np
import pytest

from quadsky.core import EntityCollection, SpatialEntity
from quadsky.similarity import Taxonomy


def ent(source="gp", id_="1", lat=57.0, lon=9.9, name="Cafe", **kw):
    return SpatialEntity(source, id_, lat, lon, name, **kw)


def offset(lat, lon, dx_m, dy_m):
    """Move a point dx metres east and dy metres north."""
    k = 6_371_000.0 * np.pi / 180
    return lat + dy_m / k, lon + dx_m / (k * np.cos(np.radians(lat)))


def collection_from_xy(xy, lat0=57.0, lon0=9.9):
    out = []
    for i, (x, y) in enumerate(xy):
        lat, lon = offset(lat0, lon0, x, y)
        out.append(ent("s", f"{i:06d}", lat, lon, f"E{i}"))
    return EntityCollection(out)


@pytest.fixture
def toy_taxonomy():
    # root -> A -> {B, C}; root -> D
    return Taxonomy([("root", "ROOT"), ("A", "root"), ("B", "A"), ("C", "A"), ("D", "root")])


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a one-line criterion verdict for the end-of-run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(line: str) -> None:
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
