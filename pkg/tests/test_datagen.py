import math
from collections import defaultdict

import numpy as np
import pytest

from quadsky import io as qio
from quadsky.core import QuadSkyError
from quadsky.datagen import (DEFAULT_AREA, NoiseSpec, default_taxonomy, generate, oracle_fnn, oracle_fnn_indices,
                             oracle_skyline)
from quadsky.geo import haversine
from quadsky.similarity import Comparator
from quadsky.skyrank import peel
from quadsky.core import CandidatePair

from conftest import collection_from_xy, ent, offset


def test_dup_rate_zero_has_no_truth():
    coll, truth = generate(200, dup_rate=0.0, seed=1)
    assert len(coll) == 200 and truth == set()


def test_sizes_sources_and_truth_shape():
    coll, truth = generate(1200, sources=3, dup_rate=0.2, seed=2)
    assert len(coll) == 1200
    assert len(truth) == 1200 - math.ceil(1200 / 1.2)
    assert {e.source for e in coll} == {"s1", "s2", "s3"}
    for a, b in truth:
        assert a < b and a[0] != b[0]
        assert a in coll and b in coll
    lat0, lon0, lat1, lon1 = DEFAULT_AREA
    ll = coll.latlon()
    inside = (ll[:, 0] >= lat0) & (ll[:, 0] <= lat1) & (ll[:, 1] >= lon0) & (ll[:, 1] <= lon1)
    assert inside.mean() > 0.95


def test_fixed_seed_is_byte_identical(tmp_path):
    for k in range(2):
        coll, truth = generate(500, seed=7)
        qio.write_entities(tmp_path / f"e{k}.csv", coll)
        qio.write_truth(tmp_path / f"t{k}.csv", truth)
    assert (tmp_path / "e0.csv").read_bytes() == (tmp_path / "e1.csv").read_bytes()
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
    other, _ = generate(500, seed=8)
    assert [e.name for e in other] != [e.name for e in generate(500, seed=7)[0]]


def test_zero_noise_duplicates_are_identical_and_rank_first():
    coll, truth = generate(300, dup_rate=0.3, noise=NoiseSpec.none(), seed=3)
    cmp_ = Comparator(default_taxonomy())
    pairs = []
    for a, b in sorted(truth):
        ea, eb = coll.get(a), coll.get(b)
        assert (ea.lat, ea.lon, ea.name, ea.address, ea.categories) == (eb.lat, eb.lon, eb.name, eb.address,
                                                                        eb.categories)
        v = cmp_.compare(ea, eb)
        assert v.values == (1.0, 1.0, 1.0)
        pairs.append(CandidatePair(a, b, v))
    # mix in some non-matching pairs: planted pairs stay on level 1
    ents = list(coll)
    for i in range(0, 60, 2):
        a, b = sorted([ents[i].key, ents[i + 1].key])
        if (a, b) not in truth:
            pairs.append(CandidatePair(a, b, cmp_.compare(coll.get(a), coll.get(b))))
    part = peel(pairs)
    assert all(p.skyline_level == 1 for p in part.pairs if p.key in truth)


def test_invalid_rates():
    for kw in ({"dup_rate": 1.5}, {"dup_rate": -0.1}, {"hotspot_fraction": 2.0}, {"sources": 1}):
        with pytest.raises(QuadSkyError):
            generate(10, **kw)
    with pytest.raises(QuadSkyError):
        generate(0)
    with pytest.raises(QuadSkyError):
        NoiseSpec(name_edit_rate=-1)


def test_noise_spec_load(tmp_path):
    f = tmp_path / "n.cfg"
    f.write_text("coord_jitter_m = 5\nphone-keep: 1.0\n", encoding="utf-8")
    spec = NoiseSpec.load(f)
    assert spec.coord_jitter_m == 5 and spec.phone_keep == 1.0
    f.write_text("colour = 3\n", encoding="utf-8")
    with pytest.raises(QuadSkyError):
        NoiseSpec.load(f)


def test_default_taxonomy_shape():
    t = default_taxonomy()
    assert t.root == "place" and t.depth("place") == 1
    assert len(t.parents("cocktail_bar")) >= 2


# ---- oracle_fnn ------------------------------------------------------------

def test_fnn_examples():
    lat, lon = offset(57.0, 9.9, 50, 0)
    coll = collection_from_xy([(0, 0), (50, 0)])
    assert len(oracle_fnn(coll, 100)) == 1
    assert oracle_fnn(coll, 10) == set()
    with pytest.raises(QuadSkyError):
        oracle_fnn(coll, 0)


def _grid_recount(coll, r):
    """Second implementation: bucket by a metric grid, test neighbours exactly."""
    lat0 = float(np.mean([e.lat for e in coll]))
    k = 6_371_000.0 * math.pi / 180
    cell = r * 1.05
    buckets = defaultdict(list)
    for i, e in enumerate(coll):
        x = e.lon * k * math.cos(math.radians(lat0))
        y = e.lat * k
        buckets[(int(x // cell), int(y // cell))].append(i)
    n = 0
    for (cx, cy), members in buckets.items():
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for i in members:
                    for j in buckets.get((cx + dx, cy + dy), ()):
                        if i < j and haversine((coll[i].lat, coll[i].lon), (coll[j].lat, coll[j].lon)) <= r:
                            n += 1
    return n


def test_fnn_matches_grid_recount():
    rng = np.random.default_rng(0)
    coll = collection_from_xy(rng.uniform(0, 1000, (1000, 2)))
    assert len(oracle_fnn_indices(coll, 100)) == _grid_recount(coll, 100)


def test_fnn_monotone_in_radius():
    coll, _ = generate(400, seed=4)
    sets = [oracle_fnn(coll, r) for r in (20, 60, 150)]
    assert sets[0] <= sets[1] <= sets[2]
    for a, b in sets[1]:
        assert a < b


def test_oracle_skyline_examples():
    assert oracle_skyline([(0.3, 0.3)]) == [1]
    assert oracle_skyline([(0.5, 0.5), (1, 1), (0, 0)]) == [2, 1, 3]
