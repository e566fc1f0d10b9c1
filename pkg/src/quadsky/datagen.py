"""Synthetic multi-source POI data with planted duplicates, plus brute-force oracles.

The oracles here are deliberately simple (exhaustive scans) so that tests can
check the fast code paths against them.
"""

from __future__ import annotations

import string
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from importlib import resources
from typing import Optional

import numpy as np

from .config import parse_kv
from .core import EntityCollection, EntityKey, QuadSkyError, SpatialEntity, canonicalize_pair
from .geo import EARTH_RADIUS_M, haversine_many
from .similarity import Taxonomy

# about 10 km x 10 km around Aalborg city centre
DEFAULT_AREA = (57.003, 9.845, 57.093, 9.993)

PairKey = tuple[EntityKey, EntityKey]

_OWNERS = ("Skippers", "Jensens", "Hansens", "Nielsens", "Larsens", "Golden", "Blue", "Red", "Old", "Royal",
           "Nordic", "Harbour", "Corner", "Green", "Little", "Grand", "Baltic", "Viking", "Anchor", "Lighthouse",
           "Fjord", "Limfjord", "Aalborg", "Jomfru", "Ane", "Kaj", "Stella", "Mama", "Papa", "Lucky",
           "Sunset", "Copper", "Silver", "Oak", "Birch", "Crown", "Market", "Station", "Park", "Castle")
_NOUNS = ("Grill", "Kitchen", "House", "Corner", "Garden", "Place", "Spot", "Hall", "Room", "Factory",
          "Table", "Deli", "Lounge", "Club", "Studio", "Works", "Point", "Square", "Yard", "Dock")
_CHAINS = ("Netto", "Rema 1000", "7-Eleven", "Burger King", "Lagkagehuset", "Joe & The Juice", "Espresso House",
           "Matas", "Danske Bank", "Circle K")
_STREETS = ("Boulevarden", "Jomfru Ane Gade", "Vesterbro", "Algade", "Bispensgade", "Nytorv", "Østerågade",
            "Danmarksgade", "Kastetvej", "Hobrovej", "Sønderbro", "Vingårdsgade", "Borgergade", "Strandvejen",
            "Nørregade", "Kayerødsgade", "Hadsundvej", "Gammel Kongevej", "Reberbansgade", "Hasserisgade")
_CITIES = (("9000", "Aalborg"), ("9200", "Aalborg SV"), ("9210", "Aalborg SØ"), ("9220", "Aalborg Øst"),
           ("9400", "Nørresundby"))
_ALPHABET = string.ascii_lowercase + "æøå "


@dataclass(frozen=True)
class NoiseSpec:
    """How a planted duplicate departs from its original."""

    name_edit_rate: float = 0.04        # chance per character of one random edit
    name_word_drop: float = 0.15        # drop the trailing word of a multi-word name
    coord_jitter_m: float = 20.0        # Gaussian std per axis
    address_variant: float = 0.4        # add a suffix or drop the city part
    address_missing: float = 0.1
    category_swap: float = 0.3          # per category, move to a taxonomy sibling
    phone_keep: float = 0.6
    website_keep: float = 0.5
    address_absent: float = 0.05        # originals published without an address

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "coord_jitter_m":
                if not v >= 0:
                    raise QuadSkyError("coord_jitter_m must be >= 0")
            elif not 0.0 <= v <= 1.0:
                raise QuadSkyError(f"{f.name} must be a probability, got {v}")

    @classmethod
    def none(cls) -> NoiseSpec:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0)

    @classmethod
    def load(cls, path) -> NoiseSpec:
        """Read ``key = value`` lines; unknown keys are an error."""
        raw = parse_kv(path)
        known = {f.name for f in fields(cls)}
        bad = sorted(set(raw) - known)
        if bad:
            raise QuadSkyError(f"unknown noise setting(s): {', '.join(bad)}")
        try:
            return cls(**{k: float(v) for k, v in raw.items()})
        except ValueError as exc:
            raise QuadSkyError(f"bad noise value: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


def default_taxonomy() -> Taxonomy:
    with resources.as_file(resources.files("quadsky") / "data" / "poi_taxonomy.tsv") as path:
        return Taxonomy.load(path)


def _chain_type(cat: str) -> str:
    return cat.replace("_", " ").title().split()[-1]


def _edit_name(name: str, rate: float, rng: np.random.Generator) -> str:
    out: list[str] = []
    for ch in name:
        if rng.random() >= rate:
            out.append(ch)
            continue
        op = rng.integers(3)
        if op == 0:       # insert before
            out.append(_ALPHABET[rng.integers(len(_ALPHABET))])
            out.append(ch)
        elif op == 2:     # substitute
            out.append(_ALPHABET[rng.integers(len(_ALPHABET))])
        # op == 1 deletes
    edited = "".join(out)
    return edited if edited.strip() else name


def _format_phone(number: str, rng: np.random.Generator) -> str:
    style = rng.integers(4)
    if style == 0:
        return number
    if style == 1:
        return "+45 " + " ".join(number[i:i + 2] for i in range(0, 8, 2))
    if style == 2:
        return "0045" + number
    return f"+45-{number[:4]}-{number[4:]}"


def _format_site(slug: str, rng: np.random.Generator) -> str:
    return ("www.{}.dk", "http://www.{}.dk/", "https://{}.dk", "{}.dk/")[rng.integers(4)].format(slug)


class _Builder:
    def __init__(self, taxonomy: Taxonomy, seed: int):
        self.tax = taxonomy
        self.seed = seed
        self.leaves = sorted(t for t in taxonomy.terms if not taxonomy.children(t))
        self.siblings = {}
        for t in taxonomy.terms:
            sib = {c for p in taxonomy.parents(t) for c in taxonomy.children(p)} - {t}
            self.siblings[t] = sorted(sib)

    def rng(self, i: int, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, tag, i])

    def base(self, i: int, lat: float, lon: float, source: str, noise: NoiseSpec) -> SpatialEntity:
        r = self.rng(i, 1)
        cats = [self.leaves[r.integers(len(self.leaves))]]
        if r.random() < 0.3:
            cats.append(self.leaves[r.integers(len(self.leaves))])
        if r.random() < 0.08:
            name = _CHAINS[r.integers(len(_CHAINS))]
        else:
            name = f"{_OWNERS[r.integers(len(_OWNERS))]} {_NOUNS[r.integers(len(_NOUNS))]}"
            if r.random() < 0.5:
                name += " " + _chain_type(cats[0])
        postcode, city = _CITIES[r.integers(len(_CITIES))]
        address = f"{_STREETS[r.integers(len(_STREETS))]} {r.integers(1, 200)}, {postcode} {city}"
        number = f"{r.integers(20_000_000, 99_999_999)}"
        slug = "".join(ch for ch in name.lower() if ch.isalnum()) + f"{i % 997}"
        return SpatialEntity(
            source=source, id=f"e{i:07d}", lat=lat, lon=lon, name=name,
            address=address if r.random() >= noise.address_absent else None,
            categories=frozenset(cats),
            phone=_format_phone(number, r) if r.random() < 0.8 else None,
            website=_format_site(slug, r) if r.random() < 0.6 else None,
        )

    def duplicate(self, i: int, orig: SpatialEntity, source: str, noise: NoiseSpec) -> SpatialEntity:
        r = self.rng(i, 2)
        name = orig.name
        words = name.split()
        if len(words) > 2 and r.random() < noise.name_word_drop:
            name = " ".join(words[:-1])
        name = _edit_name(name, noise.name_edit_rate, r)

        lat, lon = orig.lat, orig.lon
        if noise.coord_jitter_m > 0:
            dy, dx = r.normal(0.0, noise.coord_jitter_m, 2)
            lat = float(np.clip(lat + np.degrees(dy / EARTH_RADIUS_M), -90, 90))
            lon = lon + np.degrees(dx / (EARTH_RADIUS_M * np.cos(np.radians(orig.lat))))

        address = orig.address
        if address is not None and r.random() < noise.address_missing:
            address = None
        elif address is not None and r.random() < noise.address_variant:
            choice = r.integers(3)
            if choice == 0:
                address = address + ", Denmark"
            elif choice == 1:
                address = address.split(",")[0]
            else:
                address = address.upper().replace(",", "")

        cats = []
        for c in sorted(orig.categories):
            if self.siblings[c] and r.random() < noise.category_swap:
                c = self.siblings[c][r.integers(len(self.siblings[c]))]
            cats.append(c)

        phone = orig.phone if r.random() < noise.phone_keep else None
        if phone is not None and noise.phone_keep < 1.0:
            digits = "".join(ch for ch in phone if ch.isdigit())[-8:]
            phone = _format_phone(digits, r)
        website = orig.website if r.random() < noise.website_keep else None
        return SpatialEntity(source=source, id=f"e{i:07d}", lat=lat, lon=float(lon), name=name, address=address,
                             categories=frozenset(cats), phone=phone, website=website)


def _points(n: int, area, hotspots: int, hotspot_fraction: float, rng: np.random.Generator) -> np.ndarray:
    lat0, lon0, lat1, lon1 = area
    pts = np.column_stack([rng.uniform(lat0, lat1, n), rng.uniform(lon0, lon1, n)])
    if hotspots and hotspot_fraction > 0:
        centres = np.column_stack([rng.uniform(lat0, lat1, hotspots), rng.uniform(lon0, lon1, hotspots)])
        hot = np.flatnonzero(rng.random(n) < hotspot_fraction)
        which = rng.integers(hotspots, size=len(hot))
        off = rng.normal(0.0, 50.0, (len(hot), 2))
        mid = np.radians(centres[which, 0])
        pts[hot, 0] = centres[which, 0] + np.degrees(off[:, 0] / EARTH_RADIUS_M)
        pts[hot, 1] = centres[which, 1] + np.degrees(off[:, 1] / (EARTH_RADIUS_M * np.cos(mid)))
        pts[:, 0] = np.clip(pts[:, 0], -90, 90)
    return pts


def generate(n: int, sources: int = 3, dup_rate: float = 0.2, noise: Optional[NoiseSpec] = None,
             area: Sequence[float] = DEFAULT_AREA, seed: int = 0, hotspots: int = 10,
             hotspot_fraction: float = 0.1, taxonomy: Optional[Taxonomy] = None
             ) -> tuple[EntityCollection, set[PairKey]]:
    """Generate ``n`` entities of which a ``dup_rate`` share of originals get one planted duplicate.

    Originals sit uniformly in ``area`` (``min_lat, min_lon, max_lat,
    max_lon``) except a ``hotspot_fraction`` drawn around ``hotspots`` dense
    centres (50 m std). Each duplicate lives in a different source than its
    original. Returns the entities and the set of planted pairs.
    """
    if n <= 0:
        raise QuadSkyError("n must be positive")
    if not 0.0 <= dup_rate <= 1.0:
        raise QuadSkyError("dup_rate must be in [0, 1]")
    if not 0.0 <= hotspot_fraction <= 1.0:
        raise QuadSkyError("hotspot_fraction must be in [0, 1]")
    if sources < 1 or (sources < 2 and dup_rate > 0):
        raise QuadSkyError("duplicates need at least two sources")
    lat0, lon0, lat1, lon1 = area
    if not (lat0 < lat1 and lon0 < lon1):
        raise QuadSkyError("area must be (min_lat, min_lon, max_lat, max_lon)")
    noise = NoiseSpec() if noise is None else noise
    taxonomy = default_taxonomy() if taxonomy is None else taxonomy

    n_base = int(np.ceil(n / (1.0 + dup_rate)))
    n_dup = n - n_base
    rng = np.random.default_rng([seed, 0])
    pts = _points(n_base, area, hotspots, hotspot_fraction, rng)
    src_of = rng.integers(sources, size=n_base)
    dup_of = np.sort(rng.permutation(n_base)[:n_dup])
    shift = rng.integers(1, max(2, sources), size=n_dup)
    names = [f"s{k + 1}" for k in range(sources)]

    b = _Builder(taxonomy, seed)
    ents = [b.base(i, float(pts[i, 0]), float(pts[i, 1]), names[src_of[i]], noise) for i in range(n_base)]
    truth: set[PairKey] = set()
    for j, (orig, step) in enumerate(zip(dup_of, shift)):
        d = b.duplicate(n_base + j, ents[orig], names[(src_of[orig] + step) % sources], noise)
        ents.append(d)
        truth.add(canonicalize_pair(ents[orig], d).key)
    return EntityCollection(ents), truth


def _fnn_indices(latlon: np.ndarray, r: float, chunk: Optional[int] = None) -> np.ndarray:
    lat = np.ascontiguousarray(latlon[:, 0])
    lon = np.ascontiguousarray(latlon[:, 1])
    if chunk is None:
        # about a million distances per step keeps temporaries cache-sized
        chunk = max(1, (1 << 20) // max(1, len(lat)))
    out = []
    for s in range(0, len(lat), chunk):
        e = min(len(lat), s + chunk)
        d = haversine_many(lat[s:e, None], lon[s:e, None], lat[None, s:], lon[None, s:])
        # rows and columns both start at s, so the upper triangle is j > i
        i, j = np.nonzero(d <= r)
        keep = j > i
        out.append(np.column_stack([i[keep] + s, j[keep] + s]))
    return np.concatenate(out) if out else np.empty((0, 2), dtype=np.int64)


def oracle_fnn_indices(collection: EntityCollection, r: float) -> np.ndarray:
    """Index pairs ``(i, j)``, ``i < j``, with haversine distance at most ``r`` metres."""
    if not r > 0:
        raise QuadSkyError("radius must be positive")
    return _fnn_indices(collection.latlon(), r)


def oracle_fnn(collection: EntityCollection, r: float) -> set[PairKey]:
    """Every canonical pair within ``r`` metres, by exhaustive scan."""
    idx = oracle_fnn_indices(collection, r)
    return {canonicalize_pair(collection[int(i)], collection[int(j)]).key for i, j in idx}


def oracle_skyline(vectors) -> list[int]:
    """Level per vector by repeatedly extracting the non-dominated rest.

    Every round rebuilds the full dominance matrix of what is left, so the
    cost is O(K n^2); meant for test-sized inputs.
    """
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    level = np.zeros(len(v), dtype=np.int64)
    left = np.arange(len(v))
    k = 0
    while len(left):
        k += 1
        r = v[left]
        ge = (r[:, None, :] >= r[None, :, :]).all(axis=2)
        gt = (r[:, None, :] > r[None, :, :]).any(axis=2)
        beaten = (ge & gt).any(axis=0)   # column j is dominated by some row
        level[left[~beaten]] = k
        left = left[beaten]
    return level.tolist()
