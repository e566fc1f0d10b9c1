"""Local equirectangular projection and great-circle distance on a sphere."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EntityCollection, QuadSkyError

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class Projection:
    """Equirectangular projection about ``(lat0, lon0)``.

    x grows east, y grows north, both in meters.
    """

    lat0: float
    lon0: float
    radius: float = EARTH_RADIUS_M

    def forward(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        k = math.radians(1.0) * self.radius
        x = k * (lon - self.lon0) * math.cos(math.radians(self.lat0))
        y = k * (lat - self.lat0)
        return x, y

    def inverse(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        k = math.radians(1.0) * self.radius
        lat = np.asarray(y, dtype=float) / k + self.lat0
        lon = np.asarray(x, dtype=float) / (k * math.cos(math.radians(self.lat0))) + self.lon0
        return lat, lon

    def to_dict(self) -> dict:
        return {"kind": "equirectangular", "lat0": self.lat0, "lon0": self.lon0, "radius_m": self.radius}


def project(collection: EntityCollection) -> tuple[np.ndarray, Projection]:
    """Project all entity points about the collection centroid.

    Returns an ``(n, 2)`` array of ``(x, y)`` meters and the projection used.
    """
    if len(collection) == 0:
        raise QuadSkyError("cannot project an empty collection")
    ll = collection.latlon()
    lat0 = float(ll[:, 0].mean())
    lon0 = float(ll[:, 1].mean())
    if ll[:, 1].max() - ll[:, 1].min() > 180.0:
        raise QuadSkyError("collection spans the antimeridian")
    if abs(lat0) >= 89.0:
        raise QuadSkyError("polar collections are not supported")
    proj = Projection(lat0, lon0)
    x, y = proj.forward(ll[:, 0], ll[:, 1])
    return np.column_stack([x, y]), proj


def haversine(p1, p2, radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters between two ``(lat, lon)`` points."""
    lat1, lon1 = map(math.radians, p1)
    lat2, lon2 = map(math.radians, p2)
    a = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(a)))


def haversine_many(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_M) -> np.ndarray:
    """Vectorized :func:`haversine` over broadcastable degree arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=float)) for a in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * radius * np.arcsin(np.minimum(1.0, np.sqrt(a)))
