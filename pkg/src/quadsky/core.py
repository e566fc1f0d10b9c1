"""Domain model shared by every stage of the linkage pipeline.

All types are immutable once built. Pairs get their skyline level and
predicted label through :func:`dataclasses.replace`, never by mutation.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

DEFAULT_DIMS: tuple[str, ...] = ("name", "address", "semantic")

EntityKey = tuple[str, str]


class QuadSkyError(ValueError):
    """Base error for invalid inputs anywhere in the pipeline."""


@dataclass(frozen=True)
class SpatialEntity:
    """One record from one source.

    ``categories`` holds taxonomy term ids. ``phone`` and ``website`` may be
    stored as written; they are normalized only when labels are derived from
    them (see :mod:`quadsky.evaluation`) and never enter the similarity vector.
    """

    source: str
    id: str
    lat: float
    lon: float
    name: str
    address: Optional[str] = None
    categories: frozenset[str] = frozenset()
    phone: Optional[str] = None
    website: Optional[str] = None

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise QuadSkyError(f"{self.source}:{self.id}: latitude {self.lat} out of range")
        if not (-180.0 <= self.lon <= 180.0):
            raise QuadSkyError(f"{self.source}:{self.id}: longitude {self.lon} out of range")
        if not self.name or not self.name.strip():
            raise QuadSkyError(f"{self.source}:{self.id}: empty name")
        if not isinstance(self.categories, frozenset):
            object.__setattr__(self, "categories", frozenset(self.categories))

    @property
    def key(self) -> EntityKey:
        return (self.source, self.id)

    @property
    def point(self) -> tuple[float, float]:
        return (self.lat, self.lon)

    def __str__(self) -> str:
        return f"{self.source}:{self.id}"


class EntityCollection(Sequence[SpatialEntity]):
    """An ordered, key-unique set of entities with a derived bounding box."""

    def __init__(self, entities: Iterable[SpatialEntity]):
        self._entities: tuple[SpatialEntity, ...] = tuple(entities)
        self._index: dict[EntityKey, int] = {}
        self._latlon: Optional[np.ndarray] = None
        self._ranks: Optional[np.ndarray] = None
        for i, e in enumerate(self._entities):
            if e.key in self._index:
                raise QuadSkyError(f"duplicate entity key {e.source}:{e.id}")
            self._index[e.key] = i

    def __getitem__(self, i):  # type: ignore[override]
        return self._entities[i]

    def __len__(self) -> int:
        return len(self._entities)

    def __iter__(self) -> Iterator[SpatialEntity]:
        return iter(self._entities)

    def index_of(self, key: EntityKey) -> int:
        return self._index[key]

    def get(self, key: EntityKey) -> SpatialEntity:
        return self._entities[self._index[key]]

    def __contains__(self, item) -> bool:
        if isinstance(item, SpatialEntity):
            return item.key in self._index
        return item in self._index

    def latlon(self) -> np.ndarray:
        """``(n, 2)`` array of ``(lat, lon)`` in degrees."""
        if self._latlon is None:
            ll = np.array([(e.lat, e.lon) for e in self._entities], dtype=float).reshape(-1, 2)
            ll.setflags(write=False)
            self._latlon = ll
        return self._latlon

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """``(min_lat, min_lon, max_lat, max_lon)``."""
        if not self._entities:
            raise QuadSkyError("empty collection has no bounding box")
        ll = self.latlon()
        return (ll[:, 0].min(), ll[:, 1].min(), ll[:, 0].max(), ll[:, 1].max())

    def key_ranks(self) -> np.ndarray:
        """Rank of each entity under the canonical ``(source, id)`` order."""
        if self._ranks is None:
            order = sorted(range(len(self._entities)), key=lambda i: self._entities[i].key)
            ranks = np.empty(len(order), dtype=np.int64)
            ranks[order] = np.arange(len(order))
            ranks.setflags(write=False)
            self._ranks = ranks
        return self._ranks


@dataclass(frozen=True)
class SimilarityVector:
    dims: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.dims) != len(self.values):
            raise QuadSkyError("dimension names and values differ in length")
        for name, v in zip(self.dims, self.values):
            if not (0.0 <= v <= 1.0):
                raise QuadSkyError(f"similarity {name}={v} outside [0, 1]")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float], dims: Sequence[str] = DEFAULT_DIMS) -> SimilarityVector:
        return cls(tuple(dims), tuple(float(values[d]) for d in dims))

    def __getitem__(self, name: str) -> float:
        return self.values[self.dims.index(name)]

    def __len__(self) -> int:
        return len(self.values)

    def select(self, dims: Sequence[str]) -> SimilarityVector:
        return SimilarityVector(tuple(dims), tuple(self[d] for d in dims))


@dataclass(frozen=True)
class CandidatePair:
    left: EntityKey
    right: EntityKey
    delta: Optional[SimilarityVector] = None
    skyline_level: Optional[int] = None
    truth: Optional[bool] = None
    predicted: Optional[bool] = None

    def __post_init__(self) -> None:
        if self.left == self.right:
            raise QuadSkyError("self-pair")
        if self.left > self.right:
            raise QuadSkyError(f"pair not in canonical order: {self.left} > {self.right}")
        if self.skyline_level is not None and self.skyline_level < 1:
            raise QuadSkyError("skyline level must be >= 1")

    @property
    def key(self) -> tuple[EntityKey, EntityKey]:
        return (self.left, self.right)

    def with_(self, **changes) -> CandidatePair:
        return replace(self, **changes)


def canonicalize_pair(a, b) -> CandidatePair:
    """Return the pair skeleton for ``a`` and ``b`` in ``(source, id)`` order.

    ``a`` and ``b`` may be entities or ``(source, id)`` keys.
    """
    ka = a.key if isinstance(a, SpatialEntity) else tuple(a)
    kb = b.key if isinstance(b, SpatialEntity) else tuple(b)
    if ka == kb:
        raise QuadSkyError("self-pair")
    if kb < ka:
        ka, kb = kb, ka
    return CandidatePair(ka, kb)


@dataclass(frozen=True)
class SkylinePartition:
    """Pairs grouped into skyline levels, level 1 first.

    ``level_of[i]`` is the 1-based level of ``pairs[i]``; the pairs carry the
    same value in ``skyline_level``.
    """

    pairs: tuple[CandidatePair, ...]
    level_of: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        lv = np.asarray(self.level_of, dtype=np.int64)
        if lv.shape != (len(self.pairs),):
            raise QuadSkyError("level array does not match pair count")
        if len(lv) and (lv.min() != 1 or len(np.unique(lv)) != lv.max()):
            raise QuadSkyError("levels must be contiguous from 1")
        lv.setflags(write=False)
        object.__setattr__(self, "level_of", lv)

    @property
    def K(self) -> int:
        return int(self.level_of.max()) if len(self.level_of) else 0

    @property
    def levels(self) -> list[list[CandidatePair]]:
        out: list[list[CandidatePair]] = [[] for _ in range(self.K)]
        for p, k in zip(self.pairs, self.level_of):
            out[k - 1].append(p)
        return out

    def level_sizes(self) -> np.ndarray:
        return np.bincount(self.level_of, minlength=self.K + 1)[1:]

    def vectors(self) -> np.ndarray:
        """``(n, dims)`` matrix of similarity values in pair order."""
        if not self.pairs:
            return np.empty((0, 0))
        return np.array([p.delta.values for p in self.pairs], dtype=float)

    def dims(self) -> tuple[str, ...]:
        return self.pairs[0].delta.dims if self.pairs else ()

    def truth(self) -> np.ndarray:
        if any(p.truth is None for p in self.pairs):
            raise QuadSkyError("pair without ground-truth label")
        return np.array([p.truth for p in self.pairs], dtype=bool)


@dataclass(frozen=True)
class ClassificationResult:
    method: str
    cutoff_k: int
    positives: tuple[CandidatePair, ...]
    negatives: tuple[CandidatePair, ...]
    metric_series: Optional[list[tuple[int, float, float, float]]] = None
    explored_levels: Optional[int] = None
    total_levels: Optional[int] = None
    profile: Optional[object] = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.method not in ("F", "FES", "D"):
            raise QuadSkyError(f"unknown method tag {self.method!r}")
        if self.cutoff_k < 1:
            raise QuadSkyError("cut-off level must be >= 1")

    @property
    def pairs(self) -> tuple[CandidatePair, ...]:
        """All pairs with ``predicted`` filled."""
        return tuple(p.with_(predicted=True) for p in self.positives) + tuple(
            p.with_(predicted=False) for p in self.negatives
        )
