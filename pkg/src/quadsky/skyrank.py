"""Skyline ranking of candidate pairs.

A pair's level is the index of the Pareto frontier it sits on after all
better frontiers have been peeled away. Level 1 is the set of similarity
vectors nobody dominates.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence

import numpy as np

from .core import CandidatePair, QuadSkyError, SimilarityVector, SkylinePartition

# rows x columns of a dominance block kept under this many cells
_BLOCK_CELLS = 1 << 22


def dominates(u, v) -> bool:
    """True iff ``u >= v`` everywhere and ``u > v`` somewhere."""
    if isinstance(u, SimilarityVector) or isinstance(v, SimilarityVector):
        if not (isinstance(u, SimilarityVector) and isinstance(v, SimilarityVector)) or u.dims != v.dims:
            raise QuadSkyError("dimension mismatch")
        u, v = u.values, v.values
    if len(u) != len(v):
        raise QuadSkyError("dimension mismatch")
    strict = False
    for a, b in zip(u, v):
        if a < b:
            return False
        if a > b:
            strict = True
    return strict


def _dominators(cand: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Boolean ``(len(targets), len(cand))``: cand[j] dominates targets[i]."""
    ge = (cand[None, :, :] >= targets[:, None, :]).all(axis=2)
    gt = (cand[None, :, :] > targets[:, None, :]).any(axis=2)
    return ge & gt


def skyline_levels(vectors: np.ndarray) -> np.ndarray:
    """1-based skyline level of every row of ``vectors``.

    Equivalent to repeated skyline extraction, computed in one pass. Distinct
    vectors are visited so that every dominator comes first. If a vector is
    dominated by a member of level L it is also dominated by a member of
    every shallower level (follow the chain upwards), so its level is found
    by binary search over the levels built so far.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise QuadSkyError("need a non-empty 2-D array of similarity vectors")
    uniq, inverse = np.unique(vectors, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # decreasing sum, then decreasing lexicographic: dominators come first
    keys = [-uniq[:, j] for j in range(uniq.shape[1] - 1, -1, -1)] + [-uniq.sum(axis=1)]
    order = np.lexsort(keys)
    u = uniq[order]
    n, dims = u.shape
    # one column-major buffer per level; rows are distinct, so >= means dominates
    bufs: list[np.ndarray] = []
    fill: list[int] = []

    def hit(level: int, v: np.ndarray) -> bool:
        b, c = bufs[level], fill[level]
        mask = b[0, :c] >= v[0]
        for j in range(1, dims):
            mask &= b[j, :c] >= v[j]
        return bool(mask.any())

    level = np.empty(n, dtype=np.int64)
    for i in range(n):
        v = u[i]
        lo, hi = 0, len(bufs)
        while lo < hi:
            mid = (lo + hi) // 2
            if hit(mid, v):
                lo = mid + 1
            else:
                hi = mid
        if lo == len(bufs):
            bufs.append(np.empty((dims, 16)))
            fill.append(0)
        if fill[lo] == bufs[lo].shape[1]:
            grown = np.empty((dims, 2 * fill[lo]))
            grown[:, :fill[lo]] = bufs[lo]
            bufs[lo] = grown
        bufs[lo][:, fill[lo]] = v
        fill[lo] += 1
        level[i] = lo + 1
    out = np.empty(n, dtype=np.int64)
    out[order] = level
    return out[inverse]


def iter_skylines(vectors: np.ndarray) -> Iterator[np.ndarray]:
    """Yield row indices of each skyline level in turn, level 1 first.

    Each step extracts the non-dominated rows of what is left, so a consumer
    that stops early never pays for the deeper levels.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise QuadSkyError("need a non-empty 2-D array of similarity vectors")
    uniq, inverse = np.unique(vectors, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    members = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[members], np.arange(len(uniq) + 1))
    remaining = np.arange(len(uniq))
    dims = uniq.shape[1]
    while len(remaining):
        rest = uniq[remaining]
        dominated = np.zeros(len(remaining), dtype=bool)
        step = max(1, _BLOCK_CELLS // max(1, len(remaining) * dims))
        for s in range(0, len(remaining), step):
            dominated[s:s + step] = _dominators(rest, rest[s:s + step]).any(axis=1)
        front = remaining[~dominated]
        yield np.sort(np.concatenate([members[bounds[i]:bounds[i + 1]] for i in front]))
        remaining = remaining[dominated]


def pair_vectors(pairs: Sequence[CandidatePair]) -> np.ndarray:
    if not pairs:
        raise QuadSkyError("cannot rank an empty pair set")
    dims = pairs[0].delta.dims if pairs[0].delta is not None else None
    for p in pairs:
        if p.delta is None:
            raise QuadSkyError(f"pair {p.key} has no similarity vector")
        if p.delta.dims != dims:
            raise QuadSkyError("pairs have inconsistent similarity dimensions")
    return np.array([p.delta.values for p in pairs], dtype=float)


def peel(pairs: Sequence[CandidatePair]) -> SkylinePartition:
    """Assign every pair its skyline level."""
    pairs = tuple(pairs)
    levels = skyline_levels(pair_vectors(pairs))
    ranked = tuple(p.with_(skyline_level=int(k)) for p, k in zip(pairs, levels))
    return SkylinePartition(ranked, levels)


def partition_from_levels(pairs: Sequence[CandidatePair], levels: np.ndarray) -> SkylinePartition:
    """Rebuild a partition from stored levels, e.g. a ranked pair file."""
    pairs = tuple(p.with_(skyline_level=int(k)) for p, k in zip(pairs, levels))
    return SkylinePartition(pairs, np.asarray(levels))
