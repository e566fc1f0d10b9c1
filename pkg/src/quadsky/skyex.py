"""Cut-off selection over skyline levels.

Every selector labels levels ``1..k`` as matches and the rest as non-matches.
``skyex_f`` maximizes F1 using ground truth, ``skyex_fes`` does the same but
stops at the first drop, and ``skyex_d`` needs no labels: it cuts where the
mean distance between the two classes stops growing.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import CandidatePair, ClassificationResult, QuadSkyError, SkylinePartition
from .skyrank import iter_skylines, pair_vectors

log = logging.getLogger(__name__)

DELTA_METRICS = ("euclidean", "manhattan")

Truth = Union[Mapping, Callable, None]


def metrics_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from a confusion matrix; 0 on empty denominators."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    # 2pr/(p+r) rewritten on counts so every caller gets bit-identical values
    f1 = 2.0 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f1


def _label_of(truth: Truth, pair: CandidatePair) -> bool:
    if truth is None:
        if pair.truth is None:
            raise QuadSkyError(f"pair {pair.key} has no ground-truth label")
        return bool(pair.truth)
    if callable(truth):
        return bool(truth(pair))
    if pair.key in truth:
        return bool(truth[pair.key])
    raise QuadSkyError(f"pair {pair.key} has no ground-truth label")


def compute_metrics(positives: Iterable[CandidatePair], negatives: Iterable[CandidatePair],
                    truth: Truth = None, missed: int = 0) -> tuple[float, float, float]:
    """Score a predicted split against ground truth.

    ``truth`` maps pair keys to labels (or is a callable); when omitted the
    pairs' own ``truth`` field is used. ``missed`` counts true matches that
    never became candidate pairs, which lowers recall.
    """
    tp = fp = fn = 0
    for p in positives:
        if _label_of(truth, p):
            tp += 1
        else:
            fp += 1
    for p in negatives:
        fn += _label_of(truth, p)
    return metrics_from_counts(tp, fp, fn + missed)


def labels_array(partition: SkylinePartition, truth: Truth = None) -> np.ndarray:
    return np.array([_label_of(truth, p) for p in partition.pairs], dtype=bool)


def metric_series(level_of: np.ndarray, labels: np.ndarray, missed: int = 0) -> list[tuple[int, float, float, float]]:
    """``(k, precision, recall, F1)`` for every cut-off ``k = 1..K``."""
    K = int(level_of.max())
    size = np.cumsum(np.bincount(level_of, minlength=K + 1)[1:])
    tp = np.cumsum(np.bincount(level_of, weights=labels, minlength=K + 1)[1:]).astype(np.int64)
    total = int(labels.sum()) + missed
    out = []
    for k in range(K):
        t = int(tp[k])
        out.append((k + 1, *metrics_from_counts(t, int(size[k]) - t, total - t)))
    return out


def _check_labels(labels: np.ndarray) -> None:
    if labels.all() or not labels.any():
        raise QuadSkyError("degenerate labels: ground truth holds a single class")


def _split(partition: SkylinePartition, k: int) -> tuple[tuple, tuple]:
    pos = tuple(p.with_(predicted=True) for p, lv in zip(partition.pairs, partition.level_of) if lv <= k)
    neg = tuple(p.with_(predicted=False) for p, lv in zip(partition.pairs, partition.level_of) if lv > k)
    return pos, neg


def skyex_f(partition: SkylinePartition, truth: Truth = None, missed: int = 0) -> ClassificationResult:
    """Cut at the level with the highest F1 (the smallest such level on ties)."""
    if not partition.pairs:
        raise QuadSkyError("empty partition")
    labels = labels_array(partition, truth)
    _check_labels(labels)
    series = metric_series(partition.level_of, labels, missed)
    best = max(f for _, _, _, f in series)
    k = next(k for k, _, _, f in series if f == best)
    pos, neg = _split(partition, k)
    return ClassificationResult("F", k, pos, neg, metric_series=series,
                                explored_levels=partition.K, total_levels=partition.K)


def skyex_fes(source: Union[SkylinePartition, Iterable[CandidatePair]], truth: Truth = None,
              missed: int = 0) -> ClassificationResult:
    """Walk levels in order and stop at the first strict F1 drop.

    ``source`` is either a ranked partition or raw compared pairs; in the
    second case levels are peeled lazily, so levels after the stop are never
    computed. Equal-F1 runs keep the walk going, but the cut-off stays at the
    first level of the run so that ties resolve as in :func:`skyex_f`.
    """
    if isinstance(source, SkylinePartition):
        pairs = source.pairs
        level_of = source.level_of
        stream = (np.flatnonzero(level_of == k) for k in range(1, source.K + 1))
        total_levels: Optional[int] = source.K
    else:
        pairs = tuple(source)
        stream = iter_skylines(pair_vectors(pairs))
        total_levels = None
    if not pairs:
        raise QuadSkyError("empty partition")
    labels = np.array([_label_of(truth, p) for p in pairs], dtype=bool)
    _check_labels(labels)
    total = int(labels.sum()) + missed

    assigned = np.zeros(len(pairs), dtype=np.int64)
    series: list[tuple[int, float, float, float]] = []
    tp = size = 0
    best_k, best_f = 0, -1.0
    explored = 0
    for idx in stream:
        explored += 1
        assigned[idx] = explored
        tp += int(labels[idx].sum())
        size += len(idx)
        row = (explored, *metrics_from_counts(tp, size - tp, total - tp))
        series.append(row)
        if row[3] < (series[-2][3] if len(series) > 1 else -1.0):
            break
        if row[3] > best_f:
            best_k, best_f = explored, row[3]
    else:
        total_levels = explored
    pos, neg = [], []
    for p, lv in zip(pairs, assigned):
        # pairs beyond the stop keep whatever level they came with (possibly none)
        p = p.with_(skyline_level=int(lv)) if lv else p
        (pos if 0 < lv <= best_k else neg).append(p.with_(predicted=bool(0 < lv <= best_k)))
    return ClassificationResult("FES", best_k, tuple(pos), tuple(neg), metric_series=series,
                                explored_levels=explored, total_levels=total_levels)


@dataclass(frozen=True)
class DistanceProfile:
    """Mean cross-class distance per cut-off and its smoothed derivative.

    ``mu[i]`` belongs to ``k = i + 1`` (``k = 1..K-1``); ``derivative[i]`` and
    ``smoothed[i]`` to ``k = i + 1`` as well (``k = 1..K-2``).
    """

    mu: np.ndarray
    derivative: np.ndarray
    smoothed: np.ndarray
    window: int
    sigma: float
    metric: str = "euclidean"
    mu_per_positive: bool = False

    def __post_init__(self) -> None:
        if len(self.derivative) != max(0, len(self.mu) - 1) or len(self.smoothed) != len(self.derivative):
            raise QuadSkyError("inconsistent profile series lengths")


def gaussian_smooth(x: np.ndarray, window: int = 5, sigma: float = 1.0) -> np.ndarray:
    """Discrete Gaussian filter whose kernel is cut and renormalized at the ends."""
    if window < 1 or window % 2 == 0:
        raise QuadSkyError("smoothing window must be a positive odd integer")
    if sigma <= 0:
        raise QuadSkyError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    half = window // 2
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    out = np.empty_like(x)
    for i in range(len(x)):
        lo, hi = max(0, i - half), min(len(x), i + half + 1)
        w = kernel[lo - i + half:hi - i + half]
        out[i] = np.dot(w, x[lo:hi]) / w.sum()
    return out


def _pairwise(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    if metric == "euclidean":
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return np.abs(diff).sum(axis=2)


def level_distance_sums(vectors: np.ndarray, level_of: np.ndarray, metric: str = "euclidean",
                        chunk_cells: int = 1 << 22) -> np.ndarray:
    """``A[a, b]`` = sum of distances between every pair in level a+1 and level b+1.

    Duplicate vectors are merged with weights first, which shrinks the work
    to distinct vectors.
    """
    if metric not in DELTA_METRICS:
        raise QuadSkyError(f"unknown delta metric {metric!r}")
    K = int(level_of.max())
    # equal vectors always share a level, so (level, vector) rows dedupe cleanly
    rows = np.column_stack([level_of.astype(float), vectors])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    lv = uniq[:, 0].astype(np.int64)
    u = uniq[:, 1:]
    w = counts.astype(float)
    starts = np.searchsorted(lv, np.arange(1, K + 1))
    A = np.zeros((K, K))
    step = max(1, chunk_cells // max(1, len(u) * u.shape[1]))
    for s in range(0, len(u), step):
        e = min(len(u), s + step)
        d = _pairwise(u[s:e], u, metric) * w[None, :]
        by_col = np.add.reduceat(d, starts, axis=1)
        by_col *= w[s:e, None]
        np.add.at(A, lv[s:e] - 1, by_col)
    return A


def mu_profile(partition: SkylinePartition, window: int = 5, sigma: float = 1.0,
               metric: str = "euclidean", mu_per_positive: bool = False) -> DistanceProfile:
    """Mean distance between predicted positives and negatives at each cut-off.

    With ``mu_per_positive`` the cross-class sum is divided by the positive count
    only instead of by the number of cross pairs.
    """
    K = partition.K
    if K < 3:
        raise QuadSkyError(f"too few levels for a distance profile (K={K}, need >= 3)")
    A = level_distance_sums(partition.vectors(), partition.level_of, metric)
    sizes = partition.level_sizes().astype(float)
    n = sizes.sum()
    upto = np.cumsum(A, axis=0)  # upto[k-1, b] = sum over levels <= k
    mu = np.empty(K - 1)
    for k in range(1, K):
        cross = upto[k - 1, k:].sum()
        n_pos = sizes[:k].sum()
        mu[k - 1] = cross / n_pos if mu_per_positive else cross / (n_pos * (n - n_pos))
    deriv = np.diff(mu)
    return DistanceProfile(mu, deriv, gaussian_smooth(deriv, window, sigma), window, sigma, metric, mu_per_positive)


def skyex_d(partition: SkylinePartition, window: int = 5, sigma: float = 1.0,
            metric: str = "euclidean", mu_per_positive: bool = False) -> ClassificationResult:
    """Cut at the first level where the smoothed mean-distance derivative turns negative."""
    prof = mu_profile(partition, window, sigma, metric, mu_per_positive)
    neg = np.flatnonzero(prof.smoothed < 0)
    warnings: tuple[str, ...] = ()
    if len(neg):
        k = int(neg[0]) + 1
    else:
        k = partition.K - 1
        msg = f"smoothed derivative never negative; falling back to k = K-1 = {k}"
        log.warning(msg)
        warnings = (msg,)
    pos, negs = _split(partition, k)
    return ClassificationResult("D", k, pos, negs, explored_levels=partition.K,
                                total_levels=partition.K, profile=prof, warnings=warnings)
