"""Automatic ground truth from phone/website equality, and result scoring.

Phone and website never enter the similarity vector, so labels built from
them do not leak into the classifier.
"""

from __future__ import annotations

import csv
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union
from urllib.parse import urlsplit

import numpy as np

from .core import CandidatePair, ClassificationResult, EntityKey, QuadSkyError, SpatialEntity
from .skyex import metric_series, metrics_from_counts

PairKey = tuple[EntityKey, EntityKey]

DEFAULT_COUNTRY_CODE = "45"

_NON_DIGIT = re.compile(r"\D+")


def normalize_phone(raw: Optional[str], country_code: str = DEFAULT_COUNTRY_CODE) -> Optional[str]:
    """Digits only, with an international ``+CC`` / ``00CC`` prefix removed."""
    if raw is None:
        return None
    text = raw.strip()
    digits = _NON_DIGIT.sub("", text)
    if not digits:
        return None
    international = text.lstrip("( ").startswith("+")
    if digits.startswith("00"):
        digits, international = digits[2:], True
    if international and digits.startswith(country_code) and len(digits) > len(country_code):
        digits = digits[len(country_code):]
    return digits or None


def normalize_website(raw: Optional[str]) -> Optional[str]:
    """``host/path`` in lower case, without scheme, ``www.``, query or trailing slash."""
    if raw is None or not raw.strip():
        return None
    text = raw.strip().lower()
    parts = urlsplit(text if "://" in text else "//" + text)
    host = parts.hostname or ""
    if host.startswith("www."):
        host = host[4:]
    path = parts.path.rstrip("/")
    out = host + path
    return out or None


def auto_label(pair: CandidatePair, entities, country_code: str = DEFAULT_COUNTRY_CODE) -> bool:
    """True when both sides share a phone number or a website.

    ``entities`` is anything indexable by entity key (an ``EntityCollection``
    works through its ``get`` method).
    """
    get = entities.get if hasattr(entities, "get") else entities.__getitem__
    a: SpatialEntity = get(pair.left)
    b: SpatialEntity = get(pair.right)
    pa, pb = normalize_phone(a.phone, country_code), normalize_phone(b.phone, country_code)
    if pa is not None and pa == pb:
        return True
    wa, wb = normalize_website(a.website), normalize_website(b.website)
    return wa is not None and wa == wb


def auto_labels(pairs: Iterable[CandidatePair], entities, country_code: str = DEFAULT_COUNTRY_CODE
                ) -> dict[PairKey, bool]:
    return {p.key: auto_label(p, entities, country_code) for p in pairs}


def merge_overrides(labels: Mapping[PairKey, bool], overrides: Mapping[PairKey, bool]) -> dict[PairKey, bool]:
    """Manual labels win over automatic ones."""
    out = dict(labels)
    out.update(overrides)
    return out


@dataclass(frozen=True)
class EvalReport:
    method: str
    cutoff_k: int
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    series: tuple[tuple[int, float, float, float], ...]
    explored_levels: Optional[int] = None
    total_levels: Optional[int] = None

    def summary(self) -> str:
        """One ``key=value`` line."""
        items = [("method", self.method), ("cutoff_k", self.cutoff_k), ("precision", f"{self.precision:.6f}"),
                 ("recall", f"{self.recall:.6f}"), ("f1", f"{self.f1:.6f}"), ("tp", self.tp), ("fp", self.fp),
                 ("fn", self.fn), ("explored_levels", self.explored_levels), ("total_levels", self.total_levels)]
        return " ".join(f"{k}={'' if v is None else v}" for k, v in items)

    def write_series(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "precision", "recall", "f1", "selected"])
            for k, p, r, f in self.series:
                w.writerow([k, repr(p), repr(r), repr(f), int(k == self.cutoff_k)])


def _truth_of(p: CandidatePair, truth: Optional[Mapping[PairKey, bool]]) -> bool:
    if truth is not None:
        if p.key not in truth:
            raise QuadSkyError(f"pair {p.key} has no ground-truth label")
        return bool(truth[p.key])
    if p.truth is None:
        raise QuadSkyError(f"pair {p.key} has no ground-truth label")
    return bool(p.truth)


def evaluate(result: ClassificationResult, truth: Optional[Mapping[PairKey, bool]] = None,
             missed: int = 0) -> EvalReport:
    """Score a classification and rebuild the per-level precision/recall/F1 curve.

    ``missed`` counts true matches absent from the candidate pairs.
    """
    tp = sum(_truth_of(p, truth) for p in result.positives)
    fp = len(result.positives) - tp
    fn = sum(_truth_of(p, truth) for p in result.negatives) + missed
    prec, rec, f1 = metrics_from_counts(tp, fp, fn)

    pairs = result.positives + result.negatives
    if pairs and all(p.skyline_level is not None for p in pairs):
        levels = np.array([p.skyline_level for p in pairs], dtype=np.int64)
        labels = np.array([_truth_of(p, truth) for p in pairs], dtype=bool)
        series = tuple(metric_series(levels, labels, missed))
    else:
        series = tuple(result.metric_series or ())
    return EvalReport(result.method, result.cutoff_k, prec, rec, f1, tp, fp, fn, series,
                      result.explored_levels, result.total_levels)
