"""Per-attribute similarity metrics and the pairwise comparison stage.

Names use normalized Levenshtein similarity, addresses an equality/inclusion
rule, and categories the best Wu-Palmer score over a taxonomy.
"""

from __future__ import annotations

import logging
import unicodedata
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import DEFAULT_DIMS, EntityCollection, QuadSkyError, SimilarityVector, SpatialEntity

log = logging.getLogger(__name__)

ROOT_MARKER = "ROOT"
ADDRESS_EQUAL = 1.0
ADDRESS_INCLUDED = 0.9


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert, delete, substitute) using bit-parallel rows."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    # trim shared prefix and suffix; they never contribute edits
    start = 0
    while start < len(b) and a[start] == b[start]:
        start += 1
    end_a, end_b = len(a), len(b)
    while end_b > start and a[end_a - 1] == b[end_b - 1]:
        end_a -= 1
        end_b -= 1
    a, b = a[start:end_a], b[start:end_b]
    if not b:
        return len(a)

    m = len(a)
    peq: dict[str, int] = {}
    for i, ch in enumerate(a):
        peq[ch] = peq.get(ch, 0) | (1 << i)
    full = (1 << m) - 1
    high = 1 << (m - 1)
    pv, mv, score = full, 0, m
    for ch in b:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (~(xh | pv) & full)
        mh = pv & xh
        if ph & high:
            score += 1
        elif mh & high:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = mh | (~(xv | ph) & full)
        mv = ph & xv
    return score


def _fold(s: str) -> str:
    return s.strip().casefold()


def text_sim(a: str, b: str) -> float:
    """``1 - lev(a, b) / max(|a|, |b|)`` on trimmed, case-folded strings."""
    a, b = _fold(a), _fold(b)
    longest = max(len(a), len(b))
    if longest == 0:
        raise QuadSkyError("undefined similarity: both strings are empty")
    return 1.0 - levenshtein(a, b) / longest


def normalize_address(a: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    kept = "".join(ch for ch in a.lower() if not unicodedata.category(ch).startswith("P"))
    return " ".join(kept.split())


def address_sim(a: Optional[str], b: Optional[str], missing: float = 0.0) -> float:
    if a is None or b is None:
        return missing
    na, nb = normalize_address(a), normalize_address(b)
    if not na or not nb:
        return missing
    if na == nb:
        return ADDRESS_EQUAL
    if na in nb or nb in na:
        return ADDRESS_INCLUDED
    return 0.0


class Taxonomy:
    """An is-a hierarchy with a single root.

    ``depth(root) == 1``; in a DAG a term's depth is the longest path from the
    root, which keeps every ancestor strictly shallower than its descendants.
    """

    def __init__(self, edges: Iterable[tuple[str, str]]):
        parents: dict[str, set[str]] = {}
        roots = []
        for child, parent in edges:
            if parent == ROOT_MARKER:
                roots.append(child)
                parents.setdefault(child, set())
            else:
                parents.setdefault(child, set()).add(parent)
                parents.setdefault(parent, set())
        if len(set(roots)) != 1:
            raise QuadSkyError(f"taxonomy needs exactly one root, found {sorted(set(roots))}")
        self.root = roots[0]
        if parents[self.root]:
            raise QuadSkyError("root term cannot have parents")
        self._parents = {k: frozenset(v) for k, v in parents.items()}
        self._depth: dict[str, int] = {}
        self._ancestors: dict[str, frozenset[str]] = {}
        for term in self._parents:
            self._resolve(term, ())
        orphans = [t for t, anc in self._ancestors.items() if self.root not in anc]
        if orphans:
            raise QuadSkyError(f"terms not reachable from root: {sorted(orphans)[:5]}")

    def _resolve(self, term: str, stack: tuple[str, ...]) -> None:
        if term in self._depth:
            return
        if term in stack:
            raise QuadSkyError(f"cycle through {term!r}")
        ps = self._parents[term]
        for p in ps:
            self._resolve(p, stack + (term,))
        self._depth[term] = 1 + max((self._depth[p] for p in ps), default=0)
        anc = {term}
        for p in ps:
            anc |= self._ancestors[p]
        self._ancestors[term] = frozenset(anc)

    @classmethod
    def load(cls, path: Union[str, Path]) -> Taxonomy:
        """Read ``child<TAB>parent`` lines; ``#`` starts a comment."""
        edges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                    raise QuadSkyError(f"{path}:{lineno}: expected child<TAB>parent")
                edges.append((parts[0].strip(), parts[1].strip()))
        return cls(edges)

    def __contains__(self, term: str) -> bool:
        return term in self._parents

    def __len__(self) -> int:
        return len(self._parents)

    @property
    def terms(self) -> frozenset[str]:
        return frozenset(self._parents)

    def parents(self, term: str) -> frozenset[str]:
        return self._parents[term]

    def children(self, term: str) -> list[str]:
        return sorted(t for t, ps in self._parents.items() if term in ps)

    def depth(self, term: str) -> int:
        self._require(term)
        return self._depth[term]

    def ancestors(self, term: str) -> frozenset[str]:
        """All ancestors including ``term`` itself."""
        self._require(term)
        return self._ancestors[term]

    def lcs(self, c1: str, c2: str) -> str:
        """Deepest common ancestor; ties go to the smaller term id."""
        common = self.ancestors(c1) & self.ancestors(c2)
        return min(common, key=lambda t: (-self._depth[t], t))

    def edges(self) -> list[tuple[str, str]]:
        out = [(self.root, ROOT_MARKER)]
        out += sorted((c, p) for c, ps in self._parents.items() for p in ps)
        return out

    def _require(self, term: str) -> None:
        if term not in self._parents:
            raise QuadSkyError(f"unknown taxonomy term {term!r}")


def wup(t: Taxonomy, c1: str, c2: str) -> float:
    """Wu-Palmer similarity ``2 depth(lcs) / (depth(c1) + depth(c2))``."""
    return 2.0 * t.depth(t.lcs(c1, c2)) / (t.depth(c1) + t.depth(c2))


def max_aggregate(scores: Iterable[float]) -> float:
    """Best score of a term-by-term comparison, 0.0 when there is none."""
    return max(scores, default=0.0)


def sem_sim(t: Taxonomy, c1: Iterable[str], c2: Iterable[str]) -> float:
    c1, c2 = list(c1), list(c2)
    return max_aggregate(wup(t, a, b) for a in c1 for b in c2)


@dataclass(frozen=True)
class CompareConfig:
    dims: tuple[str, ...] = DEFAULT_DIMS
    missing: float = 0.0


class Comparator:
    """Computes similarity vectors with per-run caches.

    Results are cached per distinct (name, name), (address, address) and
    (categories, categories) inputs, which repeat heavily across candidate
    pairs of the same entity.
    """

    METRICS = ("name", "address", "semantic")

    def __init__(self, taxonomy: Optional[Taxonomy], config: CompareConfig = CompareConfig()):
        unknown = set(config.dims) - set(self.METRICS)
        if unknown:
            raise QuadSkyError(f"unknown similarity dimensions {sorted(unknown)}")
        if "semantic" in config.dims and taxonomy is None:
            raise QuadSkyError("semantic similarity needs a taxonomy")
        self.taxonomy = taxonomy
        self.config = config
        self._name = lru_cache(maxsize=1 << 18)(self._name_sim)
        self._sem = lru_cache(maxsize=1 << 16)(self._sem_sim)

    def _name_sim(self, a: str, b: str) -> float:
        return text_sim(a, b)

    def _sem_sim(self, a: frozenset, b: frozenset) -> float:
        if not a or not b:
            return self.config.missing
        return sem_sim(self.taxonomy, sorted(a), sorted(b))

    def values(self, e1: SpatialEntity, e2: SpatialEntity) -> tuple[float, ...]:
        out = []
        for dim in self.config.dims:
            if dim == "name":
                a, b = e1.name, e2.name
                out.append(self._name(a, b) if a <= b else self._name(b, a))
            elif dim == "address":
                out.append(address_sim(e1.address, e2.address, self.config.missing))
            else:
                a, b = e1.categories, e2.categories
                out.append(self._sem(a, b) if sorted(a) <= sorted(b) else self._sem(b, a))
        return tuple(out)

    def compare(self, e1: SpatialEntity, e2: SpatialEntity) -> SimilarityVector:
        return SimilarityVector(self.config.dims, self.values(e1, e2))

    def compare_many(self, collection: EntityCollection, pairs: np.ndarray) -> np.ndarray:
        """Similarity matrix for index pairs, one row per pair."""
        out = np.empty((len(pairs), len(self.config.dims)))
        ents = collection
        for k, (i, j) in enumerate(pairs):
            out[k] = self.values(ents[int(i)], ents[int(j)])
        return out


def compare_pair(e1: SpatialEntity, e2: SpatialEntity, t: Optional[Taxonomy],
                 dims: Sequence[str] = DEFAULT_DIMS, missing: float = 0.0) -> SimilarityVector:
    """Similarity vector of two entities in the order given by ``dims``."""
    return Comparator(t, CompareConfig(tuple(dims), missing)).compare(e1, e2)


def map_keywords(keywords: Iterable[str], taxonomy: Taxonomy) -> frozenset[str]:
    """Keep keywords that are taxonomy terms; warn about the rest."""
    kept, dropped = set(), []
    for k in keywords:
        (kept.add(k) if k in taxonomy else dropped.append(k))
    if dropped:
        log.warning("dropping %d unmapped category keyword(s): %s", len(dropped), ", ".join(sorted(dropped)[:5]))
    return frozenset(kept)
