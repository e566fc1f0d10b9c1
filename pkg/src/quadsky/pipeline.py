"""Stage functions behind the command line: block, compare, rank, label, evaluate.

Each stage reads and writes plain artifacts, so any stage can be re-run from
the output of the previous one. Errors are wrapped in :class:`StageError`
carrying the stage name.
"""

from __future__ import annotations

import hashlib
import math
import platform
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import io as qio
from .core import CandidatePair, ClassificationResult, EntityCollection, QuadSkyError, SimilarityVector
from .evaluation import EvalReport, auto_labels, evaluate, merge_overrides
from .quadflex import QuadFlexTree, block_pair_array, build
from .similarity import Comparator, CompareConfig, Taxonomy
from .skyex import skyex_d, skyex_f, skyex_fes
from .skyrank import peel

PairKey = qio.PairKey

STAGES = ("ingest", "block", "compare", "rank", "label", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (QuadSkyError, OSError, KeyError, ValueError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"unknown key {exc}"
        raise StageError(name, msg) from exc


@dataclass
class Params:
    meters: float = 100.0
    density: float = math.inf
    reach: Optional[float] = -1.0       # -1 means "same as meters"; None disables the bound
    dims: tuple[str, ...] = ("name", "address", "semantic")
    missing: float = 0.0
    method: str = "f"
    window: int = 5
    sigma: float = 1.0
    delta_metric: str = "euclidean"
    mu_per_positive: bool = False
    country_code: str = "45"
    threads: int = 1

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dims"] = list(self.dims)
        d["density"] = None if math.isinf(self.density) else self.density
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> Params:
        d = dict(d)
        if "dims" in d:
            d["dims"] = tuple(d["dims"])
        if d.get("density") is None:
            d["density"] = math.inf
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---- block ---------------------------------------------------------------

def run_block(entities: EntityCollection, params: Params) -> QuadFlexTree:
    with stage("block"):
        if len(entities) == 0:
            raise QuadSkyError("no entities to block")
        return build(entities, m=params.meters, d=params.density, reach=params.reach)


def tree_blocks(tree: QuadFlexTree) -> list[tuple[str, list]]:
    return [(b.leaf_id, list(b.keys)) for b in tree.leaves()]


def pairs_from_blocks(entities: EntityCollection, blocks: Mapping[str, Sequence]) -> np.ndarray:
    """Canonical index pairs from a block listing (as read from a block dump)."""
    ptr = [0]
    members: list[int] = []
    for bid in blocks:
        for key in blocks[bid]:
            if key not in entities:
                raise QuadSkyError(f"block {bid}: unknown entity {key[0]}:{key[1]}")
            members.append(entities.index_of(key))
        ptr.append(len(members))
    return block_pair_array(np.array(ptr, dtype=np.int64), np.array(members, dtype=np.int64),
                            entities.key_ranks())


# ---- compare -------------------------------------------------------------

_WORKER: Optional[Comparator] = None
_WORKER_ENTS: Optional[EntityCollection] = None


def _init_worker(taxonomy, config, entities) -> None:
    global _WORKER, _WORKER_ENTS
    _WORKER = Comparator(taxonomy, config)
    _WORKER_ENTS = entities


def _compare_chunk(chunk: np.ndarray) -> np.ndarray:
    return _WORKER.compare_many(_WORKER_ENTS, chunk)


def compare_indices(entities: EntityCollection, idx: np.ndarray, taxonomy: Optional[Taxonomy],
                    params: Params) -> np.ndarray:
    config = CompareConfig(tuple(params.dims), params.missing)
    if params.threads <= 1 or len(idx) < 10_000:
        return Comparator(taxonomy, config).compare_many(entities, idx)
    chunks = np.array_split(idx, params.threads * 4)
    with ProcessPoolExecutor(params.threads, initializer=_init_worker,
                             initargs=(taxonomy, config, entities)) as pool:
        return np.concatenate(list(pool.map(_compare_chunk, chunks)))


def run_compare(entities: EntityCollection, idx: np.ndarray, taxonomy: Optional[Taxonomy],
                params: Params) -> list[CandidatePair]:
    with stage("compare"):
        vals = compare_indices(entities, idx, taxonomy, params)
        dims = tuple(params.dims)
        return [CandidatePair(entities[int(i)].key, entities[int(j)].key, SimilarityVector(dims, tuple(v)))
                for (i, j), v in zip(idx, vals.tolist())]


# ---- rank / label --------------------------------------------------------

def select_dims(pairs: Sequence[CandidatePair], dims: Sequence[str]) -> list[CandidatePair]:
    dims = tuple(dims)
    if not pairs or pairs[0].delta is None or pairs[0].delta.dims == dims:
        return list(pairs)
    try:
        return [p.with_(delta=p.delta.select(dims)) for p in pairs]
    except ValueError:
        raise QuadSkyError(f"pairs lack one of the dimensions {list(dims)}") from None


def run_rank(pairs: Sequence[CandidatePair], params: Params):
    with stage("rank"):
        return peel(select_dims(pairs, params.dims))


def attach_truth(pairs: Sequence[CandidatePair], labels: Mapping[PairKey, bool]) -> tuple[list[CandidatePair], int]:
    """Set each pair's truth (absent from ``labels`` means false).

    Also returns how many positive labels name pairs that are not candidates.
    """
    keys = {p.key for p in pairs}
    missed = sum(1 for k, v in labels.items() if v and k not in keys)
    return [p.with_(truth=bool(labels.get(p.key, False))) for p in pairs], missed


def run_label(partition, params: Params, missed: int = 0) -> ClassificationResult:
    with stage("label"):
        method = params.method.lower()
        if method == "f":
            return skyex_f(partition, missed=missed)
        if method == "fes":
            return skyex_fes(partition, missed=missed)
        if method == "d":
            return skyex_d(partition, params.window, params.sigma, params.delta_metric, params.mu_per_positive)
        raise QuadSkyError(f"unknown method {params.method!r} (use f, fes or d)")


def run_eval(result: ClassificationResult, missed: int = 0) -> EvalReport:
    with stage("eval"):
        return evaluate(result, missed=missed)


# ---- whole pipeline ------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def environment() -> dict:
    return {"quadsky": __version__, "python": platform.python_version(), "numpy": np.__version__}


@dataclass
class PipelineOutput:
    out_dir: Path
    result: ClassificationResult
    report: Optional[EvalReport]
    manifest: dict = field(default_factory=dict)


ARTIFACTS = {
    "blocks": "blocks.csv",
    "pairs": "pairs.csv",
    "ranked": "ranked.csv",
    "labeled": "labeled.csv",
    "series": "series.csv",
    "report": "report.txt",
    "manifest": "manifest.json",
}


def run_pipeline(entities_path, out_dir, params: Params, taxonomy_path=None, labels_path=None,
                 overrides_path=None, seed: Optional[int] = None) -> PipelineOutput:
    """Run every stage and write each intermediate artifact to ``out_dir``.

    Ground truth comes from ``labels_path`` when given, otherwise from
    phone/website equality; ``overrides_path`` labels win over both.
    """
    out = Path(out_dir)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    with stage("ingest"):
        entities = qio.read_entities(entities_path)
        taxonomy = Taxonomy.load(taxonomy_path) if taxonomy_path else None
        if taxonomy is None and "semantic" in params.dims:
            from .datagen import default_taxonomy
            taxonomy = default_taxonomy()
        labels = qio.read_labels(labels_path) if labels_path else None
        overrides = qio.read_labels(overrides_path) if overrides_path else {}
        out.mkdir(parents=True, exist_ok=True)
    timings["ingest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tree = run_block(entities, params)
    with stage("block"):
        qio.write_blocks(out / ARTIFACTS["blocks"], tree_blocks(tree))
        idx = tree.pair_array()
        if len(idx) == 0:
            raise QuadSkyError("blocking produced no candidate pairs")
    timings["block"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pairs = run_compare(entities, idx, taxonomy, params)
    pairs.sort(key=lambda p: p.key)
    with stage("compare"):
        qio.write_pairs(out / ARTIFACTS["pairs"], pairs, params.dims)
    timings["compare"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with stage("label"):
        if labels is None:
            labels = auto_labels(pairs, entities, params.country_code)
        labels = merge_overrides(labels, overrides)
        pairs, missed = attach_truth(pairs, labels)
    partition = run_rank(pairs, params)
    with stage("rank"):
        qio.write_pairs(out / ARTIFACTS["ranked"], partition.pairs, params.dims)
    timings["rank"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = run_label(partition, params, missed)
    with stage("label"):
        labeled = sorted(result.pairs, key=lambda p: p.key)
        qio.write_pairs(out / ARTIFACTS["labeled"], labeled, params.dims)
    timings["label"] = time.perf_counter() - t0

    report = run_eval(result, missed)
    with stage("eval"):
        report.write_series(out / ARTIFACTS["series"])
        (out / ARTIFACTS["report"]).write_text(report.summary() + "\n", encoding="utf-8")

    manifest = {
        "command": "pipeline",
        "parameters": params.to_dict(),
        "name_normalization": "strip+casefold",
        "seed": seed,
        "projection": tree.projection.to_dict(),
        "inputs": {
            "entities": {"path": str(entities_path), "sha256": file_digest(entities_path)},
            "taxonomy": None if not taxonomy_path else {"path": str(taxonomy_path),
                                                        "sha256": file_digest(taxonomy_path)},
            "labels": None if not labels_path else {"path": str(labels_path), "sha256": file_digest(labels_path)},
            "overrides": None if not overrides_path else {"path": str(overrides_path),
                                                          "sha256": file_digest(overrides_path)},
        },
        "outputs": {k: {"path": v, "sha256": file_digest(out / v)} for k, v in ARTIFACTS.items() if k != "manifest"},
        "result": {"method": result.method, "cutoff_k": result.cutoff_k, "explored_levels": result.explored_levels,
                   "total_levels": result.total_levels, "warnings": list(result.warnings),
                   "label_free": result.method == "D"},
        "counts": {"entities": len(entities), "blocks": len(tree.leaf_nodes), "pairs": len(pairs),
                   "levels": partition.K, "positive_labels_missed_by_blocking": missed},
        "timings_s": timings,
        "environment": environment(),
    }
    qio.write_json(out / ARTIFACTS["manifest"], manifest)
    return PipelineOutput(out, result, report, manifest)
