"""Reading and writing the CSV/JSON artifacts exchanged between stages."""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Optional, Union

from .core import CandidatePair, EntityCollection, EntityKey, QuadSkyError, SimilarityVector, SpatialEntity

PathLike = Union[str, Path]
PairKey = tuple[EntityKey, EntityKey]

ENTITY_FIELDS = ("source", "id", "lat", "lon", "name", "address", "categories", "phone", "website")
LABEL_FIELDS = ("left_source", "left_id", "right_source", "right_id", "label")
BLOCK_FIELDS = ("block_id", "source", "id")
PAIR_KEY_FIELDS = ("left_source", "left_id", "right_source", "right_id")


def _opt(v: Optional[str]) -> Optional[str]:
    return v if v else None


def _bool(v: str, where: str) -> Optional[bool]:
    t = v.strip().lower()
    if t == "":
        return None
    if t in ("1", "true", "yes", "t", "y"):
        return True
    if t in ("0", "false", "no", "f", "n"):
        return False
    raise QuadSkyError(f"{where}: not a boolean: {v!r}")


def _fmt_bool(v: Optional[bool]) -> str:
    return "" if v is None else str(int(v))


def _entity_from_record(rec: Mapping, where: str) -> SpatialEntity:
    try:
        cats = rec.get("categories") or ()
        if isinstance(cats, str):
            cats = [c for c in cats.split("|") if c]
        return SpatialEntity(
            source=str(rec["source"]), id=str(rec["id"]), lat=float(rec["lat"]), lon=float(rec["lon"]),
            name=str(rec["name"] or ""), address=_opt(rec.get("address")), categories=frozenset(cats),
            phone=_opt(rec.get("phone")), website=_opt(rec.get("website")),
        )
    except KeyError as exc:
        raise QuadSkyError(f"{where}: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise QuadSkyError(f"{where}: {exc}") from None


def read_entities(path: PathLike) -> EntityCollection:
    """Load entities from CSV or, for ``.json`` files, a JSON array of objects."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise QuadSkyError(f"{path}: expected a JSON array of entities")
        ents = [_entity_from_record(rec, f"{path}[{i}]") for i, rec in enumerate(data)]
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(ENTITY_FIELDS[:5]) - set(reader.fieldnames or ())
            if missing:
                raise QuadSkyError(f"{path}: header lacks {sorted(missing)}")
            ents = [_entity_from_record(row, f"{path}:{i}") for i, row in enumerate(reader, start=2)]
    return EntityCollection(ents)


def _entity_row(e: SpatialEntity) -> list:
    return [e.source, e.id, repr(float(e.lat)), repr(float(e.lon)), e.name, e.address or "", "|".join(sorted(e.categories)),
            e.phone or "", e.website or ""]


def write_entities(path: PathLike, entities: Iterable[SpatialEntity]) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        recs = [dict(zip(ENTITY_FIELDS, _entity_row(e))) | {"lat": float(e.lat), "lon": float(e.lon),
                                                            "categories": sorted(e.categories)} for e in entities]
        for r in recs:
            for k in ("address", "phone", "website"):
                r[k] = r[k] or None
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(recs, fh, ensure_ascii=False, indent=1)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENTITY_FIELDS)
        w.writerows(_entity_row(e) for e in entities)


def write_labels(path: PathLike, labels: Mapping[PairKey, bool]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_FIELDS)
        for (l, r), v in sorted(labels.items()):
            w.writerow([*l, *r, int(bool(v))])


def read_labels(path: PathLike) -> dict[PairKey, bool]:
    """Pair labels keyed by canonical pair; either entity order is accepted."""
    out: dict[PairKey, bool] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise QuadSkyError(f"{path}: header lacks {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            where = f"{path}:{i}"
            a, b = (row["left_source"], row["left_id"]), (row["right_source"], row["right_id"])
            if a == b:
                raise QuadSkyError(f"{where}: self-pair")
            key = (a, b) if a < b else (b, a)
            val = _bool(row["label"], where)
            if val is None:
                raise QuadSkyError(f"{where}: empty label")
            out[key] = val
    return out


def write_truth(path: PathLike, truth: Iterable[PairKey]) -> None:
    """Write a planted-pair set as a labels file with every label true."""
    write_labels(path, {k: True for k in truth})


def write_blocks(path: PathLike, blocks: Iterable[tuple[str, Sequence[EntityKey]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BLOCK_FIELDS)
        for block_id, keys in blocks:
            for s, i in keys:
                w.writerow([block_id, s, i])


def read_blocks(path: PathLike) -> dict[str, list[EntityKey]]:
    out: dict[str, list[EntityKey]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(BLOCK_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise QuadSkyError(f"{path}: header lacks {sorted(missing)}")
        for row in reader:
            out.setdefault(row["block_id"], []).append((row["source"], row["id"]))
    return out


def pair_fields(dims: Sequence[str]) -> tuple[str, ...]:
    return PAIR_KEY_FIELDS + tuple(f"delta_{d}" for d in dims) + ("skyline", "truth", "predicted")


def write_pairs(path: PathLike, pairs: Iterable[CandidatePair], dims: Sequence[str]) -> None:
    dims = tuple(dims)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(pair_fields(dims))
        for p in pairs:
            vals = [""] * len(dims) if p.delta is None else [repr(float(x)) for x in p.delta.select(dims).values]
            w.writerow([*p.left, *p.right, *vals, "" if p.skyline_level is None else p.skyline_level,
                        _fmt_bool(p.truth), _fmt_bool(p.predicted)])


def read_pairs(path: PathLike) -> tuple[list[CandidatePair], tuple[str, ...]]:
    """Load a pair CSV; the similarity dimensions come from its ``delta_*`` columns."""
    pairs: list[CandidatePair] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = set(PAIR_KEY_FIELDS) - set(header)
        if missing:
            raise QuadSkyError(f"{path}: header lacks {sorted(missing)}")
        dims = tuple(h[len("delta_"):] for h in header if h.startswith("delta_"))
        for i, row in enumerate(reader, start=2):
            where = f"{path}:{i}"
            try:
                raw = [row[f"delta_{d}"] for d in dims]
                delta = None if all(v == "" for v in raw) else SimilarityVector(dims, tuple(float(v) for v in raw))
                lv = row.get("skyline", "")
                pairs.append(CandidatePair(
                    (row["left_source"], row["left_id"]), (row["right_source"], row["right_id"]), delta,
                    int(lv) if lv else None, _bool(row.get("truth", ""), where), _bool(row.get("predicted", ""), where),
                ))
            except (ValueError, QuadSkyError) as exc:
                raise QuadSkyError(f"{where}: {exc}") from None
    return pairs, dims


def write_json(path: PathLike, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
