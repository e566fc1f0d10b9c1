"""``quadsky`` command line.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines named
after its long options (``delta-metric = manhattan``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import shutil
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as qio
from .config import parse_kv
from .core import QuadSkyError
from .datagen import DEFAULT_AREA, NoiseSpec, generate, oracle_fnn_indices
from .pipeline import (
    Params,
    StageError,
    attach_truth,
    environment,
    pairs_from_blocks,
    run_block,
    run_compare,
    run_eval,
    run_label,
    run_pipeline,
    run_rank,
    stage,
    tree_blocks,
)
from .quadflex import build
from .similarity import Taxonomy
from .skyrank import partition_from_levels

log = logging.getLogger("quadsky")


def _density(text: str) -> float:
    if text.lower() in ("inf", "none", "unlimited"):
        return math.inf
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("density must be positive")
    return v


def _reach(text: str) -> Optional[float]:
    t = text.lower()
    if t in ("m", "meters", "default"):
        return -1.0
    if t in ("none", "inf", "unbounded"):
        return None
    v = float(t)
    if v < 0:
        raise argparse.ArgumentTypeError("reach must be >= 0, 'm' or 'none'")
    return v


def _dims(text: str) -> tuple[str, ...]:
    dims = tuple(d.strip() for d in text.split(",") if d.strip())
    if not dims:
        raise argparse.ArgumentTypeError("at least one dimension is required")
    return dims


def _sizes(text: str) -> list[int]:
    return [int(float(s)) for s in text.split(",") if s.strip()]


def _flag(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


def _add_block_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--meters", type=float, default=100.0, help="leaf diagonal cap in metres (default 100)")
    p.add_argument("--density", type=_density, default=math.inf,
                   help="leaf density cap, entities per 1000 m^2 (default unlimited)")
    p.add_argument("--reach", type=_reach, default=-1.0,
                   help="how far (m) a leaf may reach outside its cell: a number, 'm' (= --meters, default) "
                        "or 'none' for no bound")


def _add_compare_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--taxonomy", type=Path, help="child<TAB>parent edge list (default: bundled POI taxonomy)")
    p.add_argument("--dims", type=_dims, default=("name", "address", "semantic"),
                   help="comma-separated similarity dimensions")
    p.add_argument("--missing", type=float, default=0.0, help="similarity used when an attribute is absent")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes for compare")


def _add_label_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("f", "fes", "d"), default="f")
    p.add_argument("--window", type=int, default=5, help="Gaussian smoothing window (odd)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--delta-metric", choices=("euclidean", "manhattan"), default="euclidean")
    p.add_argument("--mu-per-positive", action="store_true",
                   help="divide the cross-class distance sum by the positive count only")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quadsky", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="key = value file of option defaults")
        return p

    p = cmd("gen", "generate a synthetic multi-source dataset")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--sources", type=int, default=3)
    p.add_argument("--dup-rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=Path, help="key = value noise settings")
    p.add_argument("--no-noise", action="store_true", help="duplicates are exact copies")
    p.add_argument("--area", type=lambda s: tuple(float(x) for x in s.split(",")), default=DEFAULT_AREA,
                   help="min_lat,min_lon,max_lat,max_lon")
    p.add_argument("--hotspots", type=int, default=10)
    p.add_argument("--hotspot-fraction", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = cmd("block", "QuadFlex blocking; writes block_id,source,id")
    p.add_argument("--entities", type=Path, required=True)
    _add_block_opts(p)
    p.add_argument("--out", type=Path, required=True)

    p = cmd("compare", "similarity vectors for every within-block pair")
    p.add_argument("--entities", type=Path, required=True)
    p.add_argument("--blocks", type=Path, required=True)
    _add_compare_opts(p)
    p.add_argument("--out", type=Path, required=True)

    p = cmd("rank", "assign skyline levels")
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--dims", type=_dims, help="dimensions to rank on (default: all in the file)")
    p.add_argument("--out", type=Path, required=True)

    p = cmd("label", "choose the cut-off level and label pairs")
    p.add_argument("--pairs", type=Path, required=True, help="ranked pair CSV")
    p.add_argument("--labels", type=Path, help="ground truth for f/fes (default: the truth column)")
    _add_label_opts(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, help="metric series / distance profile CSV")

    p = cmd("eval", "score a labeled pair file")
    p.add_argument("--pairs", type=Path, required=True, help="labeled pair CSV")
    p.add_argument("--labels", type=Path, help="ground truth (default: the truth column)")
    p.add_argument("--out", type=Path, help="metric series CSV")

    p = cmd("pipeline", "block, compare, rank, label and evaluate in one go")
    p.add_argument("--entities", type=Path)
    p.add_argument("--labels", type=Path, help="ground truth; default derives it from phone/website")
    p.add_argument("--overrides", type=Path, help="manual labels that win over the rest")
    p.add_argument("--country-code", default="45")
    p.add_argument("--seed", type=int, help="recorded in the manifest")
    p.add_argument("--from-manifest", type=Path, help="re-run with the inputs and parameters of a manifest")
    _add_block_opts(p)
    _add_compare_opts(p)
    _add_label_opts(p)
    p.add_argument("--out", type=Path, required=True)

    p = cmd("bench", "QuadFlex build time and coverage versus an exhaustive radius scan")
    p.add_argument("--sizes", type=_sizes, default=[1000, 10_000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--meters", type=float, default=100.0)
    p.add_argument("--reach", type=_reach, default=-1.0)
    p.add_argument("--naive-limit", type=int, default=100_000, help="skip the exhaustive scan above this size")
    p.add_argument("--out", type=Path, required=True)
    return ap


def _prescan(argv: list[str]) -> tuple[Optional[str], Optional[str]]:
    """Find the subcommand and ``--config`` value before full parsing."""
    command = config = None
    it = iter(argv)
    for tok in it:
        if tok == "--config":
            config = next(it, None)
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
        elif command is None and not tok.startswith("-"):
            command = tok
    return command, config


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    command, config = _prescan(argv)
    subs = ap._subparsers._group_actions[0].choices  # type: ignore[union-attr]
    if config is not None and command in subs:
        try:
            cfg = parse_kv(config)
        except (OSError, QuadSkyError) as exc:
            raise StageError("config", str(exc)) from None
        subparser = subs[command]
        actions = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, raw in cfg.items():
            if key not in actions or key in ("help", "config"):
                raise StageError("config", f"unknown option {key!r} for {command}")
            act = actions[key]
            try:
                if isinstance(act, argparse._StoreTrueAction):
                    defaults[key] = _flag(raw)
                elif act.type is not None:
                    defaults[key] = act.type(raw)
                else:
                    defaults[key] = raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise StageError("config", f"{key}: {exc}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise StageError("config", f"{key}: {raw!r} not one of {sorted(act.choices)}")
        subparser.set_defaults(**defaults)
        # options supplied by the config file are no longer mandatory on the command line
        for a in subparser._actions:
            if a.dest in defaults:
                a.required = False
    return ap.parse_args(argv)


def _params(args) -> Params:
    return Params(
        meters=getattr(args, "meters", 100.0), density=getattr(args, "density", math.inf),
        reach=getattr(args, "reach", -1.0), dims=tuple(getattr(args, "dims", None) or Params.dims),
        missing=getattr(args, "missing", 0.0), method=getattr(args, "method", "f"),
        window=getattr(args, "window", 5), sigma=getattr(args, "sigma", 1.0),
        delta_metric=getattr(args, "delta_metric", "euclidean"), mu_per_positive=getattr(args, "mu_per_positive", False),
        country_code=getattr(args, "country_code", "45"), threads=max(1, getattr(args, "threads", 1) or 1),
    )


def _taxonomy(path: Optional[Path], dims) -> Optional[Taxonomy]:
    if path is not None:
        return Taxonomy.load(path)
    if "semantic" in dims:
        from .datagen import default_taxonomy
        return default_taxonomy()
    return None


# ---- subcommands -------------------------------------------------------

def cmd_gen(args) -> int:
    with stage("gen"):
        noise = NoiseSpec.none() if args.no_noise else NoiseSpec.load(args.noise) if args.noise else NoiseSpec()
        coll, truth = generate(args.n, args.sources, args.dup_rate, noise, args.area, args.seed,
                               args.hotspots, args.hotspot_fraction)
        args.out.mkdir(parents=True, exist_ok=True)
        qio.write_entities(args.out / "entities.csv", coll)
        qio.write_truth(args.out / "truth.csv", truth)
        with resources.as_file(resources.files("quadsky") / "data" / "poi_taxonomy.tsv") as src:
            shutil.copyfile(src, args.out / "taxonomy.tsv")
        qio.write_json(args.out / "manifest.json", {
            "command": "gen", "seed": args.seed, "n": args.n, "sources": args.sources, "dup_rate": args.dup_rate,
            "area": list(args.area), "hotspots": args.hotspots, "hotspot_fraction": args.hotspot_fraction,
            "noise": noise.to_dict(), "planted_pairs": len(truth), "environment": environment(),
        })
    print(f"wrote {len(coll)} entities and {len(truth)} planted pairs to {args.out}")
    return 0


def cmd_block(args) -> int:
    with stage("ingest"):
        ents = qio.read_entities(args.entities)
    tree = run_block(ents, _params(args))
    with stage("block"):
        qio.write_blocks(args.out, tree_blocks(tree))
    print(f"{len(tree.leaf_nodes)} blocks, {len(tree.pair_array())} candidate pairs")
    return 0


def cmd_compare(args) -> int:
    params = _params(args)
    with stage("ingest"):
        ents = qio.read_entities(args.entities)
        blocks = qio.read_blocks(args.blocks)
        tax = _taxonomy(args.taxonomy, params.dims)
    with stage("block"):
        idx = pairs_from_blocks(ents, blocks)
    pairs = sorted(run_compare(ents, idx, tax, params), key=lambda p: p.key)
    with stage("compare"):
        qio.write_pairs(args.out, pairs, params.dims)
    print(f"compared {len(pairs)} pairs")
    return 0


def cmd_rank(args) -> int:
    with stage("ingest"):
        pairs, dims = qio.read_pairs(args.pairs)
    params = Params(dims=tuple(args.dims) if args.dims else dims)
    part = run_rank(pairs, params)
    with stage("rank"):
        qio.write_pairs(args.out, part.pairs, params.dims)
    print(f"{len(pairs)} pairs in {part.K} skyline levels")
    return 0


def _load_ranked(path: Path, labels_path: Optional[Path]):
    with stage("ingest"):
        pairs, dims = qio.read_pairs(path)
        missed = 0
        if labels_path is not None:
            pairs, missed = attach_truth(pairs, qio.read_labels(labels_path))
        if not pairs:
            raise QuadSkyError(f"{path}: no pairs")
        if any(p.skyline_level is None for p in pairs):
            raise QuadSkyError(f"{path}: pairs without a skyline level; run 'rank' first")
        part = partition_from_levels(pairs, np.array([p.skyline_level for p in pairs]))
    return part, dims, missed


def cmd_label(args) -> int:
    part, dims, missed = _load_ranked(args.pairs, args.labels)
    params = _params(args)
    result = run_label(part, params, missed)
    with stage("label"):
        qio.write_pairs(args.out, sorted(result.pairs, key=lambda p: p.key), dims)
        if args.report:
            _write_label_report(args.report, result)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"method={result.method} cutoff_k={result.cutoff_k} explored_levels={result.explored_levels} "
          f"total_levels={result.total_levels} positives={len(result.positives)}")
    return 0


def _write_label_report(path: Path, result) -> None:
    import csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if result.profile is not None:
            prof = result.profile
            w.writerow(["k", "mu", "derivative", "smoothed", "selected"])
            for i, mu in enumerate(prof.mu):
                d = repr(float(prof.derivative[i])) if i < len(prof.derivative) else ""
                s = repr(float(prof.smoothed[i])) if i < len(prof.smoothed) else ""
                w.writerow([i + 1, repr(float(mu)), d, s, int(i + 1 == result.cutoff_k)])
        else:
            w.writerow(["k", "precision", "recall", "f1", "selected"])
            for k, p, r, f in result.metric_series or ():
                w.writerow([k, repr(p), repr(r), repr(f), int(k == result.cutoff_k)])


def cmd_eval(args) -> int:
    from .core import ClassificationResult
    with stage("ingest"):
        pairs, _ = qio.read_pairs(args.pairs)
        missed = 0
        if args.labels is not None:
            pairs, missed = attach_truth(pairs, qio.read_labels(args.labels))
        if any(p.predicted is None for p in pairs):
            raise QuadSkyError(f"{args.pairs}: pairs without a prediction; run 'label' first")
        pos = tuple(p for p in pairs if p.predicted)
        neg = tuple(p for p in pairs if not p.predicted)
        levels = [p.skyline_level for p in pos if p.skyline_level is not None]
        result = ClassificationResult("F", max(levels, default=1), pos, neg)
    report = run_eval(result, missed)
    with stage("eval"):
        if args.out:
            report.write_series(args.out)
    print(report.summary().replace("method=F ", ""))
    return 0


def cmd_pipeline(args) -> int:
    labels, overrides, taxonomy, seed = args.labels, args.overrides, args.taxonomy, args.seed
    entities = args.entities
    params = _params(args)
    if args.from_manifest:
        with stage("ingest"):
            man = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
            params = Params.from_dict(man["parameters"])
            inp = man["inputs"]
            entities = Path(inp["entities"]["path"])
            taxonomy = Path(inp["taxonomy"]["path"]) if inp.get("taxonomy") else None
            labels = Path(inp["labels"]["path"]) if inp.get("labels") else None
            overrides = Path(inp["overrides"]["path"]) if inp.get("overrides") else None
            seed = man.get("seed")
    if entities is None:
        raise StageError("ingest", "--entities is required")
    if not Path(entities).exists():
        raise StageError("ingest", f"input file not found: {entities}")
    out = run_pipeline(entities, args.out, params, taxonomy, labels, overrides, seed)
    for w in out.result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(out.report.summary() if out.report else f"cutoff_k={out.result.cutoff_k}")
    return 0


def cmd_bench(args) -> int:
    import csv
    rows = []
    for n in args.sizes:
        with stage("bench"):
            coll, _ = generate(n, seed=args.seed)
            t0 = time.perf_counter()
            tree = build(coll, m=args.meters, reach=args.reach)
            cand = tree.pair_array()
            t_build = time.perf_counter() - t0
            row = {"n": n, "quadflex_s": t_build, "pairs": len(cand), "fnn_pairs": "", "coverage": "",
                   "naive_s": "", "speedup": ""}
            if n <= args.naive_limit:
                t0 = time.perf_counter()
                fnn = oracle_fnn_indices(coll, args.meters)
                t_naive = time.perf_counter() - t0
                ranks = coll.key_ranks()
                have = set((ranks[cand[:, 0]] * n + ranks[cand[:, 1]]).tolist())
                lo = np.minimum(ranks[fnn[:, 0]], ranks[fnn[:, 1]])
                hi = np.maximum(ranks[fnn[:, 0]], ranks[fnn[:, 1]])
                hit = sum(1 for c in (lo * n + hi).tolist() if c in have)
                row.update(fnn_pairs=len(fnn), coverage=hit / len(fnn) if len(fnn) else 1.0, naive_s=t_naive,
                           speedup=t_naive / t_build if t_build > 0 else "")
            rows.append(row)
            print(" ".join(f"{k}={v}" for k, v in row.items()))
    with stage("bench"):
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["n"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


COMMANDS = {"gen": cmd_gen, "block": cmd_block, "compare": cmd_compare, "rank": cmd_rank, "label": cmd_label,
            "eval": cmd_eval, "pipeline": cmd_pipeline, "bench": cmd_bench}


def main(argv: Optional[list[str]] = None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(ap, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: stage {exc.stage}: {exc.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
