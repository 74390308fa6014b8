"""memkex command line: scan, graph, featurize, train, eval, curve, synth,
snapshot-features, pipeline.

Exit codes: 0 success, 2 usage error, 3 input error, 4 internal invariant
failure. Every run writes its resolved configuration next to its outputs
(<out>.run.json, or run_config.json inside an output directory).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import chunking, evaluation, forest, heapgraph, snapshot as snap_mod, synth
from .core import (
    InputError, LabelVector, MemkexError, atomic_write_text, load_features,
    load_heap_dump, load_labels, load_snapshot, save_features, save_heap_dump,
    save_labels, HeapDump,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_INTERNAL = 4


def _hex(value: str) -> int:
    return int(value, 16)


def _record_config(args: argparse.Namespace, out_path: str | None) -> None:
    if out_path is None:
        return
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    text = json.dumps(config, sort_keys=True, default=str, indent=2) + "\n"
    if os.path.isdir(out_path):
        atomic_write_text(os.path.join(out_path, "run_config.json"), text)
    else:
        atomic_write_text(str(out_path) + ".run.json", text)


def _load_bare_heap(raw_path: str, base: int) -> HeapDump:
    if not os.path.isfile(raw_path):
        raise InputError(f"no such file: {raw_path}")
    with open(raw_path, "rb") as f:
        data = f.read()
    source_id = os.path.splitext(os.path.basename(raw_path))[0]
    return HeapDump(data, base, base + len(data), (), source_id)


# ---------------------------------------------------------------------------
# subcommands

def cmd_scan(args) -> int:
    from . import scan
    if args.kernel:
        image = load_snapshot(args.raw, args.ptroot)
        for cand in scan.find_kernel_pointer_candidates(image):
            print(f"{cand.phys_offset:#x} {cand.vaddr:#x}")
        return EXIT_OK
    if args.base is None:
        raise InputError("--base is required unless --kernel is given")
    heap = _load_bare_heap(args.raw, args.base)
    for cand in scan.find_pointer_candidates(heap):
        verdict = "valid" if scan.is_valid_pointer(heap, cand) else "invalid"
        print(f"{cand.offset:#x} {cand.value:#x} {verdict}")
    return EXIT_OK


def cmd_graph(args) -> int:
    heap = _load_bare_heap(args.raw, args.base)
    graph = heapgraph.build_heap_graph(heap)
    heapgraph.save_graph(graph, args.out)
    _record_config(args, args.out)
    return EXIT_OK


def cmd_featurize(args) -> int:
    heaps = synth.load_corpus(args.corpus_dir, "heap")
    if args.method == "graph":
        parts = [heapgraph.graph_dataset(heapgraph.build_heap_graph(h), h) for h in heaps]
        values = np.vstack([fm.values for fm, _ in parts])
        provenance = [p for fm, _ in parts for p in fm.provenance]
        labels = np.concatenate([lv.labels for _, lv in parts])
        from .core import FeatureMatrix
        fm = FeatureMatrix(values, provenance)
        lv = LabelVector(labels, heapgraph.BINARY_CLASSES)
    else:
        fm, lv = chunking.chunk_dataset(
            heaps, args.method,
            entropy_threshold=args.entropy_threshold if args.method != "sliced" else None)
    save_features(fm, args.out)
    save_labels(lv, args.out + ".labels")
    _record_config(args, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    X = load_features(args.features)
    y = load_labels(args.labels)
    params = forest.ForestParams(tree_count=args.trees, max_depth=args.max_depth,
                                 seed=args.seed)
    model = forest.train_forest(X, y, params, threads=args.threads)
    forest.save_model(model, args.out)
    _record_config(args, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = forest.load_model(args.model)
    X = load_features(args.features)
    y = load_labels(args.labels)
    pred = forest.predict(model, X.values)
    cm = evaluation.confusion(y, LabelVector(pred, y.class_names))
    m = evaluation.metrics(cm)
    print(f"accuracy {m.accuracy:.6f}")
    print(f"precision {m.precision:.6f}")
    print(f"recall {m.recall:.6f}")
    print(f"f1 {m.f1:.6f}")
    if args.curves:
        os.makedirs(args.curves, exist_ok=True)
        scores = forest.predict_score(model, X.values)[:, 1]
        cs = evaluation.curves(y, scores)
        atomic_write_text(os.path.join(args.curves, "roc.csv"),
                          evaluation.curve_csv(cs.roc, "fpr", "tpr"))
        atomic_write_text(os.path.join(args.curves, "pr.csv"),
                          evaluation.curve_csv(cs.pr, "recall", "precision"))
        atomic_write_text(os.path.join(args.curves, "plot.gnuplot"),
                          evaluation.GNUPLOT_SCRIPT)
        atomic_write_text(os.path.join(args.curves, "auc.txt"), f"{cs.auc:.6f}\n")
        _record_config(args, args.curves)
        print(f"auc {cs.auc:.6f}")
    return EXIT_OK


def cmd_curve(args) -> int:
    X = load_features(args.features)
    y = load_labels(args.labels)
    Xv = load_features(args.val_features)
    yv = load_labels(args.val_labels)
    sizes = [int(s) for s in args.sizes.split(",")]
    params = forest.ForestParams(tree_count=args.trees, seed=args.seed)
    rows = evaluation.learning_curve((X, y), (Xv, yv), sizes, params, threads=args.threads)
    atomic_write_text(args.out, evaluation.learning_curve_csv(rows))
    _record_config(args, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "heap":
        for i in range(args.count):
            recipe = synth.HeapRecipe(seed=args.seed + i, heap_size=args.heap_size)
            heap, _ = synth.generate_heap(recipe)
            stem = os.path.join(args.out, f"heap-{args.seed + i:06d}")
            save_heap_dump(heap, stem + ".raw", stem + ".meta")
    else:
        for i in range(args.count):
            specs = tuple(
                synth.ListSpec(count=12 + 2 * c, spacing=0x1C0 + 0x40 * c,
                               circular=(c % 2 == 0), class_id=c)
                for c in range(args.classes))
            recipe = synth.SnapshotRecipe(seed=args.seed + i, list_specs=specs,
                                          decoy_count=args.decoys)
            image, labels = synth.generate_snapshot(recipe)
            stem = os.path.join(args.out, f"snapshot-{args.seed + i:06d}")
            from .core import atomic_write_bytes
            atomic_write_bytes(stem + ".raw", image.data)
            atomic_write_text(stem + ".meta", f"page_table_root {image.page_table_root:#x}\n")
            snap_mod.save_snapshot_labels(labels, stem + ".labels")
    _record_config(args, args.out)
    return EXIT_OK


def cmd_snapshot_features(args) -> int:
    image = load_snapshot(args.raw, args.ptroot)
    labels = snap_mod.load_snapshot_labels(args.labels) if args.labels else None
    fm, lv = snap_mod.snapshot_dataset(image, labels)
    save_features(fm, args.out)
    if lv is not None:
        save_labels(lv, args.out + ".labels")
    _record_config(args, args.out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    stage1 = forest.load_model(args.stage1)
    stage2 = forest.load_model(args.stage2)
    rows = load_features(args.features)
    for (src, off), cls in zip(rows.provenance, snap_mod.two_stage_classify(stage1, stage2, rows)):
        print(f"{src} {off:#x} {cls if cls is not None else '-'}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memkex",
                                     description="memory-forensics toolkit")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="list pointer candidates in a dump")
    p.add_argument("raw")
    p.add_argument("--base", type=_hex, help="heap base virtual address (hex)")
    p.add_argument("--kernel", action="store_true", help="scan for kernel pointers instead")
    p.add_argument("--ptroot", type=_hex, default=0, help="page table root (hex, kernel mode)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("graph", help="build and export the heap structure graph")
    p.add_argument("raw")
    p.add_argument("--base", type=_hex, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("featurize", help="featurize a heap corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("--method", choices=["sliced", "meta", "header", "graph"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--entropy-threshold", type=float, default=None)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a forest on a feature/label file pair")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model; optionally write PR/ROC CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--curves", help="directory for roc.csv/pr.csv/auc.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="learning-curve CSV over growing training sizes")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--val-features", required=True)
    p.add_argument("--val-labels", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated ascending sizes")
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    p.add_argument("kind", choices=["heap", "snapshot"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--heap-size", type=int, default=65536)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--decoys", type=int, default=2000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("snapshot-features", help="featurize kernel pointer candidates")
    p.add_argument("raw")
    p.add_argument("--ptroot", type=_hex, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="label sidecar (vaddr class_name lines)")
    p.set_defaults(func=cmd_snapshot_features)

    p = sub.add_parser("pipeline", help="two-stage classification of feature rows")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"memkex: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"memkex: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MemkexError, AssertionError) as exc:
        print(f"memkex: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
