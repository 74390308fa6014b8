"""Learning curves and PR/ROC output: graph features versus raw windows.

Trains forests on growing subsets of a shared training pool for two feature
families and writes learning-curve and ROC/PR CSVs (plus a gnuplot script)
into an output directory.

Usage: python3 learning_curves.py [--out DIR] [--heaps N]
"""
import argparse
import os

import numpy as np

from memkex import chunking, evaluation, forest, heapgraph
from memkex.core import FeatureMatrix, LabelVector, atomic_write_text
from memkex.synth import HeapRecipe, generate_heap


def datasets(seeds):
    graph_parts, sliced_parts = [], []
    for s in seeds:
        h, _ = generate_heap(HeapRecipe(seed=s, heap_size=16384))
        g = heapgraph.build_heap_graph(h)
        graph_parts.append(heapgraph.graph_dataset(g, h))
        sliced_parts.append(chunking.chunk_dataset([h], "sliced"))

    def merge(ps):
        values = np.vstack([f.values for f, _ in ps])
        prov = [p for f, _ in ps for p in f.provenance]
        labels = np.concatenate([l.labels for _, l in ps])
        return FeatureMatrix(values, prov), LabelVector(labels, ps[0][1].class_names)

    return merge(graph_parts), merge(sliced_parts)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="curves-out")
    ap.add_argument("--heaps", type=int, default=60)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    split = int(args.heaps * 0.75)
    (g_tr, gy_tr), (s_tr, sy_tr) = datasets(range(split))
    (g_te, gy_te), (s_te, sy_te) = datasets(range(split, args.heaps))

    sizes = [100, 250, 500, 1000, min(2000, g_tr.rows, s_tr.rows)]
    params = forest.ForestParams(tree_count=50, seed=0)
    for name, pool, val in (("graph", (g_tr, gy_tr), (g_te, gy_te)),
                            ("sliced", (s_tr, sy_tr), (s_te, sy_te))):
        rows = evaluation.learning_curve(pool, val, sizes, params, threads=4)
        path = os.path.join(args.out, f"curve-{name}.csv")
        atomic_write_text(path, evaluation.learning_curve_csv(rows))
        last = rows[-1][1]
        print(f"{name}: wrote {path}; F1 at {sizes[-1]} instances = {last.f1:.4f}")
        for size, m in rows:
            print(f"  {size:5d} instances -> F1 {m.f1:.4f}")

    # PR/ROC for the full-pool graph model
    model = forest.train_forest(g_tr, gy_tr, params, threads=4)
    scores = forest.predict_score(model, g_te.values)[:, 1]
    cs = evaluation.curves(gy_te, scores)
    atomic_write_text(os.path.join(args.out, "roc.csv"),
                      evaluation.curve_csv(cs.roc, "fpr", "tpr"))
    atomic_write_text(os.path.join(args.out, "pr.csv"),
                      evaluation.curve_csv(cs.pr, "recall", "precision"))
    atomic_write_text(os.path.join(args.out, "plot.gnuplot"), evaluation.GNUPLOT_SCRIPT)
    print(f"graph-model ROC AUC: {cs.auc:.4f} (roc.csv / pr.csv / plot.gnuplot "
          f"written to {args.out})")


if __name__ == "__main__":
    main()
