"""Self-contained random forest: Gini trees, bootstrap, portable text format.

Training is a pure function of (X, y, params): per-tree randomness comes
from a counter-based generator keyed with seed XOR tree index, so results
are identical no matter how many threads build the trees.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import FeatureMatrix, FormatError, InputError, LabelVector

FOREST_MAGIC = "memkex-forest v1"

LEAF = -1  # feature index marking a leaf node


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    # None means floor(sqrt(n_features)), minimum 1.
    features_per_split: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise InputError("tree_count must be >= 1")
        if self.min_samples_split < 2:
            raise InputError("min_samples_split must be >= 2")

    def resolved_features_per_split(self, n_features: int) -> int:
        if self.features_per_split is not None:
            return max(1, min(self.features_per_split, n_features))
        return max(1, int(math.isqrt(n_features)))


@dataclass
class Tree:
    """Flat array representation: internal nodes split `value <= threshold` left."""

    feature: np.ndarray    # int32, LEAF for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32 child indices
    right: np.ndarray
    counts: np.ndarray     # (n_nodes, n_classes) int64 class counts (leaves only)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row, vectorized across rows."""
        node = np.zeros(X.shape[0], dtype=np.int32)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            f = self.feature[cur]
            go_left = X[idx, f] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return node


@dataclass
class ForestModel:
    params: ForestParams
    class_names: tuple[str, ...]
    n_features: int
    trees: list[Tree]


class _TreeBuilder:
    def __init__(self, X, y, n_classes, params, rng):
        self.X = X
        self.y = y
        self.k = n_classes
        self.params = params
        self.rng = rng
        self.m = params.resolved_features_per_split(X.shape[1])
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.counts = []

    def _new_node(self):
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(0)
        self.right.append(0)
        self.counts.append(None)
        return len(self.feature) - 1

    def _best_split(self, idx):
        """Lowest weighted Gini over a random feature subset; None if no split."""
        n = idx.size
        Xs = self.X[idx]
        ys = self.y[idx]
        onehot = np.zeros((n, self.k), dtype=np.float64)
        onehot[np.arange(n), ys] = 1.0
        total = onehot.sum(axis=0)

        feats = self.rng.choice(self.X.shape[1], size=self.m, replace=False)
        best = None  # (gini, feature, threshold)
        for f in np.sort(feats):
            col = Xs[:, f]
            order = np.argsort(col, kind="stable")
            sv = col[order]
            splits = np.nonzero(sv[:-1] < sv[1:])[0]
            if splits.size == 0:
                continue  # constant column
            cs = np.cumsum(onehot[order], axis=0)
            nl = splits + 1.0
            nr = n - nl
            cl = cs[splits]
            cr = total - cl
            gini = (nl - (cl * cl).sum(axis=1) / nl + nr - (cr * cr).sum(axis=1) / nr) / n
            j = int(np.argmin(gini))
            g = float(gini[j])
            if best is None or g < best[0]:
                thr = (sv[splits[j]] + sv[splits[j] + 1]) / 2.0
                best = (g, int(f), float(thr))
        return best

    def build(self, idx):
        # Explicit stack: deep trees must not hit the recursion limit.
        root = self._new_node()
        stack = [(root, idx, 0)]
        while stack:
            node, node_idx, depth = stack.pop()
            counts = np.bincount(self.y[node_idx], minlength=self.k)
            pure = np.count_nonzero(counts) <= 1
            depth_capped = self.params.max_depth is not None and depth >= self.params.max_depth
            split = None
            if not pure and not depth_capped and node_idx.size >= self.params.min_samples_split:
                split = self._best_split(node_idx)
            if split is None:
                self.counts[node] = counts
                continue
            _, f, thr = split
            mask = self.X[node_idx, f] <= thr
            left_idx = node_idx[mask]
            right_idx = node_idx[~mask]
            if left_idx.size == 0 or right_idx.size == 0:
                self.counts[node] = counts
                continue
            self.feature[node] = f
            self.threshold[node] = thr
            l = self._new_node()
            r = self._new_node()
            self.left[node] = l
            self.right[node] = r
            stack.append((r, right_idx, depth + 1))
            stack.append((l, left_idx, depth + 1))
        return self._finish()

    def _finish(self) -> Tree:
        n = len(self.feature)
        counts = np.zeros((n, self.k), dtype=np.int64)
        for i, c in enumerate(self.counts):
            if c is not None:
                counts[i] = c
        return Tree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            counts=counts,
        )


def _grow_tree(X, y, n_classes, params, tree_index) -> Tree:
    rng = np.random.Generator(np.random.Philox(key=params.seed ^ tree_index))
    n = X.shape[0]
    if params.bootstrap:
        idx = np.sort(rng.integers(0, n, size=n))
    else:
        idx = np.arange(n)
    return _TreeBuilder(X, y, n_classes, params, rng).build(idx)


def train_forest(X: FeatureMatrix, y: LabelVector, params: ForestParams | None = None,
                 threads: int = 1) -> ForestModel:
    """Grow the ensemble. Deterministic for fixed (X, y, params) at any thread count."""
    params = params or ForestParams()
    if X.rows != y.rows:
        raise InputError(f"feature rows ({X.rows}) != label rows ({y.rows})")
    if X.rows < 2:
        raise InputError("need at least 2 training rows")
    data = np.ascontiguousarray(X.values)
    labels = y.labels
    k = len(y.class_names)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(
                lambda i: _grow_tree(data, labels, k, params, i),
                range(params.tree_count)))
    else:
        trees = [_grow_tree(data, labels, k, params, i) for i in range(params.tree_count)]
    return ForestModel(params, tuple(y.class_names), data.shape[1], trees)


def _check_row_width(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise InputError(f"row has {X.shape[1]} columns, model expects {model.n_features}")
    return X


def predict_score(model: ForestModel, X) -> np.ndarray:
    """Mean of per-tree normalized leaf distributions; rows sum to 1."""
    X = _check_row_width(model, X)
    k = len(model.class_names)
    acc = np.zeros((X.shape[0], k), dtype=np.float64)
    for tree in model.trees:
        leaves = tree.apply(X)
        dist = tree.counts[leaves].astype(np.float64)
        acc += dist / dist.sum(axis=1, keepdims=True)
    return acc / len(model.trees)


def predict(model: ForestModel, X) -> np.ndarray:
    """Majority vote of per-tree argmax classes; ties go to the lower index."""
    X = _check_row_width(model, X)
    k = len(model.class_names)
    votes = np.zeros((X.shape[0], k), dtype=np.int64)
    for tree in model.trees:
        leaves = tree.apply(X)
        winners = np.argmax(tree.counts[leaves], axis=1)
        votes[np.arange(X.shape[0]), winners] += 1
    return np.argmax(votes, axis=1)


def predict_one(model: ForestModel, x) -> int:
    return int(predict(model, np.atleast_2d(x))[0])


# ---------------------------------------------------------------------------
# Versioned, platform-independent text serialization

def serialize_model(model: ForestModel) -> bytes:
    p = model.params
    lines = [
        FOREST_MAGIC,
        f"params {p.tree_count} {p.max_depth if p.max_depth is not None else 'none'} "
        f"{p.min_samples_split} "
        f"{p.features_per_split if p.features_per_split is not None else 'sqrt'} "
        f"{int(p.bootstrap)} {p.seed}",
        f"classes {' '.join(model.class_names)}",
        f"n_features {model.n_features}",
    ]
    for i, tree in enumerate(model.trees):
        lines.append(f"tree {i} {tree.n_nodes}")
        for j in range(tree.n_nodes):
            if tree.feature[j] == LEAF:
                lines.append("L " + " ".join(str(int(c)) for c in tree.counts[j]))
            else:
                # float hex keeps thresholds bit-exact across platforms
                lines.append(f"I {tree.feature[j]} {float(tree.threshold[j]).hex()} "
                             f"{tree.left[j]} {tree.right[j]}")
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize_model(data: bytes) -> ForestModel:
    try:
        lines = data.decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError("model file is not ASCII text") from exc
    if not lines or lines[0] != FOREST_MAGIC:
        raise FormatError(f"bad model header, expected {FOREST_MAGIC!r}")
    if lines[-1] != "end":
        raise FormatError("truncated model file (missing end marker)")
    try:
        _, tc, md, mss, fps, bs, seed = lines[1].split()
        params = ForestParams(
            tree_count=int(tc),
            max_depth=None if md == "none" else int(md),
            min_samples_split=int(mss),
            features_per_split=None if fps == "sqrt" else int(fps),
            bootstrap=bool(int(bs)),
            seed=int(seed),
        )
        class_names = tuple(lines[2].split()[1:])
        n_features = int(lines[3].split()[1])
        k = len(class_names)
        trees = []
        pos = 4
        for i in range(params.tree_count):
            tag, idx, n_nodes = lines[pos].split()
            if tag != "tree" or int(idx) != i:
                raise FormatError(f"expected tree {i} header at line {pos + 1}")
            n_nodes = int(n_nodes)
            pos += 1
            feature = np.full(n_nodes, LEAF, dtype=np.int32)
            threshold = np.zeros(n_nodes, dtype=np.float64)
            left = np.zeros(n_nodes, dtype=np.int32)
            right = np.zeros(n_nodes, dtype=np.int32)
            counts = np.zeros((n_nodes, k), dtype=np.int64)
            for j in range(n_nodes):
                parts = lines[pos + j].split()
                if parts[0] == "L":
                    counts[j] = [int(c) for c in parts[1:]]
                elif parts[0] == "I":
                    feature[j] = int(parts[1])
                    threshold[j] = float.fromhex(parts[2])
                    left[j] = int(parts[3])
                    right[j] = int(parts[4])
                else:
                    raise FormatError(f"bad node record at line {pos + j + 1}")
            pos += n_nodes
            trees.append(Tree(feature, threshold, left, right, counts))
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    return ForestModel(params, class_names, n_features, trees)


def save_model(model: ForestModel, path) -> None:
    from .core import atomic_write_bytes
    atomic_write_bytes(path, serialize_model(model))


def load_model(path) -> ForestModel:
    import os
    if not os.path.isfile(path):
        raise InputError(f"no such file: {path}")
    with open(path, "rb") as f:
        return deserialize_model(f.read())
