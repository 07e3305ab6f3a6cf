"""From-scratch CART decision trees and random forests.

Training is deterministic: the stream of random choices for tree t is derived
only from (seed, t), so serial and parallel training produce identical models.
Splits minimize weighted Gini impurity with midpoint thresholds between
adjacent distinct feature values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .errors import FormatError

MODEL_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus binary labels (0 benign, 1 ransomware)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int8)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y row counts differ")
        if X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names arity does not match X")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def arity(self) -> int:
        return self.X.shape[1]

    def label_counts(self) -> tuple[int, int]:
        ones = int(self.y.sum())
        return len(self.y) - ones, ones


@dataclass(frozen=True)
class Leaf:
    prob_malicious: float


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Leaf | Split


@dataclass(frozen=True)
class ForestParams:
    max_depth: int = 16
    min_leaf: int = 2
    features_per_split: int | None = None  # None = ceil(sqrt(arity))
    bootstrap: bool = True  # disable only for deterministic memorization tests
    class_weight: str | None = "balanced"

    def resolve_features_per_split(self, arity: int) -> int:
        if self.features_per_split is not None:
            return max(1, min(arity, self.features_per_split))
        return max(1, math.ceil(math.sqrt(arity)))


@dataclass
class Forest:
    trees: list[TreeNode]
    params: ForestParams
    feature_names: tuple[str, ...]
    seed: int
    _flat: list[tuple[np.ndarray, ...]] | None = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def arity(self) -> int:
        return len(self.feature_names)

    def predict(self, feature_vector: Sequence[float]) -> float:
        x = np.asarray(feature_vector, dtype=np.float64)
        if x.shape != (self.arity,):
            raise ValueError(f"arity mismatch: model {self.arity}, vector {x.shape}")
        return float(self.predict_batch(x.reshape(1, -1))[0])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        """Mean per-tree leaf probability for each row of X."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.arity:
            raise ValueError(f"arity mismatch: model {self.arity}, matrix {X.shape}")
        if X.shape[0] == 0:
            return np.zeros(0)
        total = np.zeros(X.shape[0])
        for feat, thresh, left, right, prob in self._flattened():
            idx = np.zeros(X.shape[0], dtype=np.int32)
            while True:
                f = feat[idx]
                inner = f >= 0
                if not inner.any():
                    break
                rows = np.nonzero(inner)[0]
                at = idx[rows]
                go_left = X[rows, feat[at]] <= thresh[at]
                idx[rows] = np.where(go_left, left[at], right[at])
            total += prob[idx]
        return total / self.n_trees

    def _flattened(self) -> list[tuple[np.ndarray, ...]]:
        if self._flat is None:
            self._flat = [_flatten_tree(t) for t in self.trees]
        return self._flat


def _flatten_tree(root: TreeNode) -> tuple[np.ndarray, ...]:
    feat: list[int] = []
    thresh: list[float] = []
    left: list[int] = []
    right: list[int] = []
    prob: list[float] = []

    def add(node: TreeNode) -> int:
        i = len(feat)
        if isinstance(node, Leaf):
            feat.append(-1)
            thresh.append(0.0)
            left.append(-1)
            right.append(-1)
            prob.append(node.prob_malicious)
        else:
            feat.append(node.feature_index)
            thresh.append(node.threshold)
            left.append(0)
            right.append(0)
            prob.append(0.0)
            li = add(node.left)
            ri = add(node.right)
            left[i] = li
            right[i] = ri
        return i

    add(root)
    return (
        np.asarray(feat, dtype=np.int32),
        np.asarray(thresh, dtype=np.float64),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(prob, dtype=np.float64),
    )


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    rows: np.ndarray,
    candidates: np.ndarray,
    min_leaf: int,
) -> tuple[float, int, float] | None:
    """Best (impurity, feature, threshold) over candidate features, or None.

    Ties break toward the lowest feature index, then the lowest threshold,
    which keeps training deterministic.
    """
    best: tuple[float, int, float] | None = None
    w_node = w[rows]
    y_node = y[rows]
    total_w = w_node.sum()
    total_pos = (w_node * y_node).sum()
    for f in sorted(int(c) for c in candidates):
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        boundaries = np.nonzero(xs_sorted[:-1] < xs_sorted[1:])[0]
        if boundaries.size == 0:
            continue
        # counts of rows on the left of each boundary must respect min_leaf
        n = len(rows)
        left_counts = boundaries + 1
        ok = (left_counts >= min_leaf) & (n - left_counts >= min_leaf)
        if not ok.any():
            continue
        boundaries = boundaries[ok]
        w_sorted = w_node[order]
        pw_sorted = w_sorted * y_node[order]
        cw = np.cumsum(w_sorted)
        cpw = np.cumsum(pw_sorted)
        wl = cw[boundaries]
        pl = cpw[boundaries]
        wr = total_w - wl
        pr = total_pos - pl
        gini_l = 1.0 - (pl / wl) ** 2 - ((wl - pl) / wl) ** 2
        gini_r = 1.0 - (pr / wr) ** 2 - ((wr - pr) / wr) ** 2
        impurity = (wl * gini_l + wr * gini_r) / total_w
        k = int(np.argmin(impurity))
        imp = float(impurity[k])
        thr = float((xs_sorted[boundaries[k]] + xs_sorted[boundaries[k] + 1]) / 2.0)
        if best is None or imp < best[0] - 1e-15:
            best = (imp, f, thr)
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    rows: np.ndarray,
    depth: int,
    params: ForestParams,
    k_features: int,
    rng: np.random.Generator,
) -> TreeNode:
    w_node = w[rows]
    pos = float((w_node * y[rows]).sum())
    tot = float(w_node.sum())
    prob = pos / tot if tot > 0 else 0.0
    if (
        depth >= params.max_depth
        or len(rows) < 2 * params.min_leaf
        or pos == 0.0
        or pos == tot
    ):
        return Leaf(prob)
    arity = X.shape[1]
    if k_features < arity:
        candidates = rng.choice(arity, size=k_features, replace=False)
    else:
        candidates = np.arange(arity)
    found = _best_split(X, y, w, rows, candidates, params.min_leaf)
    if found is None:
        return Leaf(prob)
    _, f, thr = found
    mask = X[rows, f] <= thr
    left = _grow_tree(X, y, w, rows[mask], depth + 1, params, k_features, rng)
    right = _grow_tree(X, y, w, rows[~mask], depth + 1, params, k_features, rng)
    return Split(f, thr, left, right)


def _class_weights(y: np.ndarray, mode: str | None) -> np.ndarray:
    if mode is None:
        return np.ones(len(y))
    if mode != "balanced":
        raise ValueError(f"unknown class_weight {mode!r}")
    n = len(y)
    pos = int(y.sum())
    neg = n - pos
    w = np.ones(n)
    if pos and neg:
        w[y == 1] = n / (2.0 * pos)
        w[y == 0] = n / (2.0 * neg)
    return w


def train_tree(
    dataset: Dataset,
    params: ForestParams = ForestParams(),
    seed: int = 0,
    sample_weight: np.ndarray | None = None,
) -> TreeNode:
    """Grow a single CART tree; leaf probability is the weighted label-1 share."""
    if dataset.n_rows == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng([seed])
    w = np.ones(dataset.n_rows) if sample_weight is None else np.asarray(sample_weight, float)
    k = params.resolve_features_per_split(dataset.arity)
    return _grow_tree(
        dataset.X, dataset.y, w, np.arange(dataset.n_rows), 0, params, k, rng
    )


def train_forest(
    dataset: Dataset,
    params: ForestParams = ForestParams(),
    n_trees: int = 100,
    seed: int = 0,
) -> Forest:
    """Train n_trees CART trees on bootstrap resamples of the dataset.

    Each tree's RNG stream is derived only from (seed, tree_index), so the
    same (dataset, params, n_trees, seed) always produces the same model.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if dataset.n_rows == 0:
        raise ValueError("empty dataset")
    base_w = _class_weights(dataset.y, params.class_weight)
    k = params.resolve_features_per_split(dataset.arity)
    trees: list[TreeNode] = []
    all_rows = np.arange(dataset.n_rows)
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, dataset.n_rows, dataset.n_rows) if params.bootstrap else all_rows
        trees.append(
            _grow_tree(dataset.X, dataset.y, base_w, rows, 0, params, k, rng)
        )
    return Forest(trees=trees, params=params, feature_names=dataset.feature_names, seed=seed)


def predict(forest: Forest, feature_vector: Sequence[float]) -> float:
    return forest.predict(feature_vector)


def _node_to_obj(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.prob_malicious}
    return {
        "f": node.feature_index,
        "t": node.threshold,
        "l": _node_to_obj(node.left),
        "r": _node_to_obj(node.right),
    }


def _node_from_obj(obj: dict) -> TreeNode:
    if not isinstance(obj, dict):
        raise FormatError("model: malformed tree node")
    if "leaf" in obj:
        p = float(obj["leaf"])
        if not 0.0 <= p <= 1.0:
            raise FormatError(f"model: leaf probability {p} outside [0,1]")
        return Leaf(p)
    try:
        return Split(
            feature_index=int(obj["f"]),
            threshold=float(obj["t"]),
            left=_node_from_obj(obj["l"]),
            right=_node_from_obj(obj["r"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model: malformed tree node: {exc}") from None


def save_model(forest: Forest, stream: IO[str] | str | Path) -> None:
    if isinstance(stream, (str, Path)):
        with Path(stream).open("w", encoding="utf-8") as fp:
            save_model(forest, fp)
        return
    obj = {
        "v": MODEL_VERSION,
        "params": {
            "max_depth": forest.params.max_depth,
            "min_leaf": forest.params.min_leaf,
            "features_per_split": forest.params.features_per_split,
            "bootstrap": forest.params.bootstrap,
            "class_weight": forest.params.class_weight,
        },
        "feature_names": list(forest.feature_names),
        "seed": forest.seed,
        "n_trees": forest.n_trees,
        "trees": [_node_to_obj(t) for t in forest.trees],
    }
    json.dump(obj, stream, sort_keys=True)
    stream.write("\n")


def load_model(stream: IO[str] | str | Path) -> Forest:
    fp = Path(stream).open("r", encoding="utf-8") if isinstance(stream, (str, Path)) else stream
    close = fp is not stream
    try:
        obj = json.load(fp)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model: invalid JSON: {exc.msg}") from None
    finally:
        if close:
            fp.close()
    if not isinstance(obj, dict) or obj.get("v") != MODEL_VERSION:
        raise FormatError(f"model: unsupported version {obj.get('v')!r}")
    try:
        params = ForestParams(
            max_depth=int(obj["params"]["max_depth"]),
            min_leaf=int(obj["params"]["min_leaf"]),
            features_per_split=obj["params"]["features_per_split"],
            bootstrap=bool(obj["params"]["bootstrap"]),
            class_weight=obj["params"]["class_weight"],
        )
        trees = [_node_from_obj(t) for t in obj["trees"]]
        forest = Forest(
            trees=trees,
            params=params,
            feature_names=tuple(obj["feature_names"]),
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"model: {exc}") from None
    if forest.n_trees != obj["n_trees"]:
        raise FormatError("model: tree count does not match n_trees")
    return forest
