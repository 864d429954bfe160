"""Random-forest regression baseline: CART trees on bootstrap resamples.

Windows are flattened to W*C feature vectors (the forest has no notion of
time). Splits minimize child sum-of-squared-error with midpoint thresholds;
ties resolve to the lowest feature index. Per-tree predictions stay
accessible so the ensemble spread can serve as an uncertainty estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..preprocess import WindowedDataset


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 100
    max_depth: int | None = 20
    min_samples_leaf: int = 1
    bootstrap: bool = True
    bootstrap_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 (or None for unlimited)")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")


@dataclass
class Tree:
    """Flat-array CART tree; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    leaf_depth_weight: float  # training-weighted expected leaf depth
    importance: np.ndarray  # un-normalized SSE decrease per feature

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if active.size == 0:
                break
            rows = node[active]
            go_left = x[active, self.feature[rows]] <= self.threshold[rows]
            node[active] = np.where(go_left, self.left[rows], self.right[rows])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "leaf_depth_weight": self.leaf_depth_weight,
            "importance": self.importance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            leaf_depth_weight=float(d["leaf_depth_weight"]),
            importance=np.asarray(d["importance"], dtype=np.float64),
        )


def _node_sse(y: np.ndarray) -> float:
    return float(((y - y.mean()) ** 2).sum())


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest-SSE split over all features at once.

    Returns (feature, threshold, sse_decrease) or None when no valid split
    exists. Equal scores resolve to the lowest feature index, then to the
    lowest threshold within that feature.
    """
    n, n_feat = x.shape
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    ys = y[order]

    s1 = np.cumsum(ys, axis=0)
    s2 = np.cumsum(ys * ys, axis=0)
    tot1, tot2 = s1[-1], s2[-1]

    counts = np.arange(1, n, dtype=np.float64)[:, None]
    left_sse = s2[:-1] - s1[:-1] ** 2 / counts
    right_n = n - counts
    right_sse = (tot2 - s2[:-1]) - (tot1 - s1[:-1]) ** 2 / right_n
    child = left_sse + right_sse

    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        pos = np.arange(1, n)[:, None]
        valid &= (pos >= min_leaf) & (n - pos >= min_leaf)
    if not valid.any():
        return None
    child = np.where(valid, child, np.inf)

    # scan feature-major so argmin's first-hit rule implements the tie-break
    flat = np.argmin(child.T)
    f, i = divmod(flat, n - 1)
    lo, hi = xs[i, f], xs[i + 1, f]
    thr = (lo + hi) / 2.0
    if thr >= hi:  # midpoint rounded up: fall back so the right child stays nonempty
        thr = lo
    decrease = _node_sse(y) - float(child[i, f])
    return int(f), float(thr), decrease


def _grow_tree(x: np.ndarray, y: np.ndarray, cfg: RfConfig) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    importance = np.zeros(x.shape[1])
    leaf_weight = 0.0
    n_total = len(y)

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        value[node] = float(ys.mean())
        depth_capped = cfg.max_depth is not None and depth >= cfg.max_depth
        split = None
        if not depth_capped and len(idx) >= 2 and not np.all(ys == ys[0]):
            split = _best_split(x[idx], ys, cfg.min_samples_leaf)
        if split is None:
            leaf_weight += depth * len(idx) / n_total
            continue
        f, thr, decrease = split
        importance[f] += decrease
        mask = x[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        lid, rid = new_node(), new_node()
        left[node], right[node] = lid, rid
        stack.append((rid, idx[~mask], depth + 1))
        stack.append((lid, idx[mask], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        leaf_depth_weight=leaf_weight,
        importance=importance,
    )


@dataclass
class Forest:
    kind = "rf"
    config: RfConfig
    trees: list[Tree] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_samples_leaf": self.config.min_samples_leaf,
                "bootstrap": self.config.bootstrap,
                "bootstrap_fraction": self.config.bootstrap_fraction,
                "seed": self.config.seed,
            },
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(
            config=RfConfig(**d["config"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            feature_names=tuple(d["feature_names"]),
        )


def flatten_windows(ds: WindowedDataset) -> np.ndarray:
    """(N, W, C) -> (N, W*C), row-major: step-by-step feature blocks."""
    return ds.X.reshape(ds.n_windows, -1)


def rf_fit(ds: WindowedDataset, cfg: RfConfig) -> Forest:
    x = flatten_windows(ds)
    if len(x) < 2:
        raise ValueError(f"need at least 2 samples to fit a forest, got {len(x)}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    n = len(x)
    n_draw = int(round(cfg.bootstrap_fraction * n))
    for seq in seeds:
        if cfg.bootstrap:
            rng = np.random.default_rng(seq)
            idx = rng.integers(0, n, size=n_draw)
        else:
            idx = np.arange(n)
        trees.append(_grow_tree(x[idx], ds.y[idx], cfg))
    return Forest(config=cfg, trees=trees, feature_names=ds.feature_names)


def rf_per_tree(forest: Forest, ds: WindowedDataset) -> np.ndarray:
    """(n_trees, N) matrix of individual tree predictions."""
    x = flatten_windows(ds)
    return np.stack([t.predict(x) for t in forest.trees])


def rf_predict(forest: Forest, ds: WindowedDataset) -> np.ndarray:
    """Arithmetic mean over trees, exactly the row-mean of rf_per_tree."""
    return rf_per_tree(forest, ds).mean(axis=0)


def rf_feature_importance(forest: Forest) -> np.ndarray:
    """Impurity-decrease totals over all trees, normalized to sum 1.

    A forest that never split (constant targets) has no importance signal
    and returns all zeros.
    """
    total = np.sum([t.importance for t in forest.trees], axis=0)
    s = total.sum()
    if s == 0.0:
        return np.zeros_like(total)
    return total / s


def rf_node_count(forest: Forest) -> int:
    return sum(len(t.feature) for t in forest.trees)


def rf_expected_comparisons(forest: Forest) -> int:
    """Expected comparisons for one input: training-weighted leaf depth, summed over trees."""
    return int(round(sum(t.leaf_depth_weight for t in forest.trees)))


def rf_std_per_point(forest: Forest, ds: WindowedDataset) -> np.ndarray:
    per_tree = rf_per_tree(forest, ds)
    if len(forest.trees) == 1:
        warnings.warn("single-tree forest has zero bootstrap spread", stacklevel=2)
        return np.zeros(ds.n_windows)
    # exact zero when every tree agrees; np.std of identical values can
    # return ~1e-17 because the pairwise mean is not exact
    std = per_tree.std(axis=0)
    return np.where(np.ptp(per_tree, axis=0) == 0.0, 0.0, std)
