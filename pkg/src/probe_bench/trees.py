"""From-scratch tree ensembles: Gini random forest and boosted trees.

Both probes share one axis-aligned decision tree primitive grown greedily
to a depth limit.  Split thresholds sit at midpoints between consecutive
distinct sorted feature values; gain ties break toward the lower feature
index, then the lower threshold, so growth is fully deterministic.

Random forest: each tree trains on a bootstrap resample (stored as
per-row multiplicities), considers a fresh random feature subset at every
node (default floor(sqrt(d))), splits by weighted Gini impurity decrease
when strictly positive, and stores class frequencies at the leaves.
Prediction averages leaf frequency vectors over trees.

Boosted trees: multiclass softmax boosting fitted by second-order
gradient statistics.  Per round and class k, a regression tree is grown
on g_i = p_ik - y_ik and h_i = 2 p_ik (1 - p_ik) with split gain
G_L^2/(H_L + lambda) + G_R^2/(H_R + lambda) - G^2/(H + lambda) and leaf
value -G/(H + lambda); the hessian carries the conventional factor 2.
Logits start at the log class priors and accumulate learning_rate times
each tree's leaf value.  Growth uses every feature and no resampling, so
the only randomness in this module is the forest's.

Randomness is counter-based: tree t of a forest draws from a generator
seeded with a hash of (config seed, "tree", t), and feature subsets are
consumed in preorder (node, left subtree, right subtree), so parallel
tree growth reproduces sequential results.

The split search is vectorized over candidate features.  A training
matrix is argsorted per feature once (TreeDesign) and each node extracts
its members in per-feature sorted order by compressing the presorted
index table, so repeated refits under relabelings (permutation tests)
never re-sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .linear import _validate_training_inputs, one_hot, softmax
from .rng import generator, subseed


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 4
    features_per_split: int | None = None  # None resolves to floor(sqrt(d))
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ConfigError(
                f"features_per_split must be >= 1, got {self.features_per_split}"
            )


@dataclass(frozen=True)
class GbtConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    lambda_leaf: float = 1.0
    seed: int = 0  # reserved; boosting here is deterministic

    def validate(self) -> None:
        if self.n_rounds < 1:
            raise ConfigError(f"n_rounds must be >= 1, got {self.n_rounds}")
        if not (self.learning_rate >= 0.0):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if not (self.lambda_leaf >= 0.0):
            raise ConfigError(f"lambda_leaf must be >= 0, got {self.lambda_leaf}")


@dataclass(frozen=True)
class DecisionTree:
    """Flat-array binary tree; feature[j] == -1 marks node j as a leaf."""

    feature: np.ndarray  # (n_nodes,) int32
    threshold: np.ndarray  # (n_nodes,) float64
    left: np.ndarray  # (n_nodes,) int32
    right: np.ndarray  # (n_nodes,) int32
    value: np.ndarray  # (n_nodes, width) float64; valid at leaves

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def leaf_for(self, x: np.ndarray) -> int:
        j = 0
        while self.feature[j] >= 0:
            j = self.left[j] if x[self.feature[j]] <= self.threshold[j] else self.right[j]
        return j

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[0], self.value.shape[1]))
        for i in range(X.shape[0]):
            out[i] = self.value[self.leaf_for(X[i])]
        return out

    def to_json_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }


class _TreeBuilder:
    def __init__(self, width: int):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[list[float]] = []
        self.width = width

    def add_leaf(self, value: np.ndarray) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append([float(v) for v in np.atleast_1d(value)])
        return idx

    def add_internal(self, feature: int, threshold: float) -> int:
        idx = len(self.feature)
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append([0.0] * self.width)
        return idx

    def freeze(self) -> DecisionTree:
        return DecisionTree(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
        )


@dataclass(frozen=True)
class TreeDesign:
    """Per-feature presorted view of a training matrix, reusable across fits."""

    X: np.ndarray  # (n, d)
    sort_idx: np.ndarray  # (d, n) row ids in ascending feature order
    sorted_vals: np.ndarray  # (d, n) the corresponding feature values

    @classmethod
    def build(cls, X: np.ndarray) -> "TreeDesign":
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        idx = np.argsort(X, axis=0, kind="stable").T
        vals = np.take_along_axis(np.ascontiguousarray(X.T), idx, axis=1)
        return cls(X=X, sort_idx=np.ascontiguousarray(idx), sorted_vals=vals)

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])


def _node_in_order(design: TreeDesign, member: np.ndarray, feats: np.ndarray, m: int):
    """Node rows and values in per-feature ascending order, (c, m) each."""
    idx = design.sort_idx[feats]
    keep = member[idx]
    rows = idx[keep].reshape(len(feats), m)
    vals = design.sorted_vals[feats][keep].reshape(len(feats), m)
    return rows, vals


def _midpoint(a: float, b: float) -> float:
    # a < b; keep the training-time positional split consistent with the
    # x <= threshold routing rule even when the midpoint rounds up to b
    t = 0.5 * (a + b)
    return a if t >= b else t


def _best_gini_split(design, y, weights, member, feats, n_classes, m):
    rows, vals = _node_in_order(design, member, feats, m)
    c = rows.shape[0]
    w = weights[rows]
    cum = np.zeros((c, m, n_classes))
    np.put_along_axis(cum, y[rows][..., None], w[..., None], axis=2)
    np.cumsum(cum, axis=1, out=cum)
    total = cum[:, -1, :]
    left = cum[:, :-1, :]
    right = total[:, None, :] - left
    n_left = left.sum(axis=2)
    n_right = right.sum(axis=2)
    child_score = (left * left).sum(axis=2) / n_left + (right * right).sum(axis=2) / n_right
    parent_score = (total * total).sum(axis=1) / total.sum(axis=1)
    gain = child_score - parent_score[:, None]
    gain[vals[:, 1:] <= vals[:, :-1]] = -np.inf
    pos = np.argmax(gain, axis=1)
    per_feat = gain[np.arange(c), pos]
    f = int(np.argmax(per_feat))
    if not (per_feat[f] > 0.0):
        return None
    i = int(pos[f])
    return int(feats[f]), _midpoint(vals[f, i], vals[f, i + 1]), rows[f, : i + 1], rows[f, i + 1 :]


def _best_gbt_split(g, h, lam, rows, vals):
    """Best split over all features given node-member (c, m) order tables.

    g/h are per-row gradient and hessian; rows/vals hold the node's member
    row ids and feature values in per-feature ascending order.

    Works in (position, feature) orientation: prefix sums and the gain
    arithmetic then run along the contiguous feature axis, which is far
    cheaper than per-feature scans when m is small and c is large.
    """
    c, m = rows.shape
    cum_g = g[rows.T]
    cum_h = h[rows.T]
    np.add.accumulate(cum_g, axis=0, out=cum_g)
    np.add.accumulate(cum_h, axis=0, out=cum_h)
    cum_h += lam
    g_tot = cum_g[-1].copy()
    total = g_tot * g_tot / cum_h[-1]
    s = cum_h[-1] + lam  # so h_right + lam == s - (h_left + lam)
    g_left, h_left = cum_g[:-1], cum_h[:-1]

    gain = np.multiply(g_left, g_left, out=np.empty_like(g_left))
    gain /= h_left
    np.subtract(g_tot, g_left, out=g_left)
    g_left *= g_left
    np.subtract(s, h_left, out=h_left)
    g_left /= h_left
    gain += g_left
    gain -= total

    vals_t = vals.T
    gain[vals_t[1:] <= vals_t[:-1]] = -np.inf
    per_feat = gain.max(axis=0)
    f = int(np.argmax(per_feat))
    if not (per_feat[f] > 0.0):
        return None
    i = int(np.argmax(gain[:, f]))
    return f, _midpoint(vals[f, i], vals[f, i + 1]), i


def _grow_gini(design, y, weights, member, m, depth_left, n_classes, gen, n_feat, builder):
    d = design.n_features
    rows = np.nonzero(member)[0]

    def leaf() -> int:
        counts = np.bincount(y[rows], weights=weights[rows], minlength=n_classes)
        return builder.add_leaf(counts / counts.sum())

    if depth_left == 0 or m < 2:
        return leaf()
    if n_feat < d:
        feats = np.sort(gen.choice(d, size=n_feat, replace=False))
    else:
        feats = np.arange(d)
    split = _best_gini_split(design, y, weights, member, feats, n_classes, m)
    if split is None:
        return leaf()
    feat, thr, left_rows, right_rows = split
    node = builder.add_internal(feat, thr)
    for side, side_rows in (("left", left_rows), ("right", right_rows)):
        child_member = np.zeros_like(member)
        child_member[side_rows] = True
        child = _grow_gini(
            design, y, weights, child_member, len(side_rows),
            depth_left - 1, n_classes, gen, n_feat, builder,
        )
        if side == "left":
            builder.left[node] = child
        else:
            builder.right[node] = child
    return node


def _grow_gbt(g, h, lam, n_rows, rows, vals, depth_left, builder, row_value):
    # rows[0] lists the node's members (in feature-0 order, set-equal for
    # every feature row); children reuse the parent's order tables by
    # positional compression, so the full presorted design is only touched
    # at the root.
    def leaf() -> int:
        members = rows[0]
        val = -g[members].sum() / (h[members].sum() + lam)
        row_value[members] = val
        return builder.add_leaf(np.array([val]))

    if depth_left == 0 or rows.shape[1] < 2:
        return leaf()
    split = _best_gbt_split(g, h, lam, rows, vals)
    if split is None:
        return leaf()
    f, thr, i = split
    node = builder.add_internal(f, thr)
    c = rows.shape[0]
    rows_flat, vals_flat = rows.ravel(), vals.ravel()
    in_left = np.zeros(n_rows, dtype=bool)
    in_left[rows[f, : i + 1]] = True
    keep = in_left[rows_flat]
    for side in ("left", "right"):
        if side == "right":
            np.logical_not(keep, out=keep)
        flat = np.nonzero(keep)[0]
        width = len(flat) // c
        child_rows = rows_flat[flat].reshape(c, width)
        child_vals = vals_flat[flat].reshape(c, width)
        child = _grow_gbt(
            g, h, lam, n_rows, child_rows, child_vals, depth_left - 1, builder, row_value,
        )
        if side == "left":
            builder.left[node] = child
        else:
            builder.right[node] = child
    return node


def gini_tree(X, y, max_depth: int, n_classes: int | None = None) -> DecisionTree:
    """Single unweighted Gini tree over all features (no bootstrap).

    Exposed for oracle comparison against exhaustive split search.
    """
    X, y, k = _validate_training_inputs(X, y, n_classes)
    design = TreeDesign.build(X)
    builder = _TreeBuilder(width=k)
    member = np.ones(design.n_rows, dtype=bool)
    weights = np.ones(design.n_rows, dtype=np.float64)
    _grow_gini(design, y, weights, member, design.n_rows, max_depth, k,
               None, design.n_features, builder)
    return builder.freeze()


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[DecisionTree, ...]
    n_features: int
    n_classes: int
    config: ForestConfig

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_json_dict(self) -> dict:
        return {
            "family": "random_forest",
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "n_trees": self.n_trees,
            "max_depth": self.config.max_depth,
            "seed": self.config.seed,
            "trees": [t.to_json_dict() for t in self.trees],
        }


@dataclass(frozen=True)
class GbtModel:
    stage_trees: tuple[tuple[DecisionTree, ...], ...]  # (n_rounds, K)
    base_score: np.ndarray  # (K,) log class priors
    n_features: int
    n_classes: int
    config: GbtConfig

    @property
    def n_rounds(self) -> int:
        return len(self.stage_trees)

    def to_json_dict(self) -> dict:
        return {
            "family": "gbt",
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "n_rounds": self.n_rounds,
            "learning_rate": self.config.learning_rate,
            "max_depth": self.config.max_depth,
            "lambda_leaf": self.config.lambda_leaf,
            "base_score": self.base_score.tolist(),
            "stage_trees": [[t.to_json_dict() for t in stage] for stage in self.stage_trees],
        }


def train_random_forest(
    X, y, config: ForestConfig | None = None,
    n_classes: int | None = None, design: TreeDesign | None = None,
) -> ForestModel:
    config = config or ForestConfig()
    config.validate()
    X, y, k = _validate_training_inputs(X, y, n_classes)
    if design is None:
        design = TreeDesign.build(X)
    n, d = design.n_rows, design.n_features
    n_feat = config.features_per_split
    if n_feat is None:
        n_feat = max(1, int(math.floor(math.sqrt(d))))
    if n_feat > d:
        raise ConfigError(f"features_per_split {n_feat} exceeds {d} features")

    trees = []
    for t in range(config.n_trees):
        gen = generator(subseed(config.seed, "tree", t))
        weights = np.bincount(gen.integers(0, n, size=n), minlength=n).astype(np.float64)
        member = weights > 0
        builder = _TreeBuilder(width=k)
        _grow_gini(design, y, weights, member, int(member.sum()),
                   config.max_depth, k, gen, n_feat, builder)
        trees.append(builder.freeze())
    return ForestModel(trees=tuple(trees), n_features=d, n_classes=k, config=config)


def train_gbt(
    X, y, config: GbtConfig | None = None,
    n_classes: int | None = None, design: TreeDesign | None = None,
) -> GbtModel:
    config = config or GbtConfig()
    config.validate()
    X, y, k = _validate_training_inputs(X, y, n_classes)
    if design is None:
        design = TreeDesign.build(X)
    n, d = design.n_rows, design.n_features
    base = np.log(np.bincount(y, minlength=k) / n)
    logits = np.tile(base, (n, 1))
    Y = one_hot(y, k)
    lam = config.lambda_leaf

    stages = []
    for _ in range(config.n_rounds):
        probs = softmax(logits)
        grads = probs - Y
        hess = 2.0 * probs * (1.0 - probs)
        stage = []
        for cls in range(k):
            g = np.ascontiguousarray(grads[:, cls])
            h = np.ascontiguousarray(hess[:, cls])
            builder = _TreeBuilder(width=1)
            row_value = np.empty(n)
            _grow_gbt(g, h, lam, n, design.sort_idx, design.sorted_vals,
                      config.max_depth, builder, row_value)
            logits[:, cls] += config.learning_rate * row_value
            stage.append(builder.freeze())
        stages.append(tuple(stage))
    return GbtModel(
        stage_trees=tuple(stages), base_score=base,
        n_features=d, n_classes=k, config=config,
    )


def _check_dim(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d:
        raise DataError(f"expected a length-{d} vector, got shape {x.shape}")
    return x


def forest_scores(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities: mean of leaf frequency vectors over trees."""
    x = _check_dim(x, model.n_features)
    acc = np.zeros(model.n_classes)
    for tree in model.trees:
        acc += tree.value[tree.leaf_for(x)]
    return acc / model.n_trees


def gbt_scores(model: GbtModel, x: np.ndarray) -> np.ndarray:
    """Class logits: base score plus scaled leaf contributions."""
    x = _check_dim(x, model.n_features)
    z = model.base_score.copy()
    for stage in model.stage_trees:
        for cls, tree in enumerate(stage):
            z[cls] += model.config.learning_rate * tree.value[tree.leaf_for(x), 0]
    return z


def gbt_train_losses(model: GbtModel, X, y) -> np.ndarray:
    """Mean cross-entropy on (X, y) after each boosting round (for checks)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    logits = np.tile(model.base_score, (n, 1))
    losses = []
    for stage in model.stage_trees:
        for cls, tree in enumerate(stage):
            logits[:, cls] += model.config.learning_rate * tree.predict_rows(X)[:, 0]
        probs = softmax(logits)
        losses.append(float(-np.log(probs[np.arange(n), y]).mean()))
    return np.array(losses)
