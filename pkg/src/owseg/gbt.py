"""Gradient-boosted regression trees for segment quality estimation.

Stagewise least-squares boosting: each stage fits a depth-limited CART
tree to the current residuals using exact greedy splits (variance
reduction, thresholds at midpoints between sorted distinct values) and is
added with shrinkage.  Predictions are clipped into [0, 1].  Everything
is deterministic: split-gain ties break to the lowest feature index, then
the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError, SchemaError
from .dispersion import MetricTable


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")


@dataclass
class TreeNode:
    # feature < 0 marks a leaf; children index into the tree's node list
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0


@dataclass
class GbtModel:
    feature_names: list[str]
    params: GbtParams
    initial_prediction: float
    trees: list[list[TreeNode]] = field(default_factory=list)
    stage_mse: list[float] = field(default_factory=list)  # training MSE after each stage


def _best_split(X, y, idx, min_leaf):
    """Maximize left_sum^2/n_l + right_sum^2/n_r; None when no split helps."""
    n = idx.size
    yn = y[idx]
    total = yn.sum()
    base = total * total / n
    best_gain = 0.0
    best = None
    for j in range(X.shape[1]):
        xj = X[idx, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        csum = np.cumsum(yn[order])
        # split after position i: left has i+1 samples
        left_n = np.arange(1, n)
        distinct = xs[:-1] < xs[1:]
        ok = distinct & (left_n >= min_leaf) & ((n - left_n) >= min_leaf)
        if not ok.any():
            continue
        left_sum = csum[:-1]
        right_sum = total - left_sum
        score = np.where(
            ok,
            left_sum * left_sum / left_n + right_sum * right_sum / (n - left_n),
            -np.inf,
        )
        pos = int(np.argmax(score))  # first max = lowest threshold
        gain = score[pos] - base
        # strict >: gain ties keep the lowest feature index
        if gain > best_gain:
            best_gain = gain
            thr = 0.5 * (xs[pos] + xs[pos + 1])
            mask = np.zeros(n, dtype=bool)
            mask[order[: pos + 1]] = True
            best = (j, float(thr), idx[mask], idx[~mask])
    return best


def _build_tree(X, y, idx, params: GbtParams) -> list[TreeNode]:
    nodes: list[TreeNode] = []

    def grow(sub, depth):
        node_id = len(nodes)
        nodes.append(TreeNode(value=float(y[sub].mean())))
        if depth >= params.max_depth or sub.size < params.min_samples_split:
            return node_id
        split = _best_split(X, y, sub, params.min_samples_leaf)
        if split is None:
            return node_id
        j, thr, left_idx, right_idx = split
        nodes[node_id].feature = j
        nodes[node_id].threshold = thr
        nodes[node_id].left = grow(left_idx, depth + 1)
        nodes[node_id].right = grow(right_idx, depth + 1)
        return node_id

    grow(idx, 0)
    return nodes


def _tree_predict(nodes: list[TreeNode], X) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    stack = [(0, np.arange(X.shape[0]))]
    while stack:
        k, sub = stack.pop()
        nd = nodes[k]
        if nd.feature < 0:
            out[sub] = nd.value
        else:
            go_left = X[sub, nd.feature] <= nd.threshold
            stack.append((nd.left, sub[go_left]))
            stack.append((nd.right, sub[~go_left]))
    return out


def fit_gbt(table: MetricTable, params: GbtParams = GbtParams()) -> GbtModel:
    """Fit the boosted ensemble on metric rows with IoU targets."""
    if table.iou_targets is None:
        raise DataError("metric table has no IoU targets")
    X = np.asarray(table.rows, dtype=np.float64)
    y = np.asarray(table.iou_targets, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError(f"need >= 2 rows to fit, got {X.shape[0]}")

    model = GbtModel(
        feature_names=list(table.feature_names),
        params=params,
        initial_prediction=float(y.mean()),
    )
    pred = np.full(y.shape, model.initial_prediction)
    idx = np.arange(X.shape[0])
    for _ in range(params.n_estimators):
        residual = y - pred
        nodes = _build_tree(X, residual, idx, params)
        pred = pred + params.learning_rate * _tree_predict(nodes, X)
        model.trees.append(nodes)
        model.stage_mse.append(float(((y - pred) ** 2).mean()))
    return model


def predict_raw(model: GbtModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    pred = np.full(X.shape[0], model.initial_prediction)
    for nodes in model.trees:
        pred += model.params.learning_rate * _tree_predict(nodes, X)
    return pred


def predict_quality(model: GbtModel, table: MetricTable) -> np.ndarray:
    """Quality scores in [0, 1] for every row of ``table``."""
    if table.feature_names != model.feature_names:
        raise SchemaError("feature names differ from the fitted model")
    return np.clip(predict_raw(model, table.rows), 0.0, 1.0)


FORMAT_HEADER = "owseg-gbt v1"


def save_model(model: GbtModel, path) -> None:
    """Versioned text dump, one line per node (diffable, round-trip exact)."""
    lines = [FORMAT_HEADER]
    lines.append("features\t" + "\t".join(model.feature_names))
    lines.append(f"init\t{model.initial_prediction!r}")
    lines.append(f"learning_rate\t{model.params.learning_rate!r}")
    lines.append(f"n_trees\t{len(model.trees)}")
    for ti, nodes in enumerate(model.trees):
        for ni, nd in enumerate(nodes):
            lines.append(
                f"node\t{ti}\t{ni}\t{nd.feature}\t{nd.threshold!r}\t{nd.value!r}\t{nd.left}\t{nd.right}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> GbtModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise FormatError("not an owseg-gbt v1 file")
    fields = dict()
    trees: dict[int, dict[int, TreeNode]] = {}
    for line in lines[1:]:
        parts = line.split("\t")
        if parts[0] == "node":
            ti, ni = int(parts[1]), int(parts[2])
            trees.setdefault(ti, {})[ni] = TreeNode(
                feature=int(parts[3]),
                threshold=float(parts[4]),
                value=float(parts[5]),
                left=int(parts[6]),
                right=int(parts[7]),
            )
        else:
            fields[parts[0]] = parts[1:]
    try:
        model = GbtModel(
            feature_names=list(fields["features"]),
            params=GbtParams(learning_rate=float(fields["learning_rate"][0])),
            initial_prediction=float(fields["init"][0]),
        )
        n_trees = int(fields["n_trees"][0])
    except KeyError as e:
        raise FormatError(f"missing field {e}") from None
    for ti in range(n_trees):
        nodes = trees.get(ti, {})
        model.trees.append([nodes[ni] for ni in range(len(nodes))])
    return model
