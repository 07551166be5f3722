"""Gradient-boosted depth-2 regression trees on logistic loss.

Small, dependency-free boosting for the 97-d gap features: each round
fits a shallow tree to the negative gradient (residual y - p) by exact
greedy variance-reduction splits, with Newton leaf values. The model
serializes to a plain JSON tree list.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_binary_labels, check_features
from .errors import CheckpointMismatch, ContractViolation, StorageError
from .gaps import FEATURE_DIM, N_BINS

__all__ = ["GradientBoostedGapClassifier", "upsample_balance", "save_boosted", "load_boosted"]

_MAX_LEAF = 4.0
_MIN_LEAF_SAMPLES = 2


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0  # leaf log-odds increment

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_json(self):
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_json(),
            "right": self.right.to_json(),
        }

    @classmethod
    def from_json(cls, doc):
        if "value" in doc and "feature" not in doc:
            return cls(value=float(doc["value"]))
        return cls(
            feature=int(doc["feature"]),
            threshold=float(doc["threshold"]),
            left=cls.from_json(doc["left"]),
            right=cls.from_json(doc["right"]),
        )


def _leaf_value(residual, hessian) -> float:
    h = hessian.sum()
    if h <= 0:
        return 0.0
    return float(np.clip(residual.sum() / h, -_MAX_LEAF, _MAX_LEAF))


def _best_split(X, residual):
    """Exact greedy split minimizing squared error of the residual."""
    n, d = X.shape
    total = residual.sum()
    base = residual @ residual - total * total / n
    best = (None, None, base)
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        rs = residual[order]
        csum = np.cumsum(rs)
        k = np.arange(1, n)
        valid = xs[1:] > xs[:-1]  # split between distinct values only
        if not valid.any():
            continue
        left_sum = csum[:-1]
        cost_shift = (
            -(left_sum**2) / k - (total - left_sum) ** 2 / (n - k)
        )  # + sum r^2 constant
        cost = residual @ residual + cost_shift
        cost = np.where(valid & (k >= _MIN_LEAF_SAMPLES) & (n - k >= _MIN_LEAF_SAMPLES), cost, np.inf)
        i = int(np.argmin(cost))
        if cost[i] < best[2] - 1e-12:
            thr = 0.5 * (xs[i] + xs[i + 1])
            best = (j, thr, float(cost[i]))
    return best[0], best[1]


def _fit_tree(X, residual, hessian, depth: int):
    node = _Node()
    if depth == 0 or len(residual) < 2 * _MIN_LEAF_SAMPLES:
        node.value = _leaf_value(residual, hessian)
        return node
    feature, threshold = _best_split(X, residual)
    if feature is None:
        node.value = _leaf_value(residual, hessian)
        return node
    mask = X[:, feature] <= threshold
    node.feature = feature
    node.threshold = threshold
    node.left = _fit_tree(X[mask], residual[mask], hessian[mask], depth - 1)
    node.right = _fit_tree(X[~mask], residual[~mask], hessian[~mask], depth - 1)
    return node


def _tree_predict(node: _Node, X) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.value
            continue
        mask = X[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


class GradientBoostedGapClassifier(BaseEstimator, ClassifierMixin):
    """Boosted depth-2 trees; predict_proba is the sigmoid of summed
    leaf values plus the base score."""

    def __init__(
        self,
        rounds: int = 200,
        learning_rate: float = 0.1,
        depth: int = 2,
        feature_dim: int = FEATURE_DIM,
    ):
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.depth = depth
        self.feature_dim = feature_dim

    def fit(self, X, y):
        X = check_features(X, self.feature_dim)
        y = check_binary_labels(y, require_both_classes=True).astype(np.float64)
        p_mean = y.mean()
        self.base_score_ = float(np.log(p_mean / (1.0 - p_mean)))
        self.trees_ = []
        self.train_log_loss_ = []
        margin = np.full(len(y), self.base_score_)
        for _ in range(self.rounds):
            p = expit(margin)
            tree = _fit_tree(X, y - p, p * (1.0 - p), self.depth)
            self.trees_.append(tree)
            margin = margin + self.learning_rate * _tree_predict(tree, X)
            p = np.clip(expit(margin), 1e-15, 1.0 - 1e-15)
            self.train_log_loss_.append(float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))))
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        X = check_features(X, self.feature_dim)
        margin = np.full(len(X), getattr(self, "base_score_", 0.0))
        for tree in getattr(self, "trees_", []):
            margin += self.learning_rate * _tree_predict(tree, X)
        return margin

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


def upsample_balance(X, y, rng: np.random.Generator, dirichlet_alpha: float = 100.0):
    """Resample the minority class to parity; each duplicate row gets its
    histogram blocks redrawn from a concentrated Dirichlet around the
    original and its duration jittered by up to 10%."""
    X = check_features(X, FEATURE_DIM)
    y = check_binary_labels(y)
    n0 = int((y == 0).sum())
    n1 = int((y == 1).sum())
    if n0 == 0 or n1 == 0:
        raise ContractViolation("balancing needs both classes")
    if n0 == n1:
        return X.copy(), y.copy()
    minority = 0 if n0 < n1 else 1
    need = abs(n0 - n1)
    pool = np.flatnonzero(y == minority)
    picks = rng.choice(pool, size=need, replace=True)
    extra = np.empty((need, X.shape[1]))
    for out_row, src in enumerate(picks):
        row = X[src].copy()
        for lo in (0, N_BINS, 2 * N_BINS):
            hist = row[lo : lo + N_BINS]
            alpha = dirichlet_alpha * hist + 1e-3
            row[lo : lo + N_BINS] = rng.dirichlet(alpha)
        row[-1] *= rng.uniform(0.9, 1.1)
        extra[out_row] = row
    Xb = np.concatenate([X, extra])
    yb = np.concatenate([y, np.full(need, minority, dtype=y.dtype)])
    return Xb, yb


def save_boosted(path, model: GradientBoostedGapClassifier, meta: dict | None = None) -> None:
    doc = {
        "kind": "gradient-boosted-trees",
        "feature_dim": model.feature_dim,
        "rounds": model.rounds,
        "learning_rate": model.learning_rate,
        "depth": model.depth,
        "base_score": model.base_score_,
        "trees": [t.to_json() for t in model.trees_],
    }
    doc.update(meta or {})
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh)
    except OSError as exc:
        raise StorageError(f"cannot write model {path}: {exc}") from exc


def load_boosted(path) -> GradientBoostedGapClassifier:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointMismatch(f"model file is not valid JSON: {exc}") from exc
    if doc.get("kind") != "gradient-boosted-trees":
        raise CheckpointMismatch(f"unexpected model kind {doc.get('kind')!r}")
    model = GradientBoostedGapClassifier(
        rounds=int(doc["rounds"]),
        learning_rate=float(doc["learning_rate"]),
        depth=int(doc["depth"]),
        feature_dim=int(doc["feature_dim"]),
    )
    model.base_score_ = float(doc["base_score"])
    model.trees_ = [_Node.from_json(t) for t in doc["trees"]]
    model.classes_ = np.array([0, 1])
    return model
