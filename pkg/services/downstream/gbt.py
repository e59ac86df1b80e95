"""
Gradient Boosted Regression Trees
Version: 1.0

Stagewise least-squares boosting of depth-limited regression trees.
Splits are exact greedy: every feature is presorted once, and each node
scans all distinct thresholds for the largest reduction in squared error.
The same reductions, summed per feature, are the importance scores used
by DCI.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from schemas import GbtConfig
from services.errors import ContractViolationError

logger = logging.getLogger(__name__)

# Gains at or below this are rounding noise, not splits.
MIN_GAIN = 1e-12


@dataclass
class RegressionTree:
    """Flat array encoding; leaves have feature == -1."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def num_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, features: np.ndarray) -> np.ndarray:
        node = np.zeros(features.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            rows = np.nonzero(internal)[0]
            go_left = features[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])


@dataclass
class GbtModel:
    base_score: float
    shrinkage: float
    num_features: int
    trees: List[RegressionTree] = field(default_factory=list)
    importance: np.ndarray = None
    train_loss: List[float] = field(default_factory=list)


# ============================================================================
# TREE GROWTH
# ============================================================================

class _TreeBuilder:
    """Grows one tree on residuals using the presorted feature order."""

    def __init__(self, features: np.ndarray, order: np.ndarray, config: GbtConfig):
        self.features = features
        self.order = order
        self.config = config
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _best_split(self, mask: np.ndarray, residual: np.ndarray):
        m = int(mask.sum())
        min_leaf = self.config.min_samples_leaf
        if m < 2 * min_leaf:
            return None
        d = self.features.shape[1]
        # every column of order holds the node's m rows in that feature's sorted order
        in_node = mask[self.order]
        idx = self.order.T[in_node.T].reshape(d, m)
        xs = np.take_along_axis(self.features.T, idx, axis=1)
        ys = residual[idx]
        csum = np.cumsum(ys, axis=1)
        total = csum[:, -1:]
        n_left = np.arange(1, m + 1, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = csum ** 2 / n_left + (total - csum) ** 2 / (m - n_left) - total ** 2 / m
        valid = np.zeros((d, m), dtype=bool)
        valid[:, min_leaf - 1:m - min_leaf] = True
        valid[:, :-1] &= xs[:, :-1] < xs[:, 1:]
        valid[:, -1] = False
        gain = np.where(valid, gain, -np.inf)
        flat = int(np.argmax(gain))
        j, i = divmod(flat, m)
        best = gain[j, i]
        if not np.isfinite(best) or best <= MIN_GAIN:
            return None
        threshold = 0.5 * (xs[j, i] + xs[j, i + 1])
        return j, float(threshold), float(best)

    def grow(self, mask: np.ndarray, residual: np.ndarray, depth: int, importance: np.ndarray) -> int:
        node = self._new_node(float(residual[mask].mean()))
        if depth >= self.config.max_depth:
            return node
        split = self._best_split(mask, residual)
        if split is None:
            return node
        j, threshold, gain = split
        importance[j] += gain
        goes_left = self.features[:, j] <= threshold
        left = self.grow(mask & goes_left, residual, depth + 1, importance)
        right = self.grow(mask & ~goes_left, residual, depth + 1, importance)
        self.feature[node] = j
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        return node

    def build(self) -> RegressionTree:
        return RegressionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
        )


# ============================================================================
# PUBLIC API
# ============================================================================

def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ContractViolationError(f"features must be (n, d), got shape {features.shape}")
    return features


def gbt_fit(
    features: np.ndarray,
    targets: np.ndarray,
    config: Optional[GbtConfig] = None,
    seed: Union[int, np.random.SeedSequence] = 0,
) -> GbtModel:
    """
    Fit a boosted ensemble to (features, targets).

    Args:
        features: (n, d) inputs
        targets: (n,) real targets
        config: Tree count, depth, shrinkage, leaf size and row subsampling
        seed: Drives row subsampling; fits without subsampling ignore it

    Returns:
        GbtModel with per-feature importance and per-stage training MSE

    Raises:
        ContractViolationError: Empty input, mismatched lengths or fewer
            than 2 * min_samples_leaf rows
    """
    config = config or GbtConfig()
    features = _check_features(features)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    n, d = features.shape
    if n == 0 or d == 0:
        raise ContractViolationError(f"gbt_fit needs a non-empty feature matrix, got {features.shape}")
    if targets.shape[0] != n:
        raise ContractViolationError(f"{n} feature rows but {targets.shape[0]} targets")
    if n < 2 * config.min_samples_leaf:
        raise ContractViolationError(
            f"gbt_fit needs at least {2 * config.min_samples_leaf} rows "
            f"(min_samples_leaf={config.min_samples_leaf}), got {n}"
        )

    rng = np.random.default_rng(seed)
    order = np.argsort(features, axis=0, kind="stable")
    base = float(targets.mean())
    prediction = np.full(n, base)
    model = GbtModel(base_score=base, shrinkage=config.shrinkage, num_features=d, importance=np.zeros(d))
    model.train_loss.append(float(np.mean((targets - prediction) ** 2)))

    for _ in range(config.n_trees):
        residual = targets - prediction
        if config.subsample < 1.0:
            size = max(2 * config.min_samples_leaf, int(round(config.subsample * n)))
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=min(size, n), replace=False)] = True
        else:
            mask = np.ones(n, dtype=bool)
        builder = _TreeBuilder(features, order, config)
        builder.grow(mask, residual, 0, model.importance)
        tree = builder.build()
        model.trees.append(tree)
        prediction += config.shrinkage * tree.predict(features)
        model.train_loss.append(float(np.mean((targets - prediction) ** 2)))

    logger.debug(
        f"GBT fit on {n}x{d}: {len(model.trees)} trees, "
        f"train MSE {model.train_loss[0]:.4g} -> {model.train_loss[-1]:.4g}"
    )
    return model


def gbt_predict(model: GbtModel, features: np.ndarray) -> np.ndarray:
    features = _check_features(features)
    if features.shape[1] != model.num_features:
        raise ContractViolationError(
            f"model expects {model.num_features} features, got {features.shape[1]}"
        )
    prediction = np.full(features.shape[0], model.base_score)
    for tree in model.trees:
        prediction += model.shrinkage * tree.predict(features)
    return prediction


def gbt_importance(model: GbtModel) -> np.ndarray:
    """Per-feature summed squared-error reduction over all splits (non-negative)."""
    return model.importance.copy()
