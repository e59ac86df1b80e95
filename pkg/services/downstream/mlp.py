"""
MLP Regressor
Version: 1.0

Fully connected regressor (default two hidden layers of 256 leaky-ReLU
units) trained with Adam on mean-squared error, built on the tensor-core
layers. Inputs are standardized with the training-set statistics.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from schemas import MlpConfig
from services.errors import ContractViolationError, DiagnosticError, NonFiniteLossError
from services.tensor.layers import Dense, Layer, LayerGraph, LeakyReLU
from services.tensor.optim import AdamState, adam_step
from services.tensor.params import ParamStore

logger = logging.getLogger(__name__)


@dataclass
class MlpModel:
    graph: LayerGraph
    params: ParamStore
    feature_mean: np.ndarray
    feature_std: np.ndarray
    epoch_loss: List[float] = field(default_factory=list)

    @property
    def num_features(self) -> int:
        return int(self.feature_mean.shape[0])


def build_mlp(in_features: int, config: MlpConfig) -> LayerGraph:
    layers: List[Layer] = []
    width = in_features
    for i, hidden in enumerate(config.hidden):
        layers.append(Dense(f"mlp.fc{i}", width, hidden))
        layers.append(LeakyReLU(f"mlp.act{i}", config.leaky_slope))
        width = hidden
    layers.append(Dense("mlp.out", width, 1, zero_init=config.zero_init_output))
    return LayerGraph("mlp", layers, (in_features,))


def _standardize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (features - mean) / std


def mlp_fit(
    features: np.ndarray,
    targets: np.ndarray,
    config: Optional[MlpConfig] = None,
    seed: Union[int, np.random.SeedSequence] = 0,
) -> MlpModel:
    """
    Train an MLP regressor.

    Args:
        features: (n, d) inputs
        targets: (n,) real targets
        config: Widths, epochs, batch size, learning rate
        seed: Drives initialization and epoch shuffling

    Returns:
        MlpModel with the mean training loss of every epoch

    Raises:
        ContractViolationError: Fewer rows than the batch size
        NonFiniteLossError: If the loss becomes non-finite (step = epoch)
    """
    config = config or MlpConfig()
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if features.ndim != 2 or features.shape[0] != targets.shape[0]:
        raise ContractViolationError(
            f"features {features.shape} and targets {targets.shape} do not describe the same rows"
        )
    n, d = features.shape
    if n < config.batch_size:
        raise ContractViolationError(f"mlp_fit needs at least batch_size={config.batch_size} rows, got {n}")

    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    init_seq, shuffle_seq = seq.spawn(2)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x = _standardize(features, mean, std)

    graph = build_mlp(d, config)
    params = ParamStore(dtype=np.float64)
    graph.init_params(params, np.random.default_rng(init_seq))
    adam = AdamState.for_params(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(shuffle_seq)
    model = MlpModel(graph=graph, params=params, feature_mean=mean, feature_std=std)

    batches = n // config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            params.zero_grad()
            try:
                pred = graph.forward(x[idx], params)
            except DiagnosticError as e:
                raise NonFiniteLossError(epoch, str(e)) from e
            residual = pred - targets[idx]
            loss = float(np.mean(residual ** 2))
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, f"mlp loss={loss}")
            total += loss
            graph.backward(2.0 * residual / len(idx), params)
            adam_step(params, adam)
        model.epoch_loss.append(total / batches)

    logger.debug(f"MLP fit on {n}x{d}: loss {model.epoch_loss[0]:.4g} -> {model.epoch_loss[-1]:.4g}")
    return model


def mlp_predict(model: MlpModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.num_features:
        raise ContractViolationError(f"model expects {model.num_features} features, got {features.shape}")
    x = _standardize(features, model.feature_mean, model.feature_std)
    return model.graph.forward(x, model.params)[:, 0]
