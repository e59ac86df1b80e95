"""
Gradient Check
Version: 1.0

Central finite-difference verification of analytic backward passes.

A check target exposes `params` (a ParamStore) and
`evaluate(compute_grad) -> float`, which runs forward (and, when asked,
backward into params' gradient buffers) and returns the scalar loss.
GraphObjective adapts a LayerGraph plus a loss function to that protocol.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np

from services.errors import ContractViolationError, DiagnosticError
from services.tensor.layers import LayerGraph
from services.tensor.params import ParamStore

logger = logging.getLogger(__name__)

# loss(outputs) -> (scalar loss, d loss / d outputs)
LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class GradientTarget(Protocol):
    params: ParamStore

    def evaluate(self, compute_grad: bool) -> float:
        ...


class GraphObjective:
    """LayerGraph + fixed inputs + loss, as a gradient-check target."""

    def __init__(self, graph: LayerGraph, params: ParamStore, inputs: np.ndarray, loss: LossFn):
        self.graph = graph
        self.params = params
        self.inputs = inputs
        self.loss = loss

    def evaluate(self, compute_grad: bool) -> float:
        out = self.graph.forward(self.inputs, self.params, check_finite=False)
        value, dout = self.loss(out)
        if compute_grad:
            self.params.zero_grad()
            self.graph.backward(dout, self.params)
        return float(value)


def squared_loss(out: np.ndarray) -> Tuple[float, np.ndarray]:
    """0.5 * sum(out^2); the default probe loss."""
    return 0.5 * float(np.sum(out * out)), out


@dataclass
class GradCheckResult:
    max_relative_error: float
    probes: List[Tuple[str, int, float, float]] = field(default_factory=list)

    def worst(self) -> Optional[Tuple[str, int, float, float]]:
        if not self.probes:
            return None
        return max(self.probes, key=lambda p: _relative_error(p[2], p[3]))


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _checked(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise DiagnosticError(f"gradcheck: non-finite loss ({what}): {value}")
    return value


def run_gradcheck(
    target: GradientTarget,
    probe_count: int = 20,
    step: float = 1e-3,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients against central differences on random scalar parameters."""
    if probe_count < 1:
        raise ContractViolationError(f"probe_count must be >= 1, got {probe_count}")
    if step <= 0:
        raise ContractViolationError(f"step must be > 0, got {step}")

    params = target.params
    _checked(target.evaluate(compute_grad=True), "analytic pass")
    names = params.names()
    sizes = np.array([params.value(n).size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    flat_indices = rng.choice(int(offsets[-1]), size=probe_count, replace=probe_count > offsets[-1])

    result = GradCheckResult(max_relative_error=0.0)
    for flat in flat_indices:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, index = names[k], int(flat - offsets[k])
        value = params.value(name).reshape(-1)
        analytic = float(params.grad(name).reshape(-1)[index])

        original = value[index]
        value[index] = original + step
        plus = _checked(target.evaluate(compute_grad=False), f"{name}[{index}] + step")
        value[index] = original - step
        minus = _checked(target.evaluate(compute_grad=False), f"{name}[{index}] - step")
        value[index] = original

        numeric = (plus - minus) / (2.0 * step)
        result.probes.append((name, index, analytic, numeric))
        result.max_relative_error = max(result.max_relative_error, _relative_error(analytic, numeric))

    worst = result.worst()
    logger.debug(f"gradcheck: {probe_count} probes, max rel error {result.max_relative_error:.3e}, worst={worst}")
    return result


def finite_diff_gradcheck(
    graph,
    loss: Optional[LossFn] = None,
    probe_count: int = 20,
    step: float = 1e-3,
    *,
    params: Optional[ParamStore] = None,
    inputs: Optional[np.ndarray] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    Args:
        graph: A LayerGraph (then params and inputs are required), or any
            GradientTarget such as a VAE objective
        loss: Loss on graph outputs, returning (value, gradient); defaults
            to squared_loss for LayerGraphs
        probe_count: Number of randomly chosen scalar parameters
        step: Central-difference half-width
        seed: Probe selection seed

    Raises:
        DiagnosticError: If any loss evaluation is non-finite
    """
    if isinstance(graph, LayerGraph):
        if params is None or inputs is None:
            raise ContractViolationError("gradcheck of a LayerGraph needs params and inputs")
        target = GraphObjective(graph, params, inputs, loss or squared_loss)
    else:
        target = graph
    return run_gradcheck(target, probe_count, step, seed).max_relative_error
