"""Central-difference gradient checking for parameterized blocks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Mapping, Optional

import numpy as np

from .tensor import Tensor, backward, no_grad, tsum, zero_grad

logger = logging.getLogger(__name__)

GRAD_FLOOR = 1e-6


@dataclass
class ParamCheck:
    name: str
    size: int
    checked: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    tolerance: float
    entries: List[ParamCheck] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self) -> Optional[ParamCheck]:
        return max(self.entries, key=lambda e: e.max_rel_error, default=None)


def projected_loss(output: Tensor, seed: int = 0) -> Tensor:
    """Reduce ``output`` to a scalar through a fixed random projection."""
    weights = np.random.default_rng(seed).standard_normal(output.shape)
    return tsum(output * weights)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), GRAD_FLOOR)
    return float(np.linalg.norm(analytic - numeric)) / scale


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current parameter
    data on every call. When ``max_coords`` is set, at most that many
    randomly chosen coordinates are checked per parameter.
    """
    rng = np.random.default_rng(seed)
    tensors = list(params.values())
    zero_grad(tensors)
    analytic = backward(loss_fn(), tensors)
    report = GradCheckReport(tolerance=tolerance)

    with no_grad():
        for name, param in params.items():
            coords = np.arange(param.size)
            if max_coords is not None and param.size > max_coords:
                coords = np.sort(rng.choice(param.size, size=max_coords, replace=False))
            original = param.data
            numeric = np.empty(coords.size)
            try:
                for j, c in enumerate(coords):
                    shifted = original.copy()
                    shifted.flat[c] += step
                    param.data = shifted
                    f_plus = loss_fn().item()
                    shifted = original.copy()
                    shifted.flat[c] -= step
                    param.data = shifted
                    f_minus = loss_fn().item()
                    numeric[j] = (f_plus - f_minus) / (2.0 * step)
            finally:
                param.data = original
            err = _relative_error(analytic[param].ravel()[coords], numeric)
            report.entries.append(ParamCheck(name, param.size, int(coords.size), err))
            logger.debug("grad_check %s: %d/%d coords, rel err %.3e", name, coords.size, param.size, err)

    zero_grad(tensors)
    return report


__all__ = ["GradCheckReport", "ParamCheck", "grad_check", "projected_loss"]
