"""
Central finite-difference checks for analytic gradients.
"""

from typing import Callable, Dict, Mapping

import numpy as np

from .tensor import Tensor, gradients


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """d loss / d param by central differences, one coordinate at a time"""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = loss_fn().item()
        flat[i] = original - h
        minus = loss_fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """‖a − n‖ / max(‖a‖ + ‖n‖, floor)"""
    if not analytic.size:
        return 0.0
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, floor)


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                    h: float = 1e-5) -> Dict[str, float]:
    """Relative error of the analytic gradient of every parameter"""
    analytic = gradients(loss_fn(), params)
    return {name: relative_error(analytic[name], numerical_gradient(loss_fn, p, h)) for name, p in params.items()}
