"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, grad

STEP = 1e-4
# below this magnitude errors are measured absolutely
FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_elementwise(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    step: float = STEP,
) -> dict[str, float]:
    """Compare every gradient element against a central difference.

    ``fn`` maps a dict of leaf tensors to a scalar tensor. Returns the max
    relative error per input.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in inputs.items()}
    analytic = dict(zip(leaves, grad(fn(leaves), leaves.values())))
    errors = {}
    for name, leaf in leaves.items():
        numeric = np.zeros(leaf.shape)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = fn(leaves).item()
            flat[i] = original - step
            down = fn(leaves).item()
            flat[i] = original
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def check_directional(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    rng: np.random.Generator,
    step: float = STEP,
) -> dict[str, float]:
    """Per-tensor directional-derivative check for large graphs.

    For each tensor a random unit direction ``u`` is drawn and
    ``<grad, u>`` is compared with ``(f(x + h u) - f(x - h u)) / 2h``.
    """
    names = list(tensors)
    analytic = dict(zip(names, grad(fn(), [tensors[n] for n in names])))
    errors = {}
    for name in names:
        t = tensors[name]
        u = rng.standard_normal(t.shape)
        u /= np.linalg.norm(u) or 1.0
        original = t.data.copy()
        t.data = original + step * u
        up = fn().item()
        t.data = original - step * u
        down = fn().item()
        t.data = original
        numeric = (up - down) / (2 * step)
        errors[name] = relative_error(np.sum(analytic[name] * u), numeric)
    return errors
