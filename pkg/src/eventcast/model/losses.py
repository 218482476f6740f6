"""Forecasting loss, triplet causal loss and their sum."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericDomainError, ShapeError
from ..numerics import Tensor, absolute, as_tensor, norm, relu, square

COSINE_EPS = 1e-12


def time_loss(pred, target) -> Tensor:
    """MSE + MAE averaged over every predicted value."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return square(diff).mean() + absolute(diff).mean()


def distance(a, b, kind: str = "euclidean") -> Tensor:
    """Distance along the last axis (cosine distance is 1 - cosine similarity)."""
    a, b = as_tensor(a), as_tensor(b)
    if kind == "euclidean":
        return norm(a - b)
    if kind == "cosine":
        dot = (a * b).sum(axis=-1)
        return 1.0 - dot / (norm(a) * norm(b) + COSINE_EPS)
    raise ContractError(f"unknown distance {kind!r}")


def triplet_loss(p_gt, p_cf, t, margin: float = 1.0, kind: str = "euclidean") -> Tensor:
    """Mean over counterfactuals of max(0, d(P_gt, T) - d(P_cf, T) + margin).

    Shapes: ``p_gt`` and ``t`` are (D,) or (B, D); ``p_cf`` is (K, D) or
    (B, K, D). With a batch axis the result is also averaged over the batch.
    """
    p_gt, p_cf, t = as_tensor(p_gt), as_tensor(p_cf), as_tensor(t)
    if p_cf.ndim < 2 or p_cf.shape[-2] == 0:
        raise ContractError("triplet loss needs at least one counterfactual")
    dim = p_gt.shape[-1]
    if p_cf.shape[-1] != dim or t.shape[-1] != dim:
        raise ShapeError(f"embedding widths differ: {p_gt.shape}, {p_cf.shape}, {t.shape}")
    d_gt = distance(p_gt, t, kind)  # (B,) or ()
    t_exp = t.reshape(t.shape[:-1] + (1, dim))
    d_cf = distance(p_cf, t_exp, kind)  # (B, K) or (K,)
    gap = d_gt.reshape(d_gt.shape + (1,)) - d_cf + margin
    return relu(gap).mean()


def total_loss(time: Tensor, causal: Tensor, time_weight: float = 1.0, causal_weight: float = 1.0) -> Tensor:
    time, causal = as_tensor(time), as_tensor(causal)
    if not (np.all(np.isfinite(time.data)) and np.all(np.isfinite(causal.data))):
        raise NumericDomainError("non-finite loss component")
    return time * time_weight + causal * causal_weight
