"""
Training objectives.

cross_entropy, bce_with_logits and dice_loss are single fused tape nodes
with scalar outputs. Each loss has a *_trace function listing the nodes it
records, for the memory estimator. Reductions accumulate in float64 and
round once to the working dtype.
"""

from typing import List, Sequence, Tuple, Union

import numpy as np

from autograd import ops
from autograd.tensor import Tensor, make_result
from utils.error_manager import ContractError, DimensionError

Shape = Tuple[int, ...]
TargetLike = Union[Tensor, np.ndarray]

DICE_EPS = 1.0

def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[label], with max-subtraction.

    Raises:
        DimensionError: logits not [B,K] or label count differs from B
        ContractError: a label outside [0, K)
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [B,K] logits, got {list(logits.shape)}")
    batch, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(f"labels must lie in [0, {classes}), got {labels.tolist()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(batch)
    out = np.asarray(-log_probs[rows, labels].mean(dtype=np.float64), dtype=logits.data.dtype)

    def backward_fn(grad: np.ndarray):
        probs = exp / total
        probs[rows, labels] -= 1.0
        return (probs * (grad / batch),)

    return make_result(out, (logits,), backward_fn, "cross_entropy")

def _targets(targets: TargetLike, shape: Shape) -> np.ndarray:
    data = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if data.shape != tuple(shape):
        raise DimensionError(f"target shape {list(data.shape)} differs from prediction {list(shape)}")
    if not np.all((data == 0) | (data == 1)):
        raise ContractError("binary targets must be 0 or 1")
    return data

def bce_with_logits(logits: Tensor, targets: TargetLike) -> Tensor:
    """Mean of max(x,0) - x*t + log(1 + exp(-|x|))."""
    t = _targets(targets, logits.shape).astype(logits.data.dtype, copy=False)
    x = logits.data
    terms = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(terms.mean(dtype=np.float64), dtype=x.dtype)
    count = x.size

    def backward_fn(grad: np.ndarray):
        e = np.exp(-np.abs(x))
        probs = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return ((probs - t) * (grad / count),)

    return make_result(out, (logits,), backward_fn, "bce_with_logits")

def dice_loss(probs: Tensor, targets: TargetLike, eps: float = DICE_EPS) -> Tensor:
    """1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps) over all elements."""
    t = _targets(targets, probs.shape).astype(probs.data.dtype, copy=False)
    p = probs.data
    intersection = float((p * t).sum())
    union = float(p.sum() + t.sum()) + eps
    out = np.asarray(1.0 - (2.0 * intersection + eps) / union, dtype=p.dtype)

    def backward_fn(grad: np.ndarray):
        d = -(2.0 * t * union - (2.0 * intersection + eps)) / (union * union)
        return ((d * grad).astype(p.dtype, copy=False),)

    return make_result(out, (probs,), backward_fn, "dice_loss")

def seg_loss(logits: Tensor, targets: TargetLike) -> Tensor:
    """Unweighted bce + dice on sigmoid probabilities."""
    return ops.add(bce_with_logits(logits, targets), dice_loss(ops.sigmoid(logits), targets))

# ============================================================================
# Traces
# ============================================================================

def cross_entropy_trace(logits_shape: Shape) -> List[Tuple[str, Shape]]:
    return [("cross_entropy", ())]

def seg_loss_trace(logits_shape: Shape) -> List[Tuple[str, Shape]]:
    return [("bce_with_logits", ()), ("sigmoid", tuple(logits_shape)), ("dice_loss", ()), ("add", ())]
