"""Loss terms of the panoptic objective and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LabelError
from .semantic import log_softmax

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    a1: float = 1.0
    a2: float = 100.0
    a3: float = 10.0
    a4: float = 1.0
    a5: float = 1.0

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "a4", "a5"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"weight {name} must be finite and non-negative, got {v}")


def _labels(labels, n: int, m: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != n:
        raise DimensionError(f"{len(labels)} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= m):
        raise LabelError(f"labels must lie in [0, {m})")
    return labels


def ce_loss(logits, labels) -> float:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _labels(labels, *logits.shape)
    if len(labels) == 0:
        return 0.0
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def ce_grad(logits, labels) -> np.ndarray:
    """d ce_loss / d logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _labels(labels, *logits.shape)
    p = np.exp(log_softmax(logits))
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard extension w.r.t. errors sorted in descending order."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_loss(probabilities, labels, ignore=None) -> float:
    """Multi-class Lovasz-Softmax averaged over classes present in ``labels``."""
    probs = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    labels = _labels(labels, *probs.shape)
    if ignore is not None:
        keep = labels != ignore
        probs, labels = probs[keep], labels[keep]
    if len(labels) == 0:
        return 0.0
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise ValueError("rows of probabilities must be non-negative and sum to 1")
    losses = []
    for c in range(probs.shape[1]):
        fg = (labels == c).astype(np.float64)
        if fg.sum() == 0:
            continue
        errors = np.abs(fg - probs[:, c])
        order = np.argsort(-errors, kind="stable")
        losses.append(float(errors[order] @ lovasz_grad(fg[order])))
    return float(np.mean(losses))


def mse_heatmap_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"{pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2)) if pred.size else 0.0


def l1_offset_loss(pred, target, mask) -> float:
    """Mean |pred - target| over every channel of the masked cells; 0 if none."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape[:-1] != mask.shape:
        raise DimensionError(f"pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    if not mask.any():
        return 0.0
    return float(np.abs(pred[mask] - target[mask]).mean())


def bce_fog_loss(pred, target) -> float:
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"{p.shape} vs {t.shape}")
    if p.size == 0:
        return 0.0
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def bce_grad(pred, target) -> np.ndarray:
    """d bce_fog_loss / d pred, zero where the clamp is active."""
    raw = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    p = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    g = (p - t) / (p * (1.0 - p)) / raw.size
    return np.where((raw > PROB_EPS) & (raw < 1.0 - PROB_EPS), g, 0.0)


LOSS_TERMS = ("ce", "lovasz", "mse", "l1", "bce", "l2d")


def total_loss(terms: dict, weights: LossWeights = LossWeights()) -> float:
    """a1 (CE + Lovasz) + a2 MSE + a3 L1 + a4 BCE + a5 L2D; missing terms count as 0."""
    g = {k: float(terms.get(k, 0.0)) for k in LOSS_TERMS}
    return (
        weights.a1 * (g["ce"] + g["lovasz"])
        + weights.a2 * g["mse"]
        + weights.a3 * g["l1"]
        + weights.a4 * g["bce"]
        + weights.a5 * g["l2d"]
    )


def format_loss_report(terms: dict, weights: LossWeights = LossWeights()) -> str:
    lines = [f"{k} = {float(terms.get(k, 0.0)):.9g}" for k in LOSS_TERMS]
    lines.append(f"total = {total_loss(terms, weights):.9g}")
    return "\n".join(lines) + "\n"
