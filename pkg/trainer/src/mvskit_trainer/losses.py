"""Training losses over label maps with undefined pixels masked out.

The balanced loss mirrors the core toolkit's evaluation function exactly
(per-class L2 norms scaled by the class pixel counts); the two
implementations are cross-checked numerically in the tests.
"""

from __future__ import annotations

import torch

LABEL_OUTLIER = 0
LABEL_INLIER = 1
LABEL_UNDEFINED = 2

_BCE_EPS = 1e-7


def balanced_l2_loss(pred: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """||c+ - 1||_2 / N+  +  ||c-||_2 / N- over defined pixels.

    pred and labels share shape; labels hold {0, 1, 2} codes. A class with no
    defined pixels contributes 0.
    """
    pos = labels == LABEL_INLIER
    neg = labels == LABEL_OUTLIER
    loss = pred.new_zeros(())
    if pos.any():
        loss = loss + torch.linalg.vector_norm(pred[pos] - 1.0) / pos.sum()
    if neg.any():
        loss = loss + torch.linalg.vector_norm(pred[neg]) / neg.sum()
    return loss


def bce_loss(pred: torch.Tensor, labels: torch.Tensor, negative_weight: float = 1.0) -> torch.Tensor:
    """Mean binary cross entropy over defined pixels, with the outlier term
    scaled by negative_weight (3 for the weighted variant)."""
    defined = labels != LABEL_UNDEFINED
    if not defined.any():
        return pred.new_zeros(())
    p = pred[defined].clamp(_BCE_EPS, 1.0 - _BCE_EPS)
    y = (labels[defined] == LABEL_INLIER).to(p.dtype)
    terms = -(y * torch.log(p) + negative_weight * (1.0 - y) * torch.log(1.0 - p))
    return terms.mean()


LOSSES = {
    "balanced": balanced_l2_loss,
    "bce": bce_loss,
    "wbce": lambda pred, labels: bce_loss(pred, labels, negative_weight=3.0),
}
