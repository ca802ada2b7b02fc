"""Objective terms: class cross-entropy plus dice/BCE mask losses.

Matched outputs are supervised toward their ground-truth class and mask;
everything unmatched is pushed to the background class and contributes no
mask term.  A track whose object is gone additionally gets an empty-mask
target so its segmentation output dies with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor2,
    add,
    bce_with_logits,
    dice_from_logits,
    gather_rows,
    mean_all,
    scale,
    softmax_xent,
)


@dataclass(frozen=True)
class LossConfig:
    w_cls: float = 2.0
    w_dice: float = 5.0
    w_bce: float = 5.0
    bg_weight: float = 0.1   # CE down-weight for no-object rows

    def __post_init__(self):
        if min(self.w_cls, self.w_dice, self.w_bce, self.bg_weight) < 0:
            raise ValueError("loss weights must be nonnegative")
        if max(self.w_cls, self.w_dice, self.w_bce) == 0:
            raise ValueError("at least one loss weight must be positive")

    @property
    def cost_weights(self) -> tuple[float, float, float]:
        return (self.w_cls, self.w_dice, self.w_bce)


@dataclass
class FrameLossParts:
    """Unweighted per-frame loss nodes (1x1 each; None when inapplicable)."""

    cls: Tensor2 | None = None
    dice: Tensor2 | None = None
    bce: Tensor2 | None = None


def frame_loss_parts(class_logits: Tensor2, mask_logits: Tensor2 | None,
                     cls_targets: np.ndarray, mask_rows: list[int],
                     mask_targets: np.ndarray | None,
                     bg_weight: float = 1.0) -> FrameLossParts:
    """Loss terms for one tracker's outputs at one frame.

    ``cls_targets`` gives a class index for every output row (background
    included).  ``mask_rows`` lists the rows that carry a mask target;
    ``mask_targets`` stacks those targets in the same order.  Rows whose
    class target is the background (last column) have their CE scaled by
    ``bg_weight``.
    """
    parts = FrameLossParts()
    targets = np.asarray(cls_targets)
    weights = np.where(targets == class_logits.cols - 1, bg_weight, 1.0)
    parts.cls = mean_all(softmax_xent(class_logits, targets, row_weights=weights))
    if mask_rows and mask_logits is not None:
        assert mask_targets is not None and mask_targets.shape[0] == len(mask_rows)
        rows = gather_rows(mask_logits, mask_rows)
        parts.dice = mean_all(dice_from_logits(rows, mask_targets))
        parts.bce = mean_all(bce_with_logits(rows, mask_targets))
    return parts


def combine_losses(parts: list[FrameLossParts], cfg: LossConfig):
    """Weighted clip loss (mean over frames) plus per-term breakdown."""
    if not parts:
        raise ValueError("no loss parts to combine")

    def average(nodes):
        nodes = [n for n in nodes if n is not None]
        if not nodes:
            return None
        acc = nodes[0]
        for n in nodes[1:]:
            acc = add(acc, n)
        return scale(acc, 1.0 / len(nodes))

    cls = average([p.cls for p in parts])
    dice = average([p.dice for p in parts])
    bce = average([p.bce for p in parts])

    total = scale(cls, cfg.w_cls)
    if dice is not None:
        total = add(total, scale(dice, cfg.w_dice))
    if bce is not None:
        total = add(total, scale(bce, cfg.w_bce))
    breakdown = {
        "cls": cls.item(),
        "dice": dice.item() if dice is not None else 0.0,
        "bce": bce.item() if bce is not None else 0.0,
    }
    return total, breakdown
