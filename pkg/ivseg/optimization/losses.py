"""
Training objective

L = L_t + λ_cls·L_cls + λ_mask·(λ_b·L_b + λ_d·L_d)

with L_t the next-token cross-entropy of the text span, L_cls the per-proposal
binary score loss, and L_b / L_d the BCE and DICE losses of the proposals
matched to ground-truth targets.
"""

import dataclasses

import numpy as np
import scipy.special

import ivseg.autograd.tensor as tensor
import ivseg.model.segdec as segdec
import ivseg.optimization.assignment as assignment
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

DICE_EPS = 1.0


@dataclasses.dataclass
class LossWeights:
    cls: float = 1.0
    mask: float = 1.0
    bce: float = 1.0
    dice: float = 1.0

    def __post_init__(self):
        for name, value in dataclasses.asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"Loss weight `{name}`={value} must be finite and non-negative")


@dataclasses.dataclass
class LossReport:
    total: float
    text: float
    cls: float
    bce: float
    dice: float
    assignment: ivseg.optimization.assignment.Assignment = None

    def as_dict(self):
        return dict(loss=self.total, text=self.text, cls=self.cls, bce=self.bce, dice=self.dice)


def _check_pair(pred, gt):
    gt = np.asarray(gt, dtype=pred.data.dtype)

    if gt.shape != pred.shape:
        raise tensor.ShapeError("Prediction and ground truth disagree", pred.shape, gt.shape)

    return gt


def dice_loss(pred, gt, eps=DICE_EPS):
    """
    `pred` holds probabilities
    """
    gt = _check_pair(pred, gt)
    intersection = tensor.sum(pred * gt)
    denominator = tensor.sum(pred) + float(gt.sum()) + eps

    return 1.0 - (intersection * 2.0 + eps) / denominator


def bce_loss(logits, gt):
    """
    Mean pixel BCE from logits: softplus(z) - gt·z
    """
    gt = _check_pair(logits, gt)

    return tensor.mean(tensor.softplus(logits) - logits * gt)


def class_loss(score_logits, matched: assignment.Assignment):
    return tensor.mean(tensor.softplus(score_logits) - score_logits * matched.labels())


def text_loss(logits, targets):
    """
    Mean next-token cross-entropy
    """
    targets = np.asarray(targets, dtype=np.int64)

    if logits.shape[0] != targets.shape[0]:
        raise tensor.ShapeError("Logit rows and targets disagree", logits.shape, targets.shape)

    picked = tensor.log_softmax(logits, axis=-1)[(np.arange(targets.shape[0]), targets)]

    return -tensor.mean(picked)


def matching_cost(mask_set: segdec.MaskSet, gt_masks, weights: LossWeights):
    """
    `[N, G]`: λ_cls·(−score) + λ_mask·(λ_b·BCE + λ_d·DICE)
    """
    logits = mask_set.mask_logits.data.reshape(len(mask_set), -1)
    gt = np.asarray(gt_masks, dtype=np.float64).reshape(gt_masks.shape[0], -1)
    probabilities = scipy.special.expit(logits)
    scores = scipy.special.expit(mask_set.score_logits.data)
    bce = (np.logaddexp(0.0, logits).sum(axis=1)[:, None] - logits @ gt.T) / logits.shape[1]
    dice = 1.0 - (2.0 * probabilities @ gt.T + DICE_EPS) \
        / (probabilities.sum(axis=1)[:, None] + gt.sum(axis=1)[None, :] + DICE_EPS)

    return weights.cls * -scores[:, None] + weights.mask * (weights.bce * bce + weights.dice * dice)


def total_loss(text_logits, text_targets, mask_set: segdec.MaskSet, gt_masks, weights: LossWeights = None):
    """
    Returns `(loss Tensor, LossReport)`. `text_logits` may be None when the
    sample carries no text supervision.
    """
    weights = weights or LossWeights()
    gt_masks = np.asarray(gt_masks)

    if gt_masks.ndim != 3 or gt_masks.shape[0] == 0:
        raise ValueError(f"At least one ground-truth target is required, got masks of shape {gt_masks.shape}")

    matched = assignment.hungarian_assign(matching_cost(mask_set, gt_masks, weights))
    l_cls = class_loss(mask_set.score_logits, matched)
    bce_terms = []
    dice_terms = []

    for j, g in matched.pairs:
        logits = mask_set.mask_logits[j]
        bce_terms.append(bce_loss(logits, gt_masks[g]))
        dice_terms.append(dice_loss(tensor.sigmoid(logits), gt_masks[g]))

    l_b = tensor.mean(tensor.concat([t.reshape(1) for t in bce_terms]))
    l_d = tensor.mean(tensor.concat([t.reshape(1) for t in dice_terms]))
    l_t = text_loss(text_logits, text_targets) if text_logits is not None else tensor.Tensor(0.0)
    total = l_t + l_cls * weights.cls + (l_b * weights.bce + l_d * weights.dice) * weights.mask
    report = LossReport(float(total.data), float(l_t.data), float(l_cls.data), float(l_b.data), float(l_d.data), matched)

    return total, report
