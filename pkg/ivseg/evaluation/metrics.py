"""
Segmentation quality metrics.

- cIoU: summed intersections over summed unions;
- gIoU: mean per-image IoU;
- J: mean per-frame IoU, F: mean per-frame boundary F-measure, J&F their mean.

Empty-vs-empty comparisons score 1, empty-vs-nonempty score 0.
"""

import dataclasses

import numpy as np
import scipy.ndimage


@dataclasses.dataclass
class IouRecord:
    intersection: int
    union: int

    @property
    def iou(self):
        return 1.0 if self.union == 0 else self.intersection / self.union


@dataclasses.dataclass
class EvalRecord:
    """
    Accumulates image records and video sequences for one evaluation group
    """
    images: list = dataclasses.field(default_factory=list)  # [IouRecord]
    sequences: list = dataclasses.field(default_factory=list)  # [(J, F, J&F)]

    def add_image(self, pred, gt):
        self.images.append(iou_record(pred, gt))

    def add_sequence(self, frames, tolerance_px=None):
        self.sequences.append(j_and_f(frames, tolerance_px))

    def summary(self):
        out = dict()

        if self.images:
            out["ciou"] = ciou(self.images)
            out["giou"] = giou(self.images)

        if self.sequences:
            values = np.asarray(self.sequences)
            out["j"], out["f"], out["j_and_f"] = (float(v) for v in values.mean(axis=0))

        return out


def _binary_pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)

    if pred.shape != gt.shape:
        raise ValueError(f"Mask shapes disagree: {pred.shape}, {gt.shape}")

    return pred, gt


def iou_record(pred, gt) -> IouRecord:
    pred, gt = _binary_pair(pred, gt)

    return IouRecord(int(np.logical_and(pred, gt).sum()), int(np.logical_or(pred, gt).sum()))


def iou(pred, gt):
    return iou_record(pred, gt).iou


def ciou(records):
    if len(records) == 0:
        raise ValueError("cIoU of an empty record set")

    union = sum(r.union for r in records)

    return 1.0 if union == 0 else sum(r.intersection for r in records) / union


def giou(records):
    if len(records) == 0:
        raise ValueError("gIoU of an empty record set")

    return float(np.mean([r.iou for r in records]))


def boundary(mask):
    """
    Mask pixels with a 4-neighbour outside the mask; outside the frame counts
    as outside the mask
    """
    mask = np.asarray(mask, dtype=bool)
    interior = scipy.ndimage.binary_erosion(mask, structure=scipy.ndimage.generate_binary_structure(2, 1),
        border_value=0)

    return mask & ~interior


def default_tolerance(shape):
    return max(1, int(round(0.008 * np.hypot(*shape[:2]))))


def _dilate(mask, tolerance_px):
    if tolerance_px == 0:
        return mask

    return scipy.ndimage.binary_dilation(mask, structure=np.ones((2 * tolerance_px + 1, 2 * tolerance_px + 1), dtype=bool))


def boundary_f(pred, gt, tolerance_px=None):
    """
    Boundary pixels match when a boundary pixel of the other mask lies within
    Chebyshev distance `tolerance_px`
    """
    pred, gt = _binary_pair(pred, gt)
    tolerance_px = default_tolerance(pred.shape) if tolerance_px is None else int(tolerance_px)

    if tolerance_px < 0:
        raise ValueError(f"Negative boundary tolerance {tolerance_px}")

    pred_boundary = boundary(pred)
    gt_boundary = boundary(gt)
    n_pred = pred_boundary.sum()
    n_gt = gt_boundary.sum()

    if n_pred == 0 and n_gt == 0:
        return 1.0

    if n_pred == 0 or n_gt == 0:
        return 0.0

    precision = (pred_boundary & _dilate(gt_boundary, tolerance_px)).sum() / n_pred
    recall = (gt_boundary & _dilate(pred_boundary, tolerance_px)).sum() / n_gt

    if precision + recall == 0:
        return 0.0

    return float(2.0 * precision * recall / (precision + recall))


def j_and_f(frames, tolerance_px=None):
    """
    `frames` is a sequence of `(pred, gt)`; returns `(J, F, J&F)`
    """
    frames = list(frames)

    if len(frames) == 0:
        raise ValueError("J&F of an empty sequence")

    j = float(np.mean([iou(pred, gt) for pred, gt in frames]))
    f = float(np.mean([boundary_f(pred, gt, tolerance_px) for pred, gt in frames]))

    return j, f, (j + f) / 2.0
