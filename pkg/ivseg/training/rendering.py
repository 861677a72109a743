"""
Qualitative outputs: side-by-side graymap panels, colour overlays and the loss
chart.

A panel is `[H, 3W + 2]`: the frame's luminance, a separator column, the
ground truth, a separator column, the prediction.
"""

import pathlib

import numpy as np
import pygal

import ivseg.data_processing.image_io as image_io
import ivseg.evaluation.metrics as metrics
import ivseg.ut as ut
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

SEPARATOR = 128
_LUMINANCE = np.array([0.299, 0.587, 0.114])
_PREDICTION_TINT = np.array([1.0, 0.0, 0.0])
_GROUND_TRUTH_EDGE = np.array([1.0, 1.0, 1.0])


def _gray(frame):
    return np.round(np.clip(np.asarray(frame) @ _LUMINANCE, 0.0, 1.0) * 255.0).astype(np.uint8)


def panel(frame, gt, pred):
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    height, width = gt.shape

    if pred.shape != gt.shape or np.shape(frame)[:2] != gt.shape:
        raise ValueError(f"Panel inputs disagree: frame {np.shape(frame)}, gt {gt.shape}, pred {pred.shape}")

    separator = np.full((height, 1), SEPARATOR, dtype=np.uint8)

    return np.concatenate([_gray(frame), separator, gt.astype(np.uint8) * 255, separator,
        pred.astype(np.uint8) * 255], axis=1)


def overlay(frame, gt, pred, alpha=0.5):
    """
    Prediction tinted red, ground-truth contour in white
    """
    out = np.array(frame, dtype=np.float64)
    pred = np.asarray(pred, dtype=bool)
    out[pred] = (1.0 - alpha) * out[pred] + alpha * _PREDICTION_TINT
    out[metrics.boundary(gt)] = _GROUND_TRUTH_EDGE

    return out


def render_sample(sample, prediction, out_dir):
    """
    Writes `<id>_t<t>.pgm` panels and `<id>_t<t>_overlay.ppm` overlays for every
    frame. Returns the written paths.
    """
    ut.dir_create_if_not_exists(out_dir)
    gt = sample.union_mask()
    written = []

    for t in range(sample.frames):
        stem = pathlib.Path(out_dir) / f"{sample.sample_id}_t{t}"
        image_io.write_pgm(f"{stem}.pgm", panel(sample.clip[t], gt[t], prediction[t]))
        image_io.write_ppm(f"{stem}_overlay.ppm", overlay(sample.clip[t], gt[t], prediction[t]))
        written += [f"{stem}.pgm", f"{stem}_overlay.ppm"]

    log.debug(render_sample, sample.sample_id, "->", len(written), "files")

    return written


def loss_chart(trace: ut.Trace, path):
    """
    SVG line chart of every traced loss component over the steps
    """
    chart = pygal.XY(stroke=True, show_dots=False, title="training loss", x_title="step")

    for series in trace.as_iter():
        chart.add(title=series.title, values=series.as_line_x1y1())

    chart.render_to_file(path)
    log.debug(loss_chart, "->", path)

    return path
