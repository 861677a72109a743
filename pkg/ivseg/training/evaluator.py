"""
Per-mode evaluation report.

Rows (groups), mirroring the usual reporting split:

- "RES", "ReasonSeg": cIoU and gIoU over images;
- "R-VOS" (referring), "ReasonVOS" (reasoning), "video" (both): J, F, J&F
  over sequences;
- "overall": cIoU and gIoU over every image and every video frame.

Groups without samples are left out.
"""

import concurrent.futures

import numpy as np
import pandas

import ivseg.evaluation.metrics as metrics
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

COLUMNS = ("group", "samples", "ciou", "giou", "j", "f", "j_and_f")
GROUPS = (instruction.RES, instruction.REASON_SEG, instruction.RVOS, instruction.REASON_VOS, "video", "overall")


def _sample_records(args):
    """
    `(frame IoU records, (J, F, J&F) or None)` of one sample
    """
    sample, prediction, tolerance_px = args
    gt = sample.union_mask()
    prediction = np.asarray(prediction, dtype=bool)

    if prediction.shape != gt.shape:
        raise ValueError(f"Sample {sample.sample_id}: prediction shape {prediction.shape} differs from {gt.shape}")

    records = [metrics.iou_record(prediction[t], gt[t]) for t in range(gt.shape[0])]
    sequence = metrics.j_and_f(zip(prediction, gt), tolerance_px) if sample.is_video else None

    return records, sequence


def evaluate_predictions(samples, predictions: dict, tolerance_px=None, n_workers=None) -> pandas.DataFrame:
    """
    `predictions` maps sample ids to `[T, H, W]` bool masks, compared against
    the union of each sample's target masks
    """
    missing = [s.sample_id for s in samples if s.sample_id not in predictions]

    if missing:
        raise KeyError(f"No predictions for samples: {missing}")

    jobs = [(s, predictions[s.sample_id], tolerance_px) for s in samples]
    n_workers = n_workers or corpus.workers()

    if n_workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as executor:
            results = list(executor.map(_sample_records, jobs))
    else:
        results = [_sample_records(job) for job in jobs]

    groups = {g: metrics.EvalRecord() for g in GROUPS}
    counts = {g: 0 for g in GROUPS}

    for sample, (records, sequence) in zip(samples, results):
        targets = [sample.mode, "overall"] + (["video"] if sample.is_video else [])

        for g in targets:
            counts[g] += 1

        groups["overall"].images.extend(records)

        if sample.is_video:
            groups[sample.mode].sequences.append(sequence)
            groups["video"].sequences.append(sequence)
        else:
            groups[sample.mode].images.extend(records)

    rows = []

    for g in GROUPS:
        if counts[g] == 0:
            continue

        rows.append(dict(group=g, samples=counts[g], **groups[g].summary()))

    return pandas.DataFrame(rows, columns=COLUMNS)


def predict_samples(model, samples):
    out = dict()

    for i, sample in enumerate(samples):
        out[sample.sample_id] = model.predict_clip(sample)
        log.verbose(predict_samples, "predicted", i + 1, "of", len(samples))

    return out


def evaluate_model(model, samples, tolerance_px=None):
    """
    Runs the model over every frame of every sample. Returns `(report,
    predictions)`.
    """
    predictions = predict_samples(model, samples)

    return evaluate_predictions(samples, predictions, tolerance_px), predictions


def headline(report: pandas.DataFrame):
    """
    Flat `{group_metric: value}` dict of the report's non-empty cells
    """
    out = dict()

    for _, row in report.iterrows():
        for column in COLUMNS[2:]:
            if not pandas.isna(row[column]):
                out[f"{row['group']}_{column}"] = float(row[column])

    return out
