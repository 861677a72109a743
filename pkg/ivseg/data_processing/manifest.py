"""
Dataset split manifest.

One record per line, tab-separated:

    SAMPLE_ID  MODE  CLIP_PATH  INSTRUCTION  ANSWER  MASK_PATHS

`CLIP_PATH` is a `.npy` array [T, H, W, 3] of floats in [0, 1]. `MASK_PATHS`
lists graymaps target by target (`;`-separated), frame by frame within a
target (`,`-separated). Paths are relative to the manifest's directory.
"""

import dataclasses
import os
import pathlib

import numpy as np

import ivseg.data_processing.image_io as image_io
import ivseg.synthdata.instruction as instruction
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

MANIFEST_SUFFIX = ".tsv"


class ManifestError(Exception):

    def __init__(self, problems):
        self.problems = list(problems)
        Exception.__init__(self, f"{len(self.problems)} manifest problem(s): " + "; ".join(self.problems))


@dataclasses.dataclass(frozen=True)
class ManifestRecord:
    sample_id: str
    mode: str
    clip_path: str
    instruction: str
    answer: str
    mask_paths: tuple  # ((frame paths of target 0), (frame paths of target 1), ...)

    def to_line(self):
        masks = ";".join(",".join(frames) for frames in self.mask_paths)

        return "\t".join((self.sample_id, self.mode, self.clip_path, self.instruction, self.answer, masks))

    @staticmethod
    def from_line(line):
        fields = line.rstrip("\n").split("\t")

        if len(fields) != 6:
            raise ValueError(f"expected 6 tab-separated fields, got {len(fields)}")

        sample_id, mode, clip_path, text, answer, masks = fields

        if mode not in instruction.MODES:
            raise ValueError(f"unknown mode `{mode}`")

        mask_paths = tuple(tuple(target.split(",")) for target in masks.split(";") if target)

        if not mask_paths:
            raise ValueError("no target masks")

        return ManifestRecord(sample_id, mode, clip_path, text, answer, mask_paths)


def manifest_path(out_dir, split):
    return str(pathlib.Path(out_dir) / (split + MANIFEST_SUFFIX))


def write_split(samples, out_dir, split):
    """
    Writes clips, masks and the manifest of `samples` under `out_dir`.
    Returns the manifest path.
    """
    root = pathlib.Path(out_dir)
    (root / split).mkdir(parents=True, exist_ok=True)
    records = []

    for sample in samples:
        clip_path = f"{split}/{sample.sample_id}.npy"
        np.save(root / clip_path, np.asarray(sample.clip, dtype=np.float64))
        mask_paths = []

        for g in range(sample.gt_masks.shape[0]):
            frames = []

            for t in range(sample.gt_masks.shape[1]):
                path = f"{split}/{sample.sample_id}_g{g}_t{t}.pgm"
                image_io.write_pgm(root / path, sample.gt_masks[g, t])
                frames.append(path)

            mask_paths.append(tuple(frames))

        records.append(ManifestRecord(sample.sample_id, sample.mode, clip_path, sample.instruction, sample.answer,
            tuple(mask_paths)))

    path = manifest_path(out_dir, split)

    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.to_line() + "\n")

    log.info(write_split, "wrote", len(records), "samples to", path)

    return path


def read_manifest(path):
    problems = []
    records = []

    if not os.path.exists(path):
        raise ManifestError([f"missing manifest `{path}`"])

    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue

            try:
                records.append(ManifestRecord.from_line(line))
            except ValueError as e:
                problems.append(f"{path}:{number}: {e}")

    if problems:
        raise ManifestError(problems)

    return records


def _prompt_of(record: ManifestRecord):
    template = instruction.TEMPLATES[record.mode]

    if not record.instruction.startswith(template + " "):
        raise ValueError(f"instruction does not start with the {record.mode} template")

    return record.instruction[len(template) + 1:]


def load_split(path):
    """
    Reads every record's clip and masks back into `InstructionSample`s.
    Collects all missing or malformed files before raising `ManifestError`.
    """
    root = pathlib.Path(path).parent
    samples = []
    problems = []

    for record in read_manifest(path):
        try:
            prompt = _prompt_of(record)
        except ValueError as e:
            problems.append(f"{record.sample_id}: {e}")
            continue

        clip_file = root / record.clip_path

        if not clip_file.exists():
            problems.append(f"{record.sample_id}: missing clip `{clip_file}`")
            continue

        clip = np.load(clip_file).astype(np.float64)
        masks = []

        for frames in record.mask_paths:
            if len(frames) != clip.shape[0]:
                problems.append(f"{record.sample_id}: {len(frames)} mask frames for a {clip.shape[0]}-frame clip")
                masks.append([])
                continue

            target = []

            for frame in frames:
                mask_file = root / frame

                if not mask_file.exists():
                    problems.append(f"{record.sample_id}: missing mask `{mask_file}`")
                    continue

                try:
                    target.append(image_io.read_mask(mask_file))
                except ValueError as e:
                    problems.append(f"{record.sample_id}: {e}")

            masks.append(target)

        if any(len(target) != clip.shape[0] for target in masks):
            continue

        samples.append(instruction.InstructionSample(
            sample_id=record.sample_id,
            mode=record.mode,
            clip=clip,
            prompt=prompt,
            answer=record.answer,
            target_ids=tuple(range(len(masks))),
            gt_masks=np.asarray(masks, dtype=bool),
        ))

    if problems:
        raise ManifestError(problems)

    return samples
