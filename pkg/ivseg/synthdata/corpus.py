"""
Corpus generation: a pure function of (seed, size, difficulty mix, mode mix).

Sample `index` of a corpus draws everything from
`np.random.default_rng([seed, index, attempt])`, so any partition of indices
over workers yields the same corpus.
"""

import concurrent.futures
import os

import numpy as np

import ivseg.synthdata.instruction as instruction
import ivseg.synthdata.scene as scene
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

MAX_ATTEMPTS = 50


def parse_mix(text, allowed):
    """
    Parses `name:weight,name:weight` (or bare comma-separated names, equal
    weights) into a normalized `{name: probability}` dict
    """
    weights = dict()

    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, weight = item.partition(":")
        name = name.strip()

        if name not in allowed:
            raise ValueError(f"Unknown mix entry `{name}`, expected one of {tuple(allowed)}")

        weights[name] = float(weight) if weight else 1.0

        if weights[name] < 0:
            raise ValueError(f"Negative mix weight for `{name}`")

    total = sum(weights.values())

    if total <= 0:
        raise ValueError(f"Mix `{text}` has no positive weight")

    return {k: v / total for k, v in weights.items()}


def _draw(rng, mix: dict):
    names = list(mix.keys())

    return names[int(rng.choice(len(names), p=[mix[n] for n in names]))]


def generate_sample(seed, index, difficulty_mix: dict, mode_mix: dict, clip_length=4, image_size=32):
    """
    Raises `SceneRejectedError` after `MAX_ATTEMPTS` rejected scenes
    """
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, index, attempt])
        mode = _draw(rng, mode_mix)
        difficulty = _draw(rng, difficulty_mix)
        frames = clip_length if mode in instruction.VIDEO_MODES else 1

        try:
            spec = scene.generate_scene(int(rng.integers(2 ** 31)), difficulty, frames, image_size, image_size)

            return instruction.generate_instruction(spec, mode, rng, sample_id=f"{seed}-{index:06d}")
        except instruction.SceneRejectedError:
            log.verbose(generate_sample, "sample", index, "attempt", attempt, "rejected")

    raise instruction.SceneRejectedError(f"Sample {index} of seed {seed}: no valid scene after {MAX_ATTEMPTS} attempts")


def _generate_range(args):
    seed, indices, difficulty_mix, mode_mix, clip_length, image_size = args

    return [generate_sample(seed, i, difficulty_mix, mode_mix, clip_length, image_size) for i in indices]


def workers():
    value = os.environ.get("IVSEG_WORKERS", "1")

    try:
        count = int(value)
    except ValueError:
        raise ValueError(f"IVSEG_WORKERS must be an integer, got `{value}`")

    return max(1, count)


def generate_corpus(seed, size, difficulty_mix=None, mode_mix=None, clip_length=4, image_size=32, n_workers=None):
    difficulty_mix = difficulty_mix or {"easy": 1.0}
    mode_mix = mode_mix or {m: 1.0 / len(instruction.MODES) for m in instruction.MODES}
    n_workers = n_workers or workers()

    if n_workers == 1 or size < 2 * n_workers:
        return _generate_range((seed, range(size), difficulty_mix, mode_mix, clip_length, image_size))

    chunks = [range(start, size, n_workers) for start in range(n_workers)]
    out = [None] * size
    log.info(generate_corpus, "generating", size, "samples with", n_workers, "workers")

    with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as executor:
        jobs = [(seed, chunk, difficulty_mix, mode_mix, clip_length, image_size) for chunk in chunks]

        for chunk, samples in zip(chunks, executor.map(_generate_range, jobs)):
            for i, sample in zip(chunk, samples):
                out[i] = sample

    return out
