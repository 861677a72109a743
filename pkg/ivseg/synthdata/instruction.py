"""
Instruction grammar over scene ground truth.

An instruction is a task template followed by a text prompt. Referring prompts
name objects by attributes; reasoning prompts ask a closed-form question about
size, position, or motion. Every prompt is accepted only when its solution
set, computed from the `SceneSpec`, is unique under the predicate's margin.
"""

import dataclasses

import numpy as np

import ivseg.synthdata.scene as scene
import ivseg.synthdata.vocabulary as vocabulary
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

RES = "RES"
REASON_SEG = "ReasonSeg"
RVOS = "R-VOS"
REASON_VOS = "ReasonVOS"
MODES = (RES, REASON_SEG, RVOS, REASON_VOS)
VIDEO_MODES = (RVOS, REASON_VOS)

TEMPLATES = {
    RES: "you need to perform referring expression segmentation on the image according to the text prompt",
    REASON_SEG: "you need to perform reasoning segmentation on the image according to the text prompt",
    RVOS: "you need to perform referring video object segmentation on the video according to the text prompt",
    REASON_VOS: "you need to perform reasoning video object segmentation on the video according to the text prompt",
}

POSITION_MARGIN = 2.0  # px
SIZE_MARGIN = 1.0  # px
SPEED_MARGIN = 0.3  # px / frame
DIRECTION_THRESHOLD = 0.5  # px / frame


SceneRejectedError = scene.SceneRejectedError


@dataclasses.dataclass(frozen=True)
class Predicate:
    name: str
    argument: str = None
    """
    Color or shape word of attribute predicates
    """


@dataclasses.dataclass
class InstructionSample:
    sample_id: str
    mode: str
    clip: np.ndarray  # [T, H, W, 3]
    prompt: str
    answer: str
    target_ids: tuple
    gt_masks: np.ndarray  # [G, T, H, W] bool, visible regions of the targets
    predicate: Predicate = None
    scene: ivseg.synthdata.scene.SceneSpec = None

    @property
    def instruction(self):
        return TEMPLATES[self.mode] + " " + self.prompt

    @property
    def frames(self):
        return self.clip.shape[0]

    @property
    def is_video(self):
        return self.mode in VIDEO_MODES

    def text_ids(self, vocab=vocabulary.VOCABULARY):
        return [vocab.bos_id] + vocab.tokenize(self.instruction) + [vocab.sep_id]

    def answer_ids(self, vocab=vocabulary.VOCABULARY):
        return vocab.tokenize(self.answer)

    def union_mask(self):
        return np.any(self.gt_masks, axis=0)


def _unique_extreme(values, margin, largest=True):
    """
    Index of the strict extreme when it beats the runner-up by `margin`
    """
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values if largest else values, kind="stable")

    if abs(values[order[0]] - values[order[1]]) < margin:
        return None

    return int(order[0])


def _direction(obj: scene.SceneObject):
    vx, vy = obj.velocity

    if max(abs(vx), abs(vy)) < DIRECTION_THRESHOLD:
        return None

    if abs(vx) >= abs(vy):
        return "left" if vx < 0 else "right"

    return "up" if vy < 0 else "down"


def solve(spec: scene.SceneSpec, predicate: Predicate):
    """
    Target ids of `predicate` on `spec`, or None when the answer is not unique
    """
    objects = spec.objects
    last = spec.frames - 1
    name = predicate.name

    if name == "color_shape":
        color, shape = predicate.argument.split()
        hits = [k for k, o in enumerate(objects) if o.color == color and o.shape == shape]
    elif name == "color":
        hits = [k for k, o in enumerate(objects) if o.color == predicate.argument]
    elif name == "shape":
        hits = [k for k, o in enumerate(objects) if o.shape == predicate.argument]
    elif name == "all_color":
        hits = [k for k, o in enumerate(objects) if o.color == predicate.argument]

        return tuple(hits) if len(hits) >= 2 else None
    elif name in ("largest", "smallest"):
        hit = _unique_extreme([o.size for o in objects], SIZE_MARGIN, name == "largest")
        hits = [] if hit is None else [hit]
    elif name in ("leftmost", "rightmost"):
        hit = _unique_extreme([o.position[0] for o in objects], POSITION_MARGIN, name == "rightmost")
        hits = [] if hit is None else [hit]
    elif name in ("topmost", "bottommost"):
        hit = _unique_extreme([o.position[1] for o in objects], POSITION_MARGIN, name == "bottommost")
        hits = [] if hit is None else [hit]
    elif name == "closest_center":
        center = (spec.width / 2.0, spec.height / 2.0)
        distances = [np.hypot(o.position[0] - center[0], o.position[1] - center[1]) for o in objects]
        hit = _unique_extreme(distances, SIZE_MARGIN, largest=False)
        hits = [] if hit is None else [hit]
    elif name == "moving":
        hits = [k for k, o in enumerate(objects) if _direction(o) == predicate.argument]
    elif name in ("fastest", "slowest"):
        speeds = [o.speed for o in objects]
        hit = _unique_extreme(speeds, SPEED_MARGIN, name == "fastest")
        hits = [] if hit is None or speeds[hit] == max(speeds) == 0.0 else [hit]
    elif name in ("ends_leftmost", "ends_rightmost"):
        final = [o.position_at(last)[0] for o in objects]
        hit = _unique_extreme(final, POSITION_MARGIN, name == "ends_rightmost")
        hits = [] if hit is None else [hit]
    else:
        raise ValueError(f"Unknown predicate `{name}`")

    return tuple(hits) if len(hits) == 1 else None


def prompt_text(predicate: Predicate):
    name = predicate.name
    argument = predicate.argument

    return {
        "color_shape": f"the {argument}",
        "color": f"the {argument} object",
        "shape": f"the {argument}",
        "all_color": f"all the {argument} objects",
        "largest": "which object is the largest",
        "smallest": "which object is the smallest",
        "leftmost": "which object is leftmost",
        "rightmost": "which object is rightmost",
        "topmost": "which object is topmost",
        "bottommost": "which object is bottommost",
        "closest_center": "which object is closest to the center of the canvas",
        "moving": f"which object is moving {argument}",
        "fastest": "which object moves fastest",
        "slowest": "which object moves slowest",
        "ends_leftmost": "which object is leftmost at the end",
        "ends_rightmost": "which object is rightmost at the end",
    }[name]


def candidate_predicates(spec: scene.SceneSpec, mode):
    if mode in (RES, RVOS):
        out = [Predicate("color_shape", f"{o.color} {o.shape}") for o in spec.objects]
        out += [Predicate("color", c) for c in sorted({o.color for o in spec.objects})]
        out += [Predicate("shape", s) for s in sorted({o.shape for o in spec.objects})]
        out += [Predicate("all_color", c) for c in sorted({o.color for o in spec.objects})]

        return out

    out = [Predicate(name) for name in ("largest", "smallest", "leftmost", "rightmost",
        "topmost", "bottommost", "closest_center")]

    if mode == REASON_VOS:
        out += [Predicate("moving", d) for d in ("left", "right", "up", "down")]
        out += [Predicate(name) for name in ("fastest", "slowest", "ends_leftmost", "ends_rightmost")]

    return out


def generate_instruction(spec: scene.SceneSpec, mode, rng, sample_id="0", rendered=None) -> InstructionSample:
    """
    Raises `SceneRejectedError` when no candidate prompt has a unique solution
    with a visible target
    """
    if mode not in MODES:
        raise ValueError(f"Unknown mode `{mode}`, expected one of {MODES}")

    if mode in VIDEO_MODES and spec.frames < 2:
        raise ValueError(f"Mode {mode} needs a clip with more than one frame")

    if mode not in VIDEO_MODES and spec.frames != 1:
        raise ValueError(f"Mode {mode} needs a single-frame scene")

    clip, masks = rendered if rendered is not None else scene.render(spec)
    valid = []

    for predicate in candidate_predicates(spec, mode):
        targets = solve(spec, predicate)

        if targets is None:
            continue

        if not all(masks[k].any() for k in targets):
            continue

        valid.append((predicate, targets))

    if not valid:
        raise SceneRejectedError(f"No uniquely identifying {mode} prompt for the scene")

    # Temporal questions are preferred for video reasoning when available
    if mode == REASON_VOS:
        temporal = [v for v in valid if v[0].name in ("moving", "fastest", "slowest", "ends_leftmost", "ends_rightmost")]
        valid = temporal if temporal and rng.random() < 0.7 else valid

    predicate, targets = valid[int(rng.integers(len(valid)))]
    answer = " and ".join(spec.objects[k].describe() for k in targets)

    return InstructionSample(
        sample_id=sample_id,
        mode=mode,
        clip=clip,
        prompt=prompt_text(predicate),
        answer=answer,
        target_ids=tuple(targets),
        gt_masks=masks[list(targets)],
        predicate=predicate,
        scene=spec,
    )
