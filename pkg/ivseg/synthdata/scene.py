"""
Moving-shape scenes and their rasterization.

Objects are circles, squares (half side = size) and upward triangles (apex
`size` above the center, base `size` below it, half base = size). Rendering
tests pixel centers, paints objects in list order so that later objects occlude
earlier ones, and reports each object's visible region. Hard scenes overlap but
keep at least `MIN_VISIBLE_FRACTION` of every object visible on every frame.
"""

import dataclasses
import itertools

import numpy as np

import ivseg.synthdata.vocabulary as vocabulary
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
}
BACKGROUND = (0.0, 0.0, 0.0)

DIFFICULTIES = {
    # name: (object count, moving)
    "easy": (2, False),
    "medium": (3, True),
    "hard": (4, True),
}

MIN_SIZE_FRACTION = 0.09
MAX_SIZE_FRACTION = 0.2
MAX_SPEED_FRACTION = 0.08  # px per frame, relative to the canvas width
MIN_SEPARATION = 1.0  # px between shape extents, medium scenes only
MIN_VISIBLE_FRACTION = 0.6  # of every object's own coverage, on every frame
_PLACEMENT_RETRIES = 200


class SceneRejectedError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: float
    position: tuple  # (x, y) at frame 0
    velocity: tuple  # (vx, vy) px / frame

    def position_at(self, t):
        return (self.position[0] + self.velocity[0] * t, self.position[1] + self.velocity[1] * t)

    @property
    def speed(self):
        return float(np.hypot(*self.velocity))

    def describe(self):
        return f"the {self.color} {self.shape}"


@dataclasses.dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    frames: int
    height: int
    width: int
    difficulty: str = "easy"

    def __post_init__(self):
        if len(self.objects) < 2:
            raise ValueError("A scene needs at least two objects")

        attributes = [(o.shape, o.color) for o in self.objects]

        if len(set(attributes)) != len(attributes):
            raise ValueError(f"Object attribute pairs are not distinct: {attributes}")


def _inside(position, size, height, width):
    x, y = position

    return size <= x <= width - size and size <= y <= height - size


def _velocity_bounds(coordinate, size, extent, frames, max_speed):
    """
    Velocity interval keeping the object fully inside `[0, extent]` on every
    frame
    """
    if frames <= 1:
        return 0.0, 0.0

    low = (size - coordinate) / (frames - 1)
    high = (extent - size - coordinate) / (frames - 1)

    return max(low, -max_speed), min(high, max_speed)


def _overlap(a: SceneObject, b: SceneObject, frames, margin=0.0):
    for t in range(frames):
        (xa, ya), (xb, yb) = a.position_at(t), b.position_at(t)

        if max(abs(xa - xb), abs(ya - yb)) < a.size + b.size + margin:
            return True

    return False


def generate_scene(seed, difficulty="easy", frames=4, height=32, width=32) -> SceneSpec:
    """
    Pure function of its arguments. Raises `SceneRejectedError` when no draw
    satisfies the placement constraints within the retry limit.
    """
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"Unknown difficulty `{difficulty}`, expected one of {sorted(DIFFICULTIES)}")

    rng = np.random.default_rng(seed)
    count, moving = DIFFICULTIES[difficulty]
    pairs = list(itertools.product(vocabulary.SHAPES, vocabulary.COLORS))
    chosen = [pairs[i] for i in rng.choice(len(pairs), size=count, replace=False)]
    side = min(height, width)
    max_speed = MAX_SPEED_FRACTION * width if moving else 0.0

    for _ in range(_PLACEMENT_RETRIES):
        objects = []

        for shape, color in chosen:
            size = float(rng.integers(int(np.ceil(MIN_SIZE_FRACTION * side)), int(MAX_SIZE_FRACTION * side) + 1))
            x = float(rng.uniform(size, width - size))
            y = float(rng.uniform(size, height - size))
            vx_low, vx_high = _velocity_bounds(x, size, width, frames, max_speed)
            vy_low, vy_high = _velocity_bounds(y, size, height, frames, max_speed)
            vx = float(np.round(rng.uniform(vx_low, vx_high), 2)) if moving else 0.0
            vy = float(np.round(rng.uniform(vy_low, vy_high), 2)) if moving else 0.0
            objects.append(SceneObject(shape, color, size, (x, y), (vx, vy)))

        if not all(_inside(o.position_at(t), o.size, height, width) for o in objects for t in range(frames)):
            continue

        overlaps = [_overlap(a, b, frames, MIN_SEPARATION) for a, b in itertools.combinations(objects, 2)]

        if difficulty == "hard" and not any(overlaps):
            continue

        if difficulty != "hard" and any(overlaps):
            continue

        spec = SceneSpec(tuple(objects), frames, height, width, difficulty)

        if difficulty == "hard" and visible_fractions(spec).min() < MIN_VISIBLE_FRACTION:
            continue

        return spec

    raise SceneRejectedError(f"No {difficulty} placement of {count} objects on {height}x{width} after "
        f"{_PLACEMENT_RETRIES} draws (seed {seed})")


def coverage(obj: SceneObject, t, height, width):
    """
    Pixel-center coverage of `obj` on frame `t`, ignoring occlusion
    """
    cx, cy = obj.position_at(t)
    py, px = np.mgrid[0:height, 0:width] + 0.5
    dx = px - cx
    dy = py - cy

    if obj.shape == "circle":
        return dx * dx + dy * dy <= obj.size * obj.size

    if obj.shape == "square":
        return (np.abs(dx) <= obj.size) & (np.abs(dy) <= obj.size)

    if obj.shape == "triangle":
        return (dy >= -obj.size) & (dy <= obj.size) & (np.abs(dx) <= (dy + obj.size) / 2.0)

    raise ValueError(f"Unknown shape `{obj.shape}`")


def render(spec: SceneSpec):
    """
    Returns `(clip [T, H, W, 3] float in [0, 1], masks [objects, T, H, W] bool)`
    """
    clip = np.empty((spec.frames, spec.height, spec.width, 3))
    clip[...] = BACKGROUND
    labels = np.full((spec.frames, spec.height, spec.width), -1, dtype=np.int64)

    for t in range(spec.frames):
        for k, obj in enumerate(spec.objects):
            covered = coverage(obj, t, spec.height, spec.width)
            labels[t][covered] = k
            clip[t][covered] = PALETTE[obj.color]

    masks = np.stack([labels == k for k in range(len(spec.objects))])

    return clip, masks


def visible_fractions(spec: SceneSpec):
    """
    `[objects, T]` share of each object's own coverage left visible after
    occlusion
    """
    _, masks = render(spec)
    full = np.stack([[coverage(o, t, spec.height, spec.width) for t in range(spec.frames)] for o in spec.objects])

    return masks.sum(axis=(2, 3)) / np.maximum(full.sum(axis=(2, 3)), 1)
