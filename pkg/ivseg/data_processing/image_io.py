"""
Binary portable graymap ("P5") and pixmap ("P6") files, 8 bit.
"""

import re

import numpy as np


_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _to_bytes(values):
    values = np.asarray(values)

    if values.dtype == bool:
        return values.astype(np.uint8) * 255

    if np.issubdtype(values.dtype, np.floating):
        return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)

    return np.clip(values, 0, 255).astype(np.uint8)


def _write(path, magic, pixels):
    height, width = pixels.shape[:2]

    try:
        with open(path, "wb") as f:
            f.write(f"{magic}\n{width} {height}\n255\n".encode("ascii"))
            f.write(pixels.tobytes())
    except OSError as e:
        raise OSError(f"Can not write `{path}`: {e.strerror}") from e


def write_pgm(path, image):
    """
    `image` is [H, W]: bool masks map to {0, 255}, floats in [0, 1] are scaled
    """
    image = _to_bytes(image)

    if image.ndim != 2:
        raise ValueError(f"Graymap expects a 2-D array, got shape {image.shape}")

    _write(path, "P5", image)


def write_ppm(path, image):
    image = _to_bytes(image)

    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"Pixmap expects an [H, W, 3] array, got shape {image.shape}")

    _write(path, "P6", image)


def _read(path, expected_magic):
    with open(path, "rb") as f:
        content = f.read()

    match = _HEADER.match(content)

    if match is None or match.group(1).decode() != expected_magic:
        raise ValueError(f"`{path}` is not a binary {expected_magic} file")

    width, height, maxval = (int(match.group(i)) for i in (2, 3, 4))

    if maxval != 255:
        raise ValueError(f"`{path}`: only 8-bit files are supported, got maxval {maxval}")

    channels = 1 if expected_magic == "P5" else 3
    body = np.frombuffer(content[match.end():], dtype=np.uint8)

    if body.size != width * height * channels:
        raise ValueError(f"`{path}`: expected {width * height * channels} bytes of pixels, got {body.size}")

    return body.reshape((height, width) if channels == 1 else (height, width, 3))


def read_pgm(path):
    return _read(path, "P5")


def read_ppm(path):
    return _read(path, "P6")


def read_mask(path):
    return read_pgm(path) >= 128
