"""
Patch-embedding visual encoders and fixed sinusoidal position encodings.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.nn.layers as layers
import ivseg.nn.module as module


def sinusoidal_encoding_1d(length, dim):
    """
    `[length, dim]`; even columns carry sines, odd columns cosines
    """
    position = np.arange(length)[:, None]
    frequency = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / max(1, dim)))
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(position * frequency)
    out[:, 1::2] = np.cos(position * frequency)[:, :dim // 2]

    return out


def sinusoidal_encoding_2d(rows, columns, dim):
    """
    `[rows·columns, dim]` in row-major patch order; the first half of the
    channels encodes the row, the second half the column
    """
    half = dim // 2
    row_code = sinusoidal_encoding_1d(rows, half)
    column_code = sinusoidal_encoding_1d(columns, dim - half)
    out = np.concatenate([
        np.repeat(row_code, columns, axis=0),
        np.tile(column_code, (rows, 1)),
    ], axis=1)

    return out


@dataclasses.dataclass
class PatchEncoderConfig:
    patch_size: int
    out_dim: int
    channels: int = 3
    frozen: bool = True

    def __post_init__(self):
        if self.patch_size < 1 or self.out_dim < 1 or self.channels < 1:
            raise ValueError(f"Patch encoder extents must be positive: {self}")


class PatchEncoder(module.Module):
    """
    Non-overlapping patches, flattened and linearly embedded, plus a 2-D
    sinusoidal position code. Stands in for a pre-trained visual backbone.
    """

    def __init__(self, cfg: PatchEncoderConfig, rng):
        self.cfg = cfg
        self.embed = layers.Linear(cfg.patch_size * cfg.patch_size * cfg.channels, cfg.out_dim, rng)

        if cfg.frozen:
            self.freeze()

    def grid_shape(self, frame_shape):
        if len(frame_shape) != 3 or frame_shape[2] != self.cfg.channels:
            raise tensor.ShapeError(f"Expected a [H, W, {self.cfg.channels}] frame", frame_shape)

        height, width, _ = frame_shape
        p = self.cfg.patch_size

        if height % p or width % p:
            raise tensor.ShapeError(f"Frame extents are not divisible by patch size {p}", frame_shape)

        return height // p, width // p

    def patchify(self, frame):
        frame = np.asarray(frame.data if isinstance(frame, tensor.Tensor) else frame)
        rows, columns = self.grid_shape(frame.shape)
        p = self.cfg.patch_size
        patches = frame.reshape(rows, p, columns, p, self.cfg.channels).transpose(0, 2, 1, 3, 4)

        return patches.reshape(rows * columns, p * p * self.cfg.channels)

    def encode(self, frame) -> tensor.Tensor:
        """
        `[H/p · W/p, out_dim]`
        """
        rows, columns = self.grid_shape(np.shape(frame.data if isinstance(frame, tensor.Tensor) else frame))
        patches = tensor.Tensor(self.patchify(frame), dtype=self.embed.weight.data.dtype)

        return self.embed(patches) + sinusoidal_encoding_2d(rows, columns, self.cfg.out_dim)

    def encode_grid(self, frame) -> tensor.Tensor:
        """
        `[H/p, W/p, out_dim]`
        """
        rows, columns = self.grid_shape(np.shape(frame.data if isinstance(frame, tensor.Tensor) else frame))

        return self.encode(frame).reshape(rows, columns, self.cfg.out_dim)
