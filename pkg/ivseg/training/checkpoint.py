"""
Binary checkpoint, little-endian:

    magic "IVSG" | u32 version
    u32 length | UTF-8 config block (`key = value` lines)
    u64 step | u64 optimizer step
    u32 length | UTF-8 JSON of the trainer's bit generator state
    u32 tensor count
    per tensor: u16 name length | name | u8 dtype tag | u8 rank | u32 extents... | raw values

Parameter tensors are named `param.<name>`, optimizer moments `adam.m.<name>`
and `adam.v.<name>`.
"""

import dataclasses
import io
import json
import struct

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.config
import ivseg.data_processing.data_provider as data_provider
import ivseg.model.segmenter as segmenter
import ivseg.optimization.adamw as adamw
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

MAGIC = b"IVSG"
VERSION = 1
FILE_NAME = "checkpoint.ivsg"

_DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAG_OF = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


class CheckpointError(Exception):
    pass


@dataclasses.dataclass
class Checkpoint:
    config: ivseg.config.RunConfig
    parameters: dict  # name -> ndarray
    moments: adamw.Moments = dataclasses.field(default_factory=adamw.Moments)
    step: int = 0
    rng_state: dict = None

    @staticmethod
    def capture(model: segmenter.InstructedSegmenter, moments=None, step=0, rng=None):
        return Checkpoint(model.cfg, model.state_dict(), moments or adamw.Moments(), step,
            rng.bit_generator.state if rng is not None else None)

    def restore_model(self) -> segmenter.InstructedSegmenter:
        tensor.set_precision(self.config.precision)
        model = segmenter.InstructedSegmenter(self.config)
        model.load_state_dict(self.parameters)

        return model

    def restore_rng(self):
        rng = np.random.default_rng()

        if self.rng_state is not None:
            rng.bit_generator.state = self.rng_state

        return rng


def _write_bytes(f, fmt, *values):
    f.write(struct.pack("<" + fmt, *values))


def _write_blob(f, blob: bytes):
    _write_bytes(f, "I", len(blob))
    f.write(blob)


def _write_tensor(f, name, value):
    value = np.asarray(value)

    if value.dtype not in _TAG_OF:
        raise CheckpointError(f"Tensor `{name}` has unsupported dtype {value.dtype}")

    encoded = name.encode("utf-8")
    tag = _TAG_OF[value.dtype]
    _write_bytes(f, "H", len(encoded))
    f.write(encoded)
    _write_bytes(f, "BB", tag, value.ndim)

    if value.ndim:
        _write_bytes(f, f"{value.ndim}I", *value.shape)

    f.write(np.ascontiguousarray(value, dtype=_DTYPE_TAGS[tag]).tobytes())


def dumps(ckpt: Checkpoint) -> bytes:
    f = io.BytesIO()
    f.write(MAGIC)
    _write_bytes(f, "I", VERSION)
    config_text = "".join(f"{k} = {v}\n" for k, v in ckpt.config.to_rows())
    _write_blob(f, config_text.encode("utf-8"))
    _write_bytes(f, "QQ", ckpt.step, ckpt.moments.step)
    _write_blob(f, json.dumps(ckpt.rng_state).encode("utf-8"))
    tensors = [("param." + k, v) for k, v in ckpt.parameters.items()]
    tensors += [("adam.m." + k, v) for k, v in ckpt.moments.first.items()]
    tensors += [("adam.v." + k, v) for k, v in ckpt.moments.second.items()]
    _write_bytes(f, "I", len(tensors))

    for name, value in tensors:
        _write_tensor(f, name, value)

    return f.getvalue()


class _Reader:

    def __init__(self, blob, origin):
        self.blob = blob
        self.position = 0
        self.origin = origin

    def take(self, n):
        if self.position + n > len(self.blob):
            raise CheckpointError(f"`{self.origin}` is truncated at byte {self.position}")

        out = self.blob[self.position:self.position + n]
        self.position += n

        return out

    def unpack(self, fmt):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))

        return values if len(values) > 1 else values[0]

    def blob_field(self):
        return self.take(self.unpack("I"))


def loads(blob: bytes, origin="<bytes>") -> Checkpoint:
    reader = _Reader(blob, origin)

    if reader.take(4) != MAGIC:
        raise CheckpointError(f"`{origin}` is not a checkpoint")

    version = reader.unpack("I")

    if version != VERSION:
        raise CheckpointError(f"`{origin}` has format version {version}, expected {VERSION}")

    rows = data_provider.parse_key_value_lines(reader.blob_field().decode("utf-8").splitlines(), origin)
    config = ivseg.config.RunConfig.from_rows(rows)
    step, adam_step = reader.unpack("QQ")
    rng_state = json.loads(reader.blob_field().decode("utf-8"))
    parameters = dict()
    moments = adamw.Moments(step=adam_step)

    for _ in range(reader.unpack("I")):
        name = reader.take(reader.unpack("H")).decode("utf-8")
        tag, rank = reader.unpack("BB")

        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"`{origin}`: tensor `{name}` has an unknown dtype tag {tag}")

        shape = tuple(np.atleast_1d(reader.unpack(f"{rank}I"))) if rank else ()
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape, dtype=np.int64))
        value = np.frombuffer(reader.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
        value = value.astype(dtype.newbyteorder("="))

        if name.startswith("param."):
            parameters[name[len("param."):]] = value
        elif name.startswith("adam.m."):
            moments.first[name[len("adam.m."):]] = value
        elif name.startswith("adam.v."):
            moments.second[name[len("adam.v."):]] = value
        else:
            raise CheckpointError(f"`{origin}`: unexpected tensor `{name}`")

    return Checkpoint(config, parameters, moments, step, rng_state)


def save(path, ckpt: Checkpoint):
    try:
        with open(path, "wb") as f:
            f.write(dumps(ckpt))
    except OSError as e:
        raise OSError(f"Can not write checkpoint `{path}`: {e.strerror}") from e

    log.info(save, "step", ckpt.step, "->", path)


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return loads(f.read(), str(path))
