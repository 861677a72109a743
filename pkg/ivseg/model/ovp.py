"""
Object-aware video perceiver.

Each reference frame is encoded by the frozen patch encoder, projected into
the language width and concatenated with the instruction embeddings. A fixed
set of learnable queries reads that context through `layers` perceiver layers
(cross-attention, then feed-forward). Frames are processed independently and
their query outputs are stacked along time.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.nn.encoders as encoders
import ivseg.nn.layers as layers
import ivseg.nn.module as module
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


@dataclasses.dataclass
class OvpConfig:
    n_queries: int = 8
    layers: int = 3
    model_dim: int = 128
    heads: int = 4

    def __post_init__(self):
        if self.n_queries < 1 or self.layers < 1:
            raise ValueError(f"Perceiver needs at least one query and one layer: {self}")

        layers.AttentionConfig(self.model_dim, self.heads)


@dataclasses.dataclass
class ReferenceTokens:
    tokens: tensor.Tensor  # [T_r · n_queries, d]
    frame_boundaries: list  # [(start, stop), ...], one per frame

    @staticmethod
    def empty(model_dim):
        return ReferenceTokens(tensor.Tensor(np.zeros((0, model_dim))), [])

    @property
    def n_frames(self):
        return len(self.frame_boundaries)

    def __len__(self):
        return self.tokens.shape[0]

    def frame_block(self, t):
        start, stop = self.frame_boundaries[t]

        return tensor.narrow(self.tokens, 0, start, stop - start)


class PerceiverLayer(module.Module):

    def __init__(self, cfg: OvpConfig, rng):
        attention = layers.AttentionConfig(cfg.model_dim, cfg.heads)
        self.cross = layers.CrossAttentionBlock(attention, rng)
        self.ffn = layers.FeedForward(cfg.model_dim, rng)

    def forward(self, queries, context):
        return self.ffn(self.cross(queries, context))


class ObjectAwareVideoPerceiver(module.Module):
    """
    `encoder` and `projection` are shared with the language model and are not
    registered as parameters of the perceiver
    """

    def __init__(self, cfg: OvpConfig, encoder: encoders.PatchEncoder, projection: layers.Linear, rng):
        self.cfg = cfg
        self._encoder = encoder
        self._projection = projection
        self.queries = module.Parameter(rng.normal(0.0, 0.02, (cfg.n_queries, cfg.model_dim)))
        self.layers = [PerceiverLayer(cfg, rng) for _ in range(cfg.layers)]
        self.norm = layers.LayerNorm(cfg.model_dim)

    def encode_frame(self, frame, text_embeds):
        context = tensor.concat([self._projection(self._encoder.encode(frame)), text_embeds], axis=0)
        q = self.queries

        for layer in self.layers:
            q = layer(q, context)

        return self.norm(q)

    def encode_reference(self, frames, text_embeds) -> ReferenceTokens:
        if text_embeds.shape[0] < 1:
            raise tensor.ShapeError("The perceiver needs at least one text embedding", text_embeds.shape)

        frames = list(frames)

        if len(frames) == 0:
            return ReferenceTokens.empty(self.cfg.model_dim)

        shape = np.shape(frames[0])

        for frame in frames:
            if np.shape(frame) != shape:
                raise tensor.ShapeError("Reference frames disagree in shape", shape, np.shape(frame))

        blocks = [self.encode_frame(frame, text_embeds) for frame in frames]
        n = self.cfg.n_queries
        boundaries = [(t * n, (t + 1) * n) for t in range(len(blocks))]

        return ReferenceTokens(tensor.concat(blocks, axis=0), boundaries)

    def encode_image_as_reference(self, image, text_embeds) -> ReferenceTokens:
        return self.encode_reference([image], text_embeds)
