"""
Segmentation decoder.

The pixel decoder lifts the fine-grained feature grid to full resolution by
repeated ×2 bilinear upsampling, each followed by a 3×3 convolution and GELU.
The mask decoder refines the N mask embeddings against pooled pixel tokens.
Proposal masks are sigmoid dot products between refined embeddings and the
per-pixel map; proposal scores compare the refined embeddings with the
multi-granularity text rows.
"""

import dataclasses

import numpy as np
import scipy.special

import ivseg.autograd.tensor as tensor
import ivseg.model.vmtf as vmtf
import ivseg.nn.layers as layers
import ivseg.nn.module as module
import ivseg.nn.spatial as spatial


@dataclasses.dataclass
class DecoderConfig:
    image_size: int = 32
    feature_stride: int = 8
    image_dim: int = 64
    pixel_dim: int = 64
    model_dim: int = 128
    heads: int = 4
    decoder_layers: int = 3
    pool_factor: int = 4
    similarity: str = "dot"
    score_pooling: str = "max"
    conv_init: str = "xavier"

    def __post_init__(self):
        stride = self.feature_stride

        if stride < 1 or stride & (stride - 1):
            raise ValueError(f"Feature stride {stride} is not a power of two")

        if self.image_size % stride:
            raise ValueError(f"Feature stride {stride} does not divide image size {self.image_size}")

        if self.image_size % self.pool_factor:
            raise ValueError(f"Pooling factor {self.pool_factor} does not divide image size {self.image_size}")

        if self.similarity not in ("dot", "cosine"):
            raise ValueError(f"Unknown similarity `{self.similarity}`")

        if self.score_pooling not in ("max", "mean"):
            raise ValueError(f"Unknown score pooling `{self.score_pooling}`")

        if min(self.pixel_dim, self.decoder_layers) < 1:
            raise ValueError(f"Decoder extents must be positive: {self}")

        layers.AttentionConfig(self.model_dim, self.heads)

    @property
    def upsample_stages(self):
        return [2] * int(np.log2(self.feature_stride))


@dataclasses.dataclass
class PixelFeatures:
    pixel_map: tensor.Tensor  # [H, W, pixel_dim]
    coarse: tensor.Tensor  # [h·w, pixel_dim], the coarsest scale, flattened


@dataclasses.dataclass
class MaskSet:
    mask_logits: tensor.Tensor  # [N, H, W]
    score_logits: tensor.Tensor  # [N]
    final_mask: np.ndarray = None

    @property
    def masks(self):
        return tensor.sigmoid(self.mask_logits)

    @property
    def scores(self):
        return tensor.sigmoid(self.score_logits)

    def __len__(self):
        return self.score_logits.shape[0]


class PixelDecoder(module.Module):

    def __init__(self, cfg: DecoderConfig, rng):
        self.cfg = cfg
        self.input_projection = layers.Linear(cfg.image_dim, cfg.pixel_dim, rng)
        self.convs = [spatial.Conv3x3(cfg.pixel_dim, cfg.pixel_dim, rng, cfg.conv_init)
            for _ in cfg.upsample_stages]

    def forward(self, f_img) -> PixelFeatures:
        """
        `f_img` is the `[h, w, image_dim]` grid at stride `feature_stride`
        """
        rows, columns = f_img.shape[0], f_img.shape[1]
        expected = self.cfg.image_size // self.cfg.feature_stride

        if f_img.ndim != 3 or (rows, columns) != (expected, expected):
            raise tensor.ShapeError(f"Feature grid does not match stride {self.cfg.feature_stride}"
                f" on a {self.cfg.image_size}px canvas", f_img.shape)

        x = self.input_projection(f_img)
        coarse = x.reshape(rows * columns, self.cfg.pixel_dim)

        for conv in self.convs:
            x = tensor.gelu(conv(spatial.upsample2x(x)))

        return PixelFeatures(x, coarse)


class MaskDecoderLayer(module.Module):

    def __init__(self, cfg: DecoderConfig, rng):
        attention = layers.AttentionConfig(cfg.model_dim, cfg.heads)
        self.cross = layers.CrossAttentionBlock(attention, rng)
        self.self_attention = layers.SelfAttentionBlock(attention, rng)
        self.ffn = layers.FeedForward(cfg.model_dim, rng)

    def forward(self, x, pixel_tokens):
        return self.ffn(self.self_attention(self.cross(x, pixel_tokens)))


class SegmentationDecoder(module.Module):

    def __init__(self, cfg: DecoderConfig, rng):
        self.cfg = cfg
        self.pixel_decoder = PixelDecoder(cfg, rng)
        self.pixel_projection = layers.Linear(cfg.pixel_dim, cfg.model_dim, rng)
        self.layers = [MaskDecoderLayer(cfg, rng) for _ in range(cfg.decoder_layers)]
        self.output = layers.Linear(cfg.model_dim, cfg.pixel_dim, rng)
        self.score_projection = layers.Linear(cfg.pixel_dim, cfg.model_dim, rng)

    def pixel_decode(self, f_img) -> PixelFeatures:
        return self.pixel_decoder(f_img)

    def refine_mask_embeddings(self, e_m, pixel_map):
        """
        `[N, pixel_dim]`
        """
        pooled = spatial.avg_pool(pixel_map, self.cfg.pool_factor)
        pixel_tokens = self.pixel_projection(pooled.reshape(pooled.shape[0] * pooled.shape[1], self.cfg.pixel_dim))
        x = e_m

        for layer in self.layers:
            x = layer(x, pixel_tokens)

        return self.output(x)

    def mask_logits(self, refined, pixel_map):
        height, width, _ = pixel_map.shape
        flat = pixel_map.reshape(height * width, self.cfg.pixel_dim)
        logits = tensor.matmul(flat, refined.transpose(1, 0)) * (1.0 / np.sqrt(self.cfg.pixel_dim))

        return logits.transpose(1, 0).reshape(refined.shape[0], height, width)

    def score_logits(self, refined, text: vmtf.MultiGranularityText):
        """
        `[N]`, pooled similarity between the projected refined embeddings and
        the rows of E_v
        """
        projected = self.score_projection(refined)
        rows = text.embeds

        if self.cfg.similarity == "cosine":
            projected = projected / tensor.sqrt(tensor.sum(projected * projected, axis=1, keepdims=True) + 1e-12)
            rows = rows / tensor.sqrt(tensor.sum(rows * rows, axis=1, keepdims=True) + 1e-12)
            similarity = tensor.matmul(projected, rows.transpose(1, 0))
        else:
            similarity = tensor.matmul(projected, rows.transpose(1, 0)) * (1.0 / np.sqrt(self.cfg.model_dim))

        if self.cfg.score_pooling == "mean":
            return tensor.mean(similarity, axis=1)

        return tensor.max(similarity, axis=1)

    def predict(self, f_img, text: vmtf.MultiGranularityText, e_m, pixels: PixelFeatures = None) -> MaskSet:
        """
        `pixels` reuses an earlier `pixel_decode(f_img)`
        """
        pixels = pixels or self.pixel_decode(f_img)
        refined = self.refine_mask_embeddings(e_m, pixels.pixel_map)

        return MaskSet(self.mask_logits(refined, pixels.pixel_map), self.score_logits(refined, text))


def select_final(ms: MaskSet, tau=0.5):
    """
    Union of the proposals scoring above `tau`, binarized at 0.5; the best
    scoring proposal (lowest index on ties) when none does
    """
    scores = scipy.special.expit(ms.score_logits.data)
    masks = ms.mask_logits.data > 0.0
    selected = np.flatnonzero(scores > tau)

    if selected.size == 0:
        selected = [int(np.argmax(scores))]

    ms.final_mask = np.any(masks[selected], axis=0)

    return ms.final_mask
