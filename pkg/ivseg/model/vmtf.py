"""
Vision-guided multi-granularity text fusion.

The detailed text embeddings E_d are mean-pooled into a global embedding E_g.
The queries `concat(E_g, E_d)` then read `concat(project(f_img), E_g)` through
`layers` rounds of cross-attention and feed-forward, yielding E_v, the text
side of the mask classifier.
"""

import dataclasses

import ivseg.autograd.tensor as tensor
import ivseg.nn.layers as layers
import ivseg.nn.module as module


FUSION_MODES = ("both", "global", "detailed")


@dataclasses.dataclass
class VmtfConfig:
    layers: int = 3
    model_dim: int = 128
    heads: int = 4
    image_dim: int = 64
    mode: str = "both"

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"Fusion needs at least one layer: {self}")

        if self.mode not in FUSION_MODES:
            raise ValueError(f"Unknown fusion mode `{self.mode}`, expected one of {FUSION_MODES}")

        layers.AttentionConfig(self.model_dim, self.heads)


@dataclasses.dataclass
class MultiGranularityText:
    embeds: tensor.Tensor
    mode: str = "both"
    """
    "both": row 0 global, rows 1..L detailed; "global": the single global row;
    "detailed": the L detailed rows
    """

    def __len__(self):
        return self.embeds.shape[0]


def global_pool(e_d):
    if e_d.shape[0] < 1:
        raise tensor.ShapeError("Pooling needs at least one text row", e_d.shape)

    return tensor.mean(e_d, axis=0, keepdims=True)


class FusionLayer(module.Module):

    def __init__(self, cfg: VmtfConfig, rng):
        self.cross = layers.CrossAttentionBlock(layers.AttentionConfig(cfg.model_dim, cfg.heads), rng)
        self.ffn = layers.FeedForward(cfg.model_dim, rng)

    def forward(self, queries, context):
        return self.ffn(self.cross(queries, context))


class TextFusion(module.Module):

    def __init__(self, cfg: VmtfConfig, rng):
        self.cfg = cfg
        self.image_projection = layers.Linear(cfg.image_dim, cfg.model_dim, rng)
        self.layers = [FusionLayer(cfg, rng) for _ in range(cfg.layers)]

    def queries(self, e_d, e_g):
        if self.cfg.mode == "global":
            return e_g

        if self.cfg.mode == "detailed":
            return e_d

        return tensor.concat([e_g, e_d], axis=0)

    def fuse(self, e_d, f_img, e_g=None) -> MultiGranularityText:
        """
        `f_img` is `[P, image_dim]`. `e_g` overrides the pooled embedding.
        """
        if f_img.shape[0] < 1:
            raise tensor.ShapeError("Fusion needs at least one image row", f_img.shape)

        e_g = global_pool(e_d) if e_g is None else e_g
        context = tensor.concat([self.image_projection(f_img), e_g], axis=0)
        q = self.queries(e_d, e_g)

        for layer in self.layers:
            q = layer(q, context)

        return MultiGranularityText(q, self.cfg.mode)
