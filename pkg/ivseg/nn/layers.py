"""
Attention, feed-forward and normalization blocks.

Blocks operate on token matrices `[n, d]`. Every residual block is pre-norm:
`x + sublayer(norm(x))`.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.nn.lora
import ivseg.nn.module as module


@dataclasses.dataclass
class AttentionConfig:
    model_dim: int
    heads: int

    def __post_init__(self):
        if self.model_dim < 1 or self.heads < 1:
            raise ValueError(f"Attention extents must be positive, got d={self.model_dim} heads={self.heads}")

        if self.model_dim % self.heads != 0:
            raise ValueError(f"Model width {self.model_dim} is not divisible by {self.heads} heads")

    @property
    def head_dim(self):
        return self.model_dim // self.heads


class Linear(module.Module):

    def __init__(self, in_dim, out_dim, rng, bias=True, init="xavier"):
        self.in_dim = in_dim
        self.out_dim = out_dim

        if init == "xavier":
            weight = module.xavier_normal(rng, in_dim, out_dim)
        elif init == "identity":
            if in_dim != out_dim:
                raise ValueError(f"Identity initialization needs a square map, got {in_dim}->{out_dim}")

            weight = np.eye(in_dim)
        elif init == "zeros":
            weight = np.zeros((in_dim, out_dim))
        else:
            raise ValueError(f"Unknown initialization `{init}`")

        self.weight = module.Parameter(weight)
        self.bias = module.Parameter(np.zeros(out_dim)) if bias else None
        self.lora = None

    def forward(self, x):
        out = tensor.matmul(x, self.weight)

        if self.bias is not None:
            out = out + self.bias

        if self.lora is not None:
            out = ivseg.nn.lora.lora_apply(out, x, self.lora)

        return out


class LayerNorm(module.Module):

    def __init__(self, dim, eps=1e-5):
        self.gain = module.Parameter(np.ones(dim))
        self.bias = module.Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return tensor.layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(module.Module):
    """
    softmax(QKᵀ/√head_dim)·V per head; heads are concatenated and mixed by
    `o_proj`. No positional information is added inside attention.
    """

    def __init__(self, cfg: AttentionConfig, rng, kv_dim=None):
        d = cfg.model_dim
        kv_dim = kv_dim or d
        self.cfg = cfg
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(kv_dim, d, rng)
        self.v_proj = Linear(kv_dim, d, rng)
        self.o_proj = Linear(d, d, rng)

    def _split_heads(self, x, n):
        return x.reshape(n, self.cfg.heads, self.cfg.head_dim).transpose(1, 0, 2)

    def forward(self, queries, keys_values, mask=None):
        """
        `mask[i, j]` is True when query `i` may see key `j`
        """
        nq = queries.shape[0]
        nk = keys_values.shape[0]

        if nk < 1:
            raise tensor.ShapeError("Attention needs at least one key/value row", keys_values.shape)

        q = self._split_heads(self.q_proj(queries), nq)
        k = self._split_heads(self.k_proj(keys_values), nk)
        v = self._split_heads(self.v_proj(keys_values), nk)
        scores = tensor.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.cfg.head_dim))
        weights = tensor.softmax(scores, axis=-1, mask=mask)
        context = tensor.matmul(weights, v).transpose(1, 0, 2).reshape(nq, self.cfg.model_dim)

        return self.o_proj(context)


class CrossAttentionBlock(module.Module):

    def __init__(self, cfg: AttentionConfig, rng, kv_dim=None):
        self.norm_q = LayerNorm(cfg.model_dim)
        self.norm_kv = LayerNorm(kv_dim or cfg.model_dim)
        self.attention = MultiHeadAttention(cfg, rng, kv_dim)

    def forward(self, x, keys_values, mask=None):
        return x + self.attention(self.norm_q(x), self.norm_kv(keys_values), mask)


class SelfAttentionBlock(module.Module):

    def __init__(self, cfg: AttentionConfig, rng):
        self.norm = LayerNorm(cfg.model_dim)
        self.attention = MultiHeadAttention(cfg, rng)

    def forward(self, x, mask=None):
        h = self.norm(x)

        return x + self.attention(h, h, mask)


class FeedForward(module.Module):

    def __init__(self, dim, rng, expansion=4):
        self.norm = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng)

    def forward(self, x):
        return x + self.fc2(tensor.gelu(self.fc1(self.norm(x))))
