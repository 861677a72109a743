"""
Toy language model co-decoding the four functional token groups.

The input sequence is laid out as

visual | reference | text | mask

Visibility (row attends to column):

- visual and reference rows see visual and reference columns;
- text rows see visual, reference, and text columns up to themselves;
- mask rows see everything, each other included.

Answer rows are the trailing text rows holding the teacher-forced answer
phrase during training. They are ordinary causal text rows; `E_d` is read
from the prompt rows only.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.data_processing.vector_index as vector_index
import ivseg.model.ovp as ovp
import ivseg.nn.encoders as encoders
import ivseg.nn.layers as layers
import ivseg.nn.lora as lora
import ivseg.nn.module as module
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

GROUPS = ("visual", "reference", "text", "mask")


@dataclasses.dataclass
class LlmConfig:
    vocab_size: int
    layers: int = 4
    model_dim: int = 128
    heads: int = 4
    n_mask_tokens: int = 16

    def __post_init__(self):
        if min(self.vocab_size, self.layers, self.n_mask_tokens) < 1:
            raise ValueError(f"Language model extents must be positive: {self}")

        layers.AttentionConfig(self.model_dim, self.heads)


@dataclasses.dataclass
class FunctionalSequence:
    embeddings: tensor.Tensor  # [S, d]
    layout: vector_index.SpanIndex
    vocab_size: int
    answer_length: int = 0
    """
    Trailing rows of the text span holding the answer phrase
    """

    @property
    def prompt_length(self):
        return len(self.layout["text"]) - self.answer_length


def visibility(layout: vector_index.SpanIndex):
    """
    Boolean `[S, S]`, `out[i, j]` is True when row `i` attends to column `j`
    """
    size = len(layout)
    context_stop = layout["reference"].stop
    text = layout["text"]
    mask = layout["mask"]
    out = np.zeros((size, size), dtype=bool)
    out[:context_stop, :context_stop] = True
    out[text.as_slice(), :context_stop] = True
    out[text.as_slice(), text.as_slice()] = np.tril(np.ones((len(text), len(text)), dtype=bool))
    out[mask.as_slice(), :] = True

    return out


class TransformerLayer(module.Module):

    def __init__(self, cfg: LlmConfig, rng):
        self.attention = layers.SelfAttentionBlock(layers.AttentionConfig(cfg.model_dim, cfg.heads), rng)
        self.ffn = layers.FeedForward(cfg.model_dim, rng)

    def forward(self, x, mask):
        return self.ffn(self.attention(x, mask))


class CoDecoder(module.Module):
    """
    `projection` is the vision-language map shared with the perceiver; it is
    not registered as a parameter of the decoder
    """

    def __init__(self, cfg: LlmConfig, projection: layers.Linear, rng):
        self.cfg = cfg
        self._projection = projection
        self.token_embedding = module.Parameter(rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.model_dim)))
        self.mask_tokens = module.Parameter(rng.normal(0.0, 0.02, (cfg.n_mask_tokens, cfg.model_dim)))
        self.layers = [TransformerLayer(cfg, rng) for _ in range(cfg.layers)]
        self.norm = layers.LayerNorm(cfg.model_dim)
        self.unembedding = layers.Linear(cfg.model_dim, cfg.vocab_size, rng)

    def enable_lora(self, rank, rng, scaling=1.0):
        """
        Freezes the transformer layers and attaches adapters to their query and
        value projections. Embeddings, mask tokens and the unembedding stay
        trainable.
        """
        attached = []

        for i, layer in enumerate(self.layers):
            attached += [f"layers.{i}.{name}" for name in lora.attach_lora(layer, rank, rng, scaling)]

        self.norm.freeze()
        log.info(CoDecoder.enable_lora, "attached", len(attached), "adapters")

        return attached

    def _check_ids(self, ids):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)

        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ValueError(f"Token id outside the vocabulary [0, {self.cfg.vocab_size}): {ids.tolist()}")

        return ids

    def embed_text(self, text_ids, offset=0):
        """
        Token embeddings plus the 1-D sinusoidal code of positions
        `offset .. offset + L`
        """
        ids = self._check_ids(text_ids)
        positions = encoders.sinusoidal_encoding_1d(offset + len(ids), self.cfg.model_dim)[offset:]

        return tensor.embedding(self.token_embedding, ids) + positions

    def build_sequence(self, visual, reference: ovp.ReferenceTokens, text_ids, answer_ids=()) -> FunctionalSequence:
        """
        `visual` is the encoder output `[P, enc_dim]`; it is projected here.
        `answer_ids`, when given, are appended to the text span for teacher
        forcing.
        """
        text_ids = self._check_ids(text_ids)
        answer_ids = self._check_ids(answer_ids)

        if text_ids.size == 0:
            raise ValueError("Text span must not be empty")

        text = self.embed_text(np.concatenate([text_ids, answer_ids]))
        projected = self._projection(visual)
        embeddings = tensor.concat([projected, reference.tokens, text, self.mask_tokens], axis=0)
        layout = vector_index.SpanIndex.from_lengths(
            visual=projected.shape[0],
            reference=len(reference),
            text=text.shape[0],
            mask=self.cfg.n_mask_tokens,
        )

        return FunctionalSequence(embeddings, layout, self.cfg.vocab_size, len(answer_ids))

    def co_decode(self, seq: FunctionalSequence) -> tensor.Tensor:
        mask = visibility(seq.layout)
        x = seq.embeddings

        for layer in self.layers:
            x = layer(x, mask)

        return self.norm(x)

    def extract_functional(self, outputs, seq: FunctionalSequence):
        """
        (E_d, E_m): output rows of the prompt part of the text span and of the
        mask span
        """
        layout = seq.layout

        if len(layout) != outputs.shape[0]:
            raise tensor.ShapeError("Layout does not cover the outputs", (len(layout),), outputs.shape)

        text = layout["text"]
        mask = layout["mask"]
        e_d = tensor.narrow(outputs, 0, text.start, seq.prompt_length)
        e_m = tensor.narrow(outputs, 0, mask.start, len(mask))

        return e_d, e_m

    def text_logits(self, outputs, seq: FunctionalSequence):
        """
        `[L, vocab]`; row i predicts text token i+1, the last row predicts the
        end of text
        """
        text = seq.layout["text"]

        if len(text) < 1:
            raise ValueError("Text span must not be empty")

        return self.unembedding(tensor.narrow(outputs, 0, text.start, len(text)))


def text_targets(text_ids, answer_ids, eos_id):
    """
    Next-token targets aligned with `text_logits` rows
    """
    full = list(text_ids) + list(answer_ids)

    return np.asarray(full[1:] + [eos_id], dtype=np.int64)
