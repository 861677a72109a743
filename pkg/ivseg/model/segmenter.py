"""
End-to-end instructed segmenter.

For a key frame V of a clip and an instruction:

1. the perceiver compresses the reference frames (or, for images, the image
   itself) jointly with the instruction embeddings into Q_r;
2. the language model co-decodes [F_p(f_v) | Q_r | text | mask] and yields the
   detailed text embeddings E_d and the mask embeddings E_m;
3. the pixel decoder lifts the fine-grained features f_img; text fusion turns
   E_d and the coarsest pixel scale into E_v;
4. the segmentation decoder predicts N proposals and scores from E_m and E_v.
"""

import dataclasses

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.model.codecoder as codecoder
import ivseg.model.ovp as ovp
import ivseg.model.segdec as segdec
import ivseg.model.vmtf as vmtf
import ivseg.nn.encoders as encoders
import ivseg.nn.layers as layers
import ivseg.nn.module as module
import ivseg.optimization.losses as losses
import ivseg.synthdata.vocabulary as vocabulary
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


def reference_indices(n_frames, key, t_r):
    """
    `t_r` frame indices spread uniformly over the clip without the key frame,
    the first remaining frame always included. Indices repeat when the clip is
    shorter than `t_r`.
    """
    if not (0 <= key < n_frames):
        raise IndexError(f"Key frame {key} outside a {n_frames}-frame clip")

    pool = [t for t in range(n_frames) if t != key]

    if t_r == 0 or not pool:
        return []

    positions = np.round(np.linspace(0, len(pool) - 1, t_r)).astype(int)

    return [pool[p] for p in positions]


@dataclasses.dataclass
class SegmenterOutput:
    mask_set: segdec.MaskSet
    text_logits: tensor.Tensor
    sequence: codecoder.FunctionalSequence
    text: vmtf.MultiGranularityText


class InstructedSegmenter(module.Module):

    def __init__(self, cfg, rng=None, vocab: vocabulary.Vocabulary = vocabulary.VOCABULARY):
        """
        `cfg` is a `RunConfig`
        """
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self._vocab = vocab
        self.clip_encoder = encoders.PatchEncoder(encoders.PatchEncoderConfig(cfg.patch_size, cfg.encoder_dim), rng)
        self.fine_encoder = encoders.PatchEncoder(encoders.PatchEncoderConfig(cfg.patch_size, cfg.image_feature_dim),
            rng)
        self.projection = layers.Linear(cfg.encoder_dim, cfg.model_dim, rng)
        self.ovp = ovp.ObjectAwareVideoPerceiver(
            ovp.OvpConfig(n_queries=cfg.n_queries, layers=cfg.ovp_layers, model_dim=cfg.model_dim, heads=cfg.heads),
            self.clip_encoder, self.projection, rng)
        self.llm = codecoder.CoDecoder(
            codecoder.LlmConfig(vocab_size=len(vocab), layers=cfg.llm_layers, model_dim=cfg.model_dim,
                heads=cfg.heads, n_mask_tokens=cfg.n_mask_tokens),
            self.projection, rng)
        self.vmtf = vmtf.TextFusion(vmtf.VmtfConfig(layers=cfg.vmtf_layers, model_dim=cfg.model_dim, heads=cfg.heads,
            image_dim=cfg.pixel_dim, mode=cfg.fusion_mode), rng)
        self.decoder = segdec.SegmentationDecoder(segdec.DecoderConfig(
            image_size=cfg.image_size,
            feature_stride=cfg.patch_size,
            image_dim=cfg.image_feature_dim,
            pixel_dim=cfg.pixel_dim,
            model_dim=cfg.model_dim,
            heads=cfg.heads,
            decoder_layers=cfg.decoder_layers,
            similarity=cfg.similarity,
            score_pooling=cfg.score_pooling,
        ), rng)

        if cfg.lora_mode:
            self.llm.enable_lora(cfg.lora_rank, rng, cfg.lora_scaling)

    @property
    def vocab(self):
        return self._vocab

    def reference(self, clip, key, text_embeds, video=True) -> ovp.ReferenceTokens:
        if not self.cfg.ovp_enabled:
            return ovp.ReferenceTokens.empty(self.cfg.model_dim)

        if not video:
            return self.ovp.encode_image_as_reference(clip[key], text_embeds)

        frames = [clip[t] for t in reference_indices(len(clip), key, self.cfg.t_r)]

        return self.ovp.encode_reference(frames, text_embeds)

    def forward(self, clip, text_ids, key=0, answer_ids=(), video=True) -> SegmenterOutput:
        """
        `clip` is `[T, H, W, 3]`; `answer_ids` are appended for teacher forcing
        """
        frame = clip[key]
        reference = self.reference(clip, key, self.llm.embed_text(text_ids), video)
        seq = self.llm.build_sequence(self.clip_encoder.encode(frame), reference, text_ids, answer_ids)
        outputs = self.llm.co_decode(seq)
        e_d, e_m = self.llm.extract_functional(outputs, seq)
        f_img = self.fine_encoder.encode_grid(frame)
        pixels = self.decoder.pixel_decode(f_img)

        if self.cfg.vmtf_enabled:
            text = self.vmtf.fuse(e_d, pixels.coarse)
        else:
            text = vmtf.MultiGranularityText(vmtf.global_pool(e_d), "global")

        mask_set = self.decoder.predict(f_img, text, e_m, pixels)

        return SegmenterOutput(mask_set, self.llm.text_logits(outputs, seq), seq, text)

    def loss(self, sample, key, weights: losses.LossWeights = None):
        """
        `(loss Tensor, LossReport)` of `sample` on frame `key`. Targets hidden
        on that frame are left out of the assignment.
        """
        text_ids = sample.text_ids(self._vocab)
        answer_ids = sample.answer_ids(self._vocab)
        out = self.forward(sample.clip, text_ids, key, answer_ids, sample.is_video)
        targets = codecoder.text_targets(text_ids, answer_ids, self._vocab.eos_id)
        gt = sample.gt_masks[:, key]
        gt = gt[gt.reshape(gt.shape[0], -1).any(axis=1)]

        return losses.total_loss(out.text_logits, targets, out.mask_set, gt, weights)

    def predict_frame(self, sample, key):
        with tensor.no_grad():
            out = self.forward(sample.clip, sample.text_ids(self._vocab), key, (), sample.is_video)

        tensor.reset_graph()

        return segdec.select_final(out.mask_set, self.cfg.score_threshold)

    def predict_clip(self, sample):
        """
        `[T, H, W]` bool, each frame segmented with the rest of the clip as
        reference
        """
        return np.stack([self.predict_frame(sample, t) for t in range(sample.frames)])


def loss_weights(cfg) -> losses.LossWeights:
    return losses.LossWeights(cls=cfg.lambda_cls, mask=cfg.lambda_mask, bce=cfg.lambda_b, dice=cfg.lambda_d)
