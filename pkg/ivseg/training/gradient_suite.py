"""
Central-difference gradient suite over every block family.

Each case builds, from a generator, a scalar function and the grad-enabled
tensors it reads. Outputs are scalarized against a fixed random projection so
that every output entry contributes. The suite runs in double precision.
"""

import numpy as np
import pandas

import ivseg.autograd.gradient_check as gradient_check
import ivseg.autograd.tensor as tensor
import ivseg.config
import ivseg.model.codecoder as codecoder
import ivseg.model.ovp as ovp
import ivseg.model.segdec as segdec
import ivseg.model.segmenter as segmenter
import ivseg.model.vmtf as vmtf
import ivseg.nn.encoders as encoders
import ivseg.nn.layers as layers
import ivseg.nn.lora as lora
import ivseg.nn.spatial as spatial
import ivseg.optimization.losses as losses
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)


class GradientSuiteError(Exception):

    def __init__(self, failures: pandas.DataFrame):
        cases = sorted(set(f"{m}.{c}" for m, c in zip(failures["module"], failures["case"])))
        Exception.__init__(self, f"{len(failures)} gradient check instance(s) failed in {cases}")
        self.failures = failures


def _leaf(rng, *shape, scale=1.0):
    return tensor.Tensor(rng.normal(0.0, scale, shape), grad_enabled=True)


def _projector(rng, shape):
    weights = tensor.Tensor(rng.normal(0.0, 1.0, shape))

    return lambda out: tensor.sum(out * weights)


def _module_case(block, rng, forward, out_shape):
    """
    Checks every trainable parameter of `block` through `forward()`
    """
    project = _projector(rng, out_shape)
    params = [p for name, p in block.named_parameters() if p.trainable]

    return (lambda: project(forward())), params


# Tensor operations


def case_matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 2)
    project = _projector(rng, (2, 3, 2))

    return (lambda: project(tensor.matmul(a, b))), [a, b]


def case_elementwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    c = tensor.Tensor(np.abs(rng.normal(1.0, 0.2, (3, 4))) + 0.5, grad_enabled=True)
    project = _projector(rng, (3, 4))

    def f():
        x = tensor.gelu(a) * tensor.sigmoid(b) + tensor.exp(a * 0.3) / c
        x = x - tensor.log_(c) + tensor.relu(a - 0.1) + tensor.softplus(b) + tensor.sqrt(c)

        return project(-x)

    return f, [a, b, c]


def case_softmax(rng):
    x = _leaf(rng, 3, 5, scale=2.0)
    mask = rng.random((3, 5)) < 0.8
    mask[:, 0] = True
    project = _projector(rng, (3, 5))

    return (lambda: project(tensor.softmax(x, axis=-1, mask=mask) + tensor.log_softmax(x, axis=0))), [x]


def case_layer_norm(rng):
    x, gain, bias = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    project = _projector(rng, (3, 6))

    return (lambda: project(tensor.layer_norm(x, gain, bias))), [x, gain, bias]


def case_reductions(rng):
    x = _leaf(rng, 3, 4)
    table = _leaf(rng, 5, 4)
    ids = rng.integers(0, 5, 3)

    def f():
        joined = tensor.concat([x, tensor.embedding(table, ids)], axis=0)
        part = tensor.narrow(joined, 0, 1, 4).transpose(1, 0).reshape(2, 8)

        return tensor.sum(tensor.max(part, axis=1)) + tensor.mean(joined[2:5] * joined[0:3])

    return f, [x, table]


# Building blocks


def case_attention(rng):
    cfg = layers.AttentionConfig(8, 2)
    block = layers.CrossAttentionBlock(cfg, rng)
    queries, keys_values = tensor.Tensor(rng.normal(size=(3, 8))), tensor.Tensor(rng.normal(size=(5, 8)))

    return _module_case(block, rng, lambda: block(queries, keys_values), (3, 8))


def case_feed_forward(rng):
    block = layers.FeedForward(6, rng, expansion=2)
    x = tensor.Tensor(rng.normal(size=(4, 6)))

    return _module_case(block, rng, lambda: block(x), (4, 6))


def case_lora(rng):
    base = layers.Linear(6, 5, rng)
    base.lora = lora.LoraAdapter(6, 5, 2, rng)
    base.lora.up.data = rng.normal(0.0, 0.5, base.lora.up.shape)
    base.weight.freeze()
    base.bias.freeze()
    x = tensor.Tensor(rng.normal(size=(3, 6)))

    return _module_case(base, rng, lambda: base(x), (3, 5))


def case_pixel_stack(rng):
    conv = spatial.Conv3x3(3, 2, rng)
    grid = _leaf(rng, 2, 2, 3)
    project = _projector(rng, (2, 2, 2))

    def f():
        return project(spatial.avg_pool(tensor.gelu(conv(spatial.upsample2x(grid))), 2))

    return f, [grid, conv.weight, conv.bias]


def case_patch_encoder(rng):
    encoder = encoders.PatchEncoder(encoders.PatchEncoderConfig(2, 4, frozen=False), rng)
    frame = rng.random((4, 4, 3))

    return _module_case(encoder, rng, lambda: encoder.encode(frame), (4, 4))


# Model blocks


def _tiny_ovp(rng):
    encoder = encoders.PatchEncoder(encoders.PatchEncoderConfig(4, 6), rng)
    projection = layers.Linear(6, 8, rng)
    perceiver = ovp.ObjectAwareVideoPerceiver(ovp.OvpConfig(n_queries=2, layers=1, model_dim=8, heads=2), encoder,
        projection, rng)

    return perceiver, projection


def case_ovp(rng):
    perceiver, projection = _tiny_ovp(rng)
    frames = [rng.random((8, 8, 3)) for _ in range(2)]
    text = tensor.Tensor(rng.normal(size=(3, 8)))
    project = _projector(rng, (4, 8))
    params = [perceiver.queries, perceiver.layers[0].cross.attention.k_proj.weight, projection.weight]

    return (lambda: project(perceiver.encode_reference(frames, text).tokens)), params


def _tiny_llm(rng, vocab_size=12):
    projection = layers.Linear(6, 8, rng)
    llm = codecoder.CoDecoder(codecoder.LlmConfig(vocab_size=vocab_size, layers=1, model_dim=8, heads=2,
        n_mask_tokens=2), projection, rng)

    return llm


def case_codecoder(rng):
    llm = _tiny_llm(rng)
    visual = tensor.Tensor(rng.normal(size=(3, 6)))
    reference = ovp.ReferenceTokens(tensor.Tensor(rng.normal(size=(2, 8))), [(0, 2)])
    text_ids = rng.integers(0, 12, 4)
    answer_ids = rng.integers(0, 12, 2)
    targets = codecoder.text_targets(text_ids, answer_ids, 1)
    project = _projector(rng, (2, 8))
    params = [llm.mask_tokens, llm.unembedding.bias, llm.layers[0].attention.attention.q_proj.bias, llm.norm.gain]

    def f():
        seq = llm.build_sequence(visual, reference, text_ids, answer_ids)
        outputs = llm.co_decode(seq)
        _, e_m = llm.extract_functional(outputs, seq)

        return losses.text_loss(llm.text_logits(outputs, seq), targets) + project(e_m)

    return f, params


def case_vmtf(rng):
    fusion = vmtf.TextFusion(vmtf.VmtfConfig(layers=1, model_dim=8, heads=2, image_dim=4), rng)
    e_d = _leaf(rng, 3, 8)
    f_img = tensor.Tensor(rng.normal(size=(5, 4)))
    project = _projector(rng, (4, 8))
    params = [e_d, fusion.image_projection.weight, fusion.layers[0].cross.attention.v_proj.weight]

    return (lambda: project(fusion.fuse(e_d, f_img).embeds)), params


def _tiny_decoder(rng):
    return segdec.SegmentationDecoder(segdec.DecoderConfig(image_size=8, feature_stride=2, image_dim=3, pixel_dim=4,
        model_dim=8, heads=2, decoder_layers=1, pool_factor=4), rng)


def case_segdec(rng):
    decoder = _tiny_decoder(rng)
    f_img = tensor.Tensor(rng.normal(size=(4, 4, 3)))
    text = vmtf.MultiGranularityText(tensor.Tensor(rng.normal(size=(3, 8))))
    e_m = _leaf(rng, 2, 8)
    project_masks = _projector(rng, (2, 8, 8))
    project_scores = _projector(rng, (2,))
    params = [e_m, decoder.pixel_decoder.convs[0].bias, decoder.score_projection.weight, decoder.output.bias]

    def f():
        ms = decoder.predict(f_img, text, e_m)

        return project_masks(ms.masks) + project_scores(ms.scores)

    return f, params


# Losses


def case_losses(rng):
    logits = _leaf(rng, 3, 4, 4, scale=2.0)
    scores = _leaf(rng, 3)
    text_logits = _leaf(rng, 4, 6)
    gt = rng.random((2, 4, 4)) < 0.4
    gt[:, 0, 0] = True
    targets = rng.integers(0, 6, 4)
    weights = losses.LossWeights(*rng.uniform(0.5, 1.5, 4))

    def f():
        return losses.total_loss(text_logits, targets, segdec.MaskSet(logits, scores), gt, weights)[0]

    return f, [logits, scores, text_logits]


def case_dice_pair(rng):
    logits = _leaf(rng, 1, 2)
    gt = np.array([[1.0, 0.0]])

    return (lambda: losses.dice_loss(tensor.sigmoid(logits), gt)), [logits]


# Full pipeline


def case_pipeline(rng):
    cfg = ivseg.config.make_test_config(model_dim=8, heads=2, n_queries=2, n_mask_tokens=2, pixel_dim=4,
        image_feature_dim=4, encoder_dim=4, patch_size=4, image_size=8, clip_length=2, t_r=1)
    model = segmenter.InstructedSegmenter(cfg, rng)
    sample = corpus.generate_sample(int(rng.integers(2 ** 31)), 0, {"easy": 1.0}, {instruction.RVOS: 1.0},
        cfg.clip_length, 16)
    sample = _crop(sample, cfg.image_size)
    key = int(np.flatnonzero(np.any(sample.gt_masks, axis=(0, 2, 3)))[0])
    params = [model.decoder.score_projection.bias, model.ovp.queries]

    return (lambda: model.loss(sample, key)[0]), params


def _crop(sample, size):
    """
    Downsampled copy of `sample`, keeping targets visible
    """
    step = sample.clip.shape[1] // size
    clip = sample.clip[:, ::step, ::step]
    masks = sample.gt_masks[:, :, ::step, ::step]

    if not masks.any():
        masks = masks.copy()
        masks[:, :, 0, 0] = True

    return instruction.InstructionSample(sample.sample_id, sample.mode, clip, sample.prompt, sample.answer,
        sample.target_ids, masks)


SUITE = {
    "tensor": (case_matmul, case_elementwise, case_softmax, case_layer_norm, case_reductions),
    "nn": (case_attention, case_feed_forward, case_lora, case_pixel_stack, case_patch_encoder),
    "ovp": (case_ovp,),
    "codecoder": (case_codecoder,),
    "vmtf": (case_vmtf,),
    "segdec": (case_segdec,),
    "losses": (case_losses, case_dice_pair),
    "pipeline": (case_pipeline,),
}


def run_suite(modules=None, instances=20, seed=0, tol=1e-4) -> pandas.DataFrame:
    """
    One row per (module, case, instance)
    """
    modules = list(SUITE) if not modules else list(modules)
    unknown = [m for m in modules if m not in SUITE]

    if unknown:
        raise ValueError(f"Unknown gradient suite modules {unknown}, expected a subset of {list(SUITE)}")

    previous = tensor.default_dtype()
    tensor.set_precision("double")
    rows = []

    try:
        for name in modules:
            for case in SUITE[name]:
                for instance in range(instances):
                    rng = np.random.default_rng([seed, instance])
                    f, params = case(rng)
                    report = gradient_check.gradient_check(f, params, tol=tol)
                    rows.append(dict(module=name, case=case.__name__[len("case_"):], instance=instance,
                        max_error=report.max_error, passed=report.passed, evaluations=report.evaluations))

                    if not report.passed:
                        log.warning(run_suite, name, case.__name__, "instance", instance, report)
    finally:
        tensor.set_precision("single" if previous == np.float32 else "double")
        tensor.reset_graph()

    return pandas.DataFrame(rows)
