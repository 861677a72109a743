"""
Tests the training loop, the metric log, evaluation reports and ablations.
"""

import os
import pathlib
import sys
import tempfile
import unittest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import numpy as np

import ivseg.autograd.tensor as tensor
import ivseg.config as config
import ivseg.evaluation.metrics as metrics
import ivseg.model.segmenter as segmenter
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.training.ablation as ablation
import ivseg.training.checkpoint as checkpoint
import ivseg.training.evaluator as evaluator
import ivseg.training.pilot as pilot
import ivseg.training.trainer as trainer
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

ALL_MODES = {m: 0.25 for m in instruction.MODES}


def small_corpus(seed, size, cfg):
    return corpus.generate_corpus(seed, size, cfg.difficulties(), ALL_MODES, cfg.clip_length, cfg.image_size,
        n_workers=1)


class TestReferenceFrames(unittest.TestCase):

    def test_spread_without_the_key(self):
        self.assertEqual([0, 4], segmenter.reference_indices(5, 2, 2))
        self.assertEqual([1, 2, 3], segmenter.reference_indices(4, 0, 3))
        self.assertEqual([], segmenter.reference_indices(5, 2, 0))

    def test_short_clips_repeat_frames(self):
        self.assertEqual([1, 1, 1, 1], segmenter.reference_indices(2, 0, 4))
        self.assertEqual([], segmenter.reference_indices(1, 0, 4))

    def test_key_outside_clip(self):
        with self.assertRaises(IndexError):
            segmenter.reference_indices(3, 3, 2)


class TestKeyFrame(unittest.TestCase):

    def _sample(self, visible_frames):
        gt = np.zeros((1, 3, 4, 4), dtype=bool)

        for t in visible_frames:
            gt[0, t, 1, 1] = True

        return instruction.InstructionSample("k", instruction.RVOS, np.zeros((3, 4, 4, 3)), "the red circle",
            "the red circle", (0,), gt)

    def test_only_visible_frames_are_drawn(self):
        rng = np.random.default_rng(0)
        self.assertEqual({1}, {trainer.key_frame(self._sample([1]), rng) for _ in range(20)})
        self.assertEqual({0, 2}, {trainer.key_frame(self._sample([0, 2]), rng) for _ in range(50)})

    def test_no_visible_target(self):
        with self.assertRaises(trainer.TrainingError):
            trainer.key_frame(self._sample([]), np.random.default_rng(0))


class TestTrainer(unittest.TestCase):

    def setUp(self) -> None:
        tensor.set_precision("double")
        tensor.reset_graph()
        self.cfg = config.make_test_config()
        self.samples = small_corpus(1, 6, self.cfg)

    def test_loss_descends_on_a_fixed_batch(self):
        t = trainer.Trainer(self.cfg.replace(lr=1e-2, warmup_steps=0, total_steps=60), train_samples=self.samples)
        batch = t.batch(3)
        losses = [t.train_step(batch)["loss"] for _ in range(50)]
        log.debug(TestTrainer.test_loss_descends_on_a_fixed_batch, "first", losses[0], "last", losses[-1])
        self.assertLess(np.mean(losses[-5:]), losses[0])

    def test_steps_are_deterministic(self):
        runs = []

        for _ in range(2):
            t = trainer.Trainer(self.cfg, train_samples=self.samples)
            components = [t.train_step() for _ in range(2)]
            runs.append((components, {k: p.data.copy() for k, p in t.model.named_parameters()}))

        self.assertEqual(runs[0][0], runs[1][0])

        for name, data in runs[0][1].items():
            np.testing.assert_array_equal(data, runs[1][1][name], err_msg=name)

    def test_frozen_encoders_do_not_move(self):
        t = trainer.Trainer(self.cfg, train_samples=self.samples)
        before = {k: p.data.copy() for k, p in t.model.clip_encoder.named_parameters()}
        before_fine = {k: p.data.copy() for k, p in t.model.fine_encoder.named_parameters()}
        t.train_step()
        t.train_step()

        for k, p in t.model.clip_encoder.named_parameters():
            np.testing.assert_array_equal(before[k], p.data)

        for k, p in t.model.fine_encoder.named_parameters():
            np.testing.assert_array_equal(before_fine[k], p.data)

    def test_lora_mode_trains_adapters_only(self):
        cfg = self.cfg.replace(lora_mode=True)
        t = trainer.Trainer(cfg, train_samples=self.samples)
        trainable = t.model.trainable_parameters()
        layer_names = [k for k in trainable if k.startswith("llm.layers.")]
        self.assertTrue(layer_names)
        self.assertTrue(all(".lora." in k for k in layer_names), layer_names)
        self.assertIn("llm.mask_tokens", trainable)
        self.assertNotIn("llm.norm.gain", trainable)

    def test_non_finite_loss_names_the_batch(self):
        t = trainer.Trainer(self.cfg, train_samples=self.samples)
        t.model.llm.unembedding.bias.data[...] = np.nan

        with self.assertRaises(trainer.TrainingError) as context:
            t.train_step(batch_seed=77)

        self.assertEqual(77, context.exception.batch_seed)

    def test_resumed_run_matches_an_uninterrupted_one(self):
        full = trainer.Trainer(self.cfg, train_samples=self.samples)
        expected = [full.train_step() for _ in range(4)]
        first = trainer.Trainer(self.cfg, train_samples=self.samples)
        head = [first.train_step() for _ in range(2)]
        ckpt = checkpoint.loads(checkpoint.dumps(first.capture()))
        resumed = trainer.Trainer(self.cfg, train_samples=self.samples, resume=ckpt)
        self.assertEqual(2, resumed.step)
        tail = [resumed.train_step() for _ in range(2)]
        self.assertEqual(expected, head + tail)
        self.assertEqual(full.optimizer.moments.step, resumed.optimizer.moments.step)
        restored = dict(resumed.model.named_parameters())

        for name, p in full.model.named_parameters():
            np.testing.assert_array_equal(p.data, restored[name].data, err_msg=name)

    def test_resume_rejects_another_config(self):
        t = trainer.Trainer(self.cfg, train_samples=self.samples)
        t.train_step()

        with self.assertRaises(trainer.TrainingError):
            trainer.Trainer(self.cfg.replace(lr=self.cfg.lr * 2), train_samples=self.samples, resume=t.capture())

    def test_resume_trims_the_metric_log(self):
        with tempfile.TemporaryDirectory() as directory:
            t = trainer.Trainer(self.cfg, out_dir=directory, train_samples=self.samples)
            t.train_step()
            t.train_step()
            ckpt = t.capture()
            t.train_step()
            t.metric_log.close()
            resumed = trainer.Trainer(self.cfg, out_dir=directory, train_samples=self.samples, resume=ckpt)
            self.assertEqual(2, len(resumed.trace))
            resumed.train_step()
            resumed.metric_log.close()
            steps = trainer.MetricLog.parse(os.path.join(directory, trainer.METRICS_FILE))
            self.assertEqual([1, 2, 3], list(steps.step))

    def test_empty_training_set(self):
        with self.assertRaises(trainer.TrainingError):
            trainer.Trainer(self.cfg, train_samples=[])

    def test_disabled_perceiver_leaves_no_reference_span(self):
        model = segmenter.InstructedSegmenter(self.cfg.replace(ovp_enabled=False))
        video = corpus.generate_sample(2, 0, self.cfg.difficulties(), {instruction.RVOS: 1.0}, self.cfg.clip_length,
            self.cfg.image_size)
        out = model.forward(video.clip, video.text_ids(), 0, (), video.is_video)
        self.assertEqual(0, out.sequence.layout.lengths()["reference"])
        out = segmenter.InstructedSegmenter(self.cfg).forward(video.clip, video.text_ids(), 0, (), video.is_video)
        self.assertEqual(self.cfg.n_queries * self.cfg.t_r, out.sequence.layout.lengths()["reference"])

    def test_run_writes_artifacts(self):
        cfg = self.cfg.replace(total_steps=3, warmup_steps=1, eval_every=3, checkpoint_every=2)

        with tempfile.TemporaryDirectory() as directory:
            result = trainer.Trainer(cfg, directory, self.samples, self.samples[:2]).run()

            for name in (trainer.METRICS_FILE, trainer.LOSS_CHART_FILE, trainer.CONFIG_FILE, "checkpoint.ivsg"):
                self.assertTrue(os.path.exists(os.path.join(directory, name)), name)

            frame = trainer.MetricLog.parse(os.path.join(directory, trainer.METRICS_FILE))
            self.assertEqual([1, 2, 3], list(frame[frame.kind == "step"].step))
            self.assertEqual([3], list(frame[frame.kind == "eval"].step))
            self.assertEqual(cfg, config.RunConfig.load(os.path.join(directory, trainer.CONFIG_FILE)))
            self.assertEqual(3, len(result.trace))
            self.assertIn("overall", list(result.report.group))


class TestMetricLog(unittest.TestCase):

    def test_line_grammar(self):
        line = trainer.MetricLog.format_step(4, 1e-3, dict(loss=1.5, text=0.5, cls=0.25, bce=0.5, dice=0.25))
        self.assertEqual("step=4 lr=0.001 loss=1.5 text=0.5 cls=0.25 bce=0.5 dice=0.25", line)
        kind, values = trainer.MetricLog.parse_line(line)
        self.assertEqual("step", kind)
        self.assertEqual(4, values["step"])
        kind, values = trainer.MetricLog.parse_line(trainer.MetricLog.format_eval(8, {"overall_giou": 0.5}))
        self.assertEqual(("eval", 0.5), (kind, values["overall_giou"]))

    def test_malformed_lines(self):
        for line in ("step=1 lr=0.1", "loss 1.0", "eval lr=0.1", "step=1 lr=0.1 loss=1 text=1 cls=1 bce=1 dice=x"):
            with self.assertRaises(ValueError):
                trainer.MetricLog.parse_line(line)


class TestPilotRecord(unittest.TestCase):

    def test_thresholds_keep_a_margin(self):
        record = pilot.PilotRecord.from_measurement(0.08, 0.83, 2000, 612.5)
        self.assertEqual(0.78, record.trained_threshold)
        self.assertEqual(0.13, record.untrained_threshold)

    def test_record_round_trip(self):
        record = pilot.PilotRecord.from_measurement(0.11, 0.74, 2000, 540.0)

        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "pilot.txt")
            record.save(path)
            self.assertEqual(record, pilot.PilotRecord.load(path))

    def test_referring_split(self):
        cfg = pilot.referring_config(total_steps=10, warmup_steps=1)
        self.assertEqual({instruction.RES, instruction.RVOS}, set(cfg.modes()))
        self.assertEqual({"easy"}, set(cfg.difficulties()))
        self.assertEqual(10, cfg.total_steps)


class TestEvaluator(unittest.TestCase):

    def setUp(self) -> None:
        cfg = config.make_test_config()
        self.samples = small_corpus(5, 16, cfg)

    def test_ground_truth_scores_one(self):
        predictions = {s.sample_id: s.union_mask() for s in self.samples}
        report = evaluator.evaluate_predictions(self.samples, predictions)

        for value in evaluator.headline(report).values():
            self.assertEqual(1.0, value)

    def test_empty_predictions_score_zero_ciou(self):
        predictions = {s.sample_id: np.zeros(s.gt_masks.shape[1:], dtype=bool) for s in self.samples}
        report = evaluator.evaluate_predictions(self.samples, predictions).set_index("group")
        self.assertEqual(0.0, report.loc["overall", "ciou"])

        for group in (instruction.RES, instruction.REASON_SEG):
            if group in report.index:
                self.assertEqual(0.0, report.loc[group, "giou"])

    def test_groups_reaggregate_frame_records(self):
        rng = np.random.default_rng(0)
        predictions = {s.sample_id: rng.random(s.gt_masks.shape[1:]) < 0.3 for s in self.samples}
        report = evaluator.evaluate_predictions(self.samples, predictions, tolerance_px=1).set_index("group")
        records = [metrics.iou_record(predictions[s.sample_id][t], s.union_mask()[t])
            for s in self.samples for t in range(s.frames)]
        self.assertAlmostEqual(metrics.ciou(records), report.loc["overall", "ciou"])
        self.assertAlmostEqual(metrics.giou(records), report.loc["overall", "giou"])
        videos = [s for s in self.samples if s.is_video]

        if videos:
            expected = np.mean([metrics.j_and_f(zip(predictions[s.sample_id], s.union_mask()), 1)[2]
                for s in videos])
            self.assertAlmostEqual(expected, report.loc["video", "j_and_f"])
            self.assertEqual(len(videos), report.loc["video", "samples"])

        self.assertEqual(len(self.samples), report.loc["overall", "samples"])

    def test_missing_prediction(self):
        with self.assertRaises(KeyError):
            evaluator.evaluate_predictions(self.samples, {})

    def test_wrong_prediction_shape(self):
        predictions = {s.sample_id: np.zeros((1, 2, 2), dtype=bool) for s in self.samples}

        with self.assertRaises(ValueError):
            evaluator.evaluate_predictions(self.samples, predictions)


class TestAblation(unittest.TestCase):

    def setUp(self) -> None:
        self.cfg = config.make_test_config()

    @staticmethod
    def _stub_run(cfg, eval_samples=None, out_dir=None):
        return {"overall_giou": 0.1 * (cfg.seed % 2) + (0.5 if cfg.ovp_enabled else 0.0)}

    def test_rows_per_cell_and_seed(self):
        runs = ablation.ablate(self.cfg, "components", seeds=2, run=self._stub_run)
        self.assertEqual(8, len(runs))
        self.assertEqual(list(ablation.AXES["components"]), list(runs.cell.unique()))
        self.assertEqual([0, 1], sorted(runs.seed.unique()))

    def test_summary_mean_and_spread(self):
        summary = ablation.summarize(ablation.ablate(self.cfg, "components", seeds=2, run=self._stub_run))
        summary = summary.set_index("cell")
        self.assertAlmostEqual(0.55, summary.loc["ovp", "overall_giou_mean"])
        self.assertAlmostEqual(0.05, summary.loc["none", "overall_giou_mean"])
        self.assertAlmostEqual(0.05, summary.loc["ovp", "overall_giou_spread"])

    def test_invalid_requests(self):
        with self.assertRaises(ValueError):
            ablation.ablate(self.cfg, "depth", run=self._stub_run)

        with self.assertRaises(ValueError):
            ablation.ablate(self.cfg, "fusion", seeds=0, run=self._stub_run)


if __name__ == "__main__":
    unittest.main()
