"""
End-to-end training loop.

Each step draws a batch seed from the trainer's generator; the seed alone
determines the batch (samples and key frames), so a failing batch can be
replayed. Per step: forward through the whole segmenter, total loss averaged
over the batch, one backward sweep, one AdamW update at the scheduled rate.
"""

import copy
import dataclasses
import os
import pathlib
import re

import numpy as np
import pandas

import ivseg.autograd.tensor as tensor
import ivseg.data_processing.manifest as manifest
import ivseg.model.segmenter as segmenter
import ivseg.optimization.adamw as adamw
import ivseg.optimization.schedule as schedule
import ivseg.synthdata.corpus as corpus
import ivseg.training.checkpoint as checkpoint
import ivseg.training.evaluator as evaluator
import ivseg.training.rendering as rendering
import ivseg.ut as ut
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

METRICS_FILE = "metrics.log"
LOSS_CHART_FILE = "loss.svg"
CONFIG_FILE = "config.txt"
HELD_OUT_SEED_OFFSET = 2 ** 31  # Above every configurable seed
STEP_FIELDS = ("lr", "loss", "text", "cls", "bce", "dice")


class TrainingError(Exception):

    def __init__(self, message, batch_seed=None):
        Exception.__init__(self, message if batch_seed is None else f"{message} (batch seed {batch_seed})")
        self.batch_seed = batch_seed


class MetricLog:
    """
    One `key=value` line per event, echoed at INFO:

    step=<int> lr=<float> loss=<float> text=<float> cls=<float> bce=<float> dice=<float>
    eval step=<int> <metric>=<float> ...
    """
    _PAIR = re.compile(r"^([A-Za-z0-9_&\-]+)=(\S+)$")

    def __init__(self, path=None, resume_step=None):
        """
        With `resume_step`, lines of an existing log up to that step are kept
        (in `kept`) and later ones are dropped
        """
        self.path = path
        self.kept = MetricLog._lines_through(path, resume_step) if resume_step is not None else []
        self._file = open(path, "w", encoding="utf-8") if path is not None else None

        if self._file is not None:
            self._file.writelines(line + "\n" for line in self.kept)

    @staticmethod
    def _lines_through(path, step):
        if path is None or not os.path.exists(path):
            return []

        with open(path, "r", encoding="utf-8") as f:
            lines = [line.strip() for line in f if line.strip()]

        return [line for line in lines if MetricLog.parse_line(line)[1]["step"] <= step]

    def _write(self, line):
        log.info(MetricLog, line)

        if self._file is not None:
            self._file.write(line + "\n")
            self._file.flush()

    @staticmethod
    def format_step(step, lr, components: dict):
        return " ".join([f"step={int(step)}", f"lr={float(lr)!r}"]
            + [f"{k}={float(components[k])!r}" for k in STEP_FIELDS[1:]])

    @staticmethod
    def format_eval(step, values: dict):
        return " ".join(["eval", f"step={int(step)}"] + [f"{k}={float(v)!r}" for k, v in values.items()])

    def step(self, step, lr, components: dict):
        self._write(MetricLog.format_step(step, lr, components))

    def eval(self, step, values: dict):
        self._write(MetricLog.format_eval(step, values))

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    @staticmethod
    def parse_line(line):
        """
        `(kind, {key: value})`, kind is "step" or "eval". Raises `ValueError`
        on lines outside the grammar.
        """
        tokens = line.split()
        kind = "step"

        if tokens and tokens[0] == "eval":
            kind = "eval"
            tokens = tokens[1:]

        values = dict()

        for token in tokens:
            match = MetricLog._PAIR.match(token)

            if match is None:
                raise ValueError(f"Malformed metric token `{token}` in `{line}`")

            key, value = match.groups()
            values[key] = int(value) if key == "step" else float(value)

        if "step" not in values or (kind == "step" and set(values) != {"step", *STEP_FIELDS}):
            raise ValueError(f"Metric line does not follow the grammar: `{line}`")

        return kind, values

    @staticmethod
    def parse(path) -> pandas.DataFrame:
        rows = []

        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    kind, values = MetricLog.parse_line(line)
                    rows.append(dict(kind=kind, **values))

        return pandas.DataFrame(rows)


@dataclasses.dataclass
class TrainingResult:
    checkpoint_path: str
    trace: ut.Trace
    report: pandas.DataFrame = None


def held_out_samples(cfg, size=None):
    return corpus.generate_corpus(cfg.seed + HELD_OUT_SEED_OFFSET, size or cfg.eval_size, cfg.difficulties(),
        cfg.modes(), cfg.clip_length, cfg.image_size)


def training_samples(cfg):
    if cfg.train_manifest:
        return manifest.load_split(cfg.train_manifest)

    return corpus.generate_corpus(cfg.seed, cfg.train_size, cfg.difficulties(), cfg.modes(), cfg.clip_length,
        cfg.image_size)


def key_frame(sample, rng):
    """
    Uniformly drawn frame on which some target is visible
    """
    visible = np.flatnonzero(sample.gt_masks.reshape(sample.gt_masks.shape[0], sample.frames, -1).any(axis=(0, 2)))

    if visible.size == 0:
        raise TrainingError(f"Sample {sample.sample_id} has no visible target")

    return int(visible[rng.integers(visible.size)])


class Trainer:

    def __init__(self, cfg, out_dir=None, train_samples=None, eval_samples=None, model=None,
            resume: checkpoint.Checkpoint = None):
        """
        `resume` continues a captured run: parameters, optimizer moments, step
        counter and batch generator come from the checkpoint, whose config must
        equal `cfg`
        """
        cfg.validate()

        if resume is not None and resume.config != cfg:
            raise TrainingError("Checkpoint config differs from the run config")

        tensor.set_precision(cfg.precision)
        self.cfg = cfg
        self.out_dir = out_dir
        self.model = model or (resume.restore_model() if resume is not None else segmenter.InstructedSegmenter(cfg))
        self.weights = segmenter.loss_weights(cfg)
        self.optimizer = adamw.AdamW(self.model.trainable_parameters(),
            adamw.AdamWHyper(lr=cfg.lr, weight_decay=cfg.weight_decay))
        self.schedule = schedule.CosineWarmupSchedule(cfg.warmup_steps, cfg.total_steps, cfg.lr, cfg.lr_floor)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.step = 0
        self.trace = ut.Trace()

        if resume is not None:
            self.optimizer.moments = copy.deepcopy(resume.moments)
            self.rng = resume.restore_rng()
            self.step = resume.step

        self.train_samples = train_samples if train_samples is not None else training_samples(cfg)
        self.eval_samples = eval_samples

        if out_dir is not None:
            ut.dir_create_if_not_exists(out_dir)

        self.metric_log = MetricLog(str(pathlib.Path(out_dir) / METRICS_FILE) if out_dir is not None else None,
            self.step if resume is not None else None)

        for line in self.metric_log.kept:
            kind, values = MetricLog.parse_line(line)

            if kind == "step":
                self.trace.tick(values["step"], **{k: values[k] for k in STEP_FIELDS[1:]})

        if not self.train_samples:
            raise TrainingError("Empty training set")

    def batch(self, batch_seed):
        rng = np.random.default_rng(batch_seed)
        indices = rng.choice(len(self.train_samples), size=self.cfg.batch_size,
            replace=len(self.train_samples) < self.cfg.batch_size)

        return [(self.train_samples[i], key_frame(self.train_samples[i], rng)) for i in indices]

    def train_step(self, batch=None, batch_seed=None) -> dict:
        """
        Returns the batch-mean loss components
        """
        if batch is None:
            batch_seed = int(self.rng.integers(2 ** 31)) if batch_seed is None else batch_seed
            batch = self.batch(batch_seed)

        tensor.reset_graph()
        self.optimizer.zero_grad()
        lr = self.schedule(min(self.step + 1, self.cfg.total_steps))
        total = None
        reports = []

        for sample, key in batch:
            loss, report = self.model.loss(sample, key, self.weights)
            total = loss if total is None else total + loss
            reports.append(report.as_dict())

        total = total * (1.0 / len(batch))

        if not np.all(np.isfinite(total.data)):
            tensor.reset_graph()

            raise TrainingError(f"Non-finite loss at step {self.step + 1}", batch_seed)

        tensor.backward(total)
        self.optimizer.step(lr)
        tensor.reset_graph()
        self.step += 1
        components = {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}
        self.metric_log.step(self.step, lr, components)
        self.trace.tick(self.step, **components)

        return components

    def evaluate(self):
        if self.eval_samples is None:
            self.eval_samples = held_out_samples(self.cfg)

        report, _ = evaluator.evaluate_model(self.model, self.eval_samples)
        self.metric_log.eval(self.step, evaluator.headline(report))

        return report

    def capture(self) -> checkpoint.Checkpoint:
        return checkpoint.Checkpoint.capture(self.model, self.optimizer.moments, self.step, self.rng)

    def save(self):
        path = str(pathlib.Path(self.out_dir) / checkpoint.FILE_NAME)
        checkpoint.save(path, self.capture())

        return path

    def run(self) -> TrainingResult:
        if self.out_dir is not None:
            self.cfg.save(str(pathlib.Path(self.out_dir) / CONFIG_FILE))

        log.info(Trainer.run, "training", self.cfg.total_steps, "steps on", len(self.train_samples), "samples")
        report = None
        path = None

        try:
            while self.step < self.cfg.total_steps:
                self.train_step()

                if self.step % self.cfg.eval_every == 0 or self.step == self.cfg.total_steps:
                    report = self.evaluate()

                if self.out_dir is not None and self.step % self.cfg.checkpoint_every == 0:
                    path = self.save()
        finally:
            self.metric_log.close()

        if self.out_dir is not None:
            path = self.save()
            rendering.loss_chart(self.trace, str(pathlib.Path(self.out_dir) / LOSS_CHART_FILE))

        return TrainingResult(path, self.trace, report)


def train(cfg, out_dir=None, resume: checkpoint.Checkpoint = None) -> TrainingResult:
    if resume is not None:
        log.info(train, "resuming at step", resume.step, "of", cfg.total_steps)

    return Trainer(cfg, out_dir, resume=resume).run()
