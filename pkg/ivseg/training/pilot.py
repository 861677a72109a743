"""
Calibration pilot for the toy-training acceptance check.

The pilot trains the default configuration on the easy referring split and
measures held-out gIoU before and after training. Thresholds are derived from
the measurement with a fixed margin and recorded as `key = value` lines next
to the acceptance tests, which read them back.
"""

import dataclasses
import time

import ivseg.autograd.tensor as tensor
import ivseg.config
import ivseg.data_processing.data_interface as data_interface
import ivseg.data_processing.data_provider as data_provider
import ivseg.model.segmenter as segmenter
import ivseg.synthdata.instruction as instruction
import ivseg.training.evaluator as evaluator
import ivseg.training.trainer as trainer
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

TARGET_TRAINED_GIOU = 0.70
TARGET_UNTRAINED_GIOU = 0.20
MARGIN = 0.05


def referring_config(cfg: ivseg.config.RunConfig = None, **changes) -> ivseg.config.RunConfig:
    """
    `cfg` (defaults when omitted) restricted to easy image and video
    referring samples
    """
    cfg = cfg or ivseg.config.RunConfig()

    return cfg.replace(difficulty_mix="easy:1", mode_mix=f"{instruction.RES}:1,{instruction.RVOS}:1", **changes)


@dataclasses.dataclass
class PilotRecord:
    untrained_giou: float
    trained_giou: float
    steps: int
    seconds: float
    trained_threshold: float = TARGET_TRAINED_GIOU
    untrained_threshold: float = TARGET_UNTRAINED_GIOU

    @staticmethod
    def from_measurement(untrained_giou, trained_giou, steps, seconds, margin=MARGIN):
        record = PilotRecord(untrained_giou, trained_giou, steps, seconds,
            round(trained_giou - margin, 2), round(untrained_giou + margin, 2))

        if record.trained_threshold < TARGET_TRAINED_GIOU:
            log.warning(PilotRecord, "trained gIoU", trained_giou, "misses the target", TARGET_TRAINED_GIOU)

        if record.untrained_threshold > TARGET_UNTRAINED_GIOU:
            log.warning(PilotRecord, "untrained gIoU", untrained_giou, "exceeds the target", TARGET_UNTRAINED_GIOU)

        return record

    def save(self, path):
        data_provider.write_key_value_file(path, [(f.name, repr(getattr(self, f.name)))
            for f in dataclasses.fields(self)])
        log.info(PilotRecord.save, "->", path)

    @staticmethod
    def load(path) -> "PilotRecord":
        schema = data_interface.KeySchema({f.name: f.type for f in dataclasses.fields(PilotRecord)})
        source = data_interface.ConcreteDataInterface(data_provider.KeyValueFileDataProvider(path), schema)

        return PilotRecord(**{f.name: source.data(f.name) for f in dataclasses.fields(PilotRecord)})


def run_pilot(cfg: ivseg.config.RunConfig = None, out_dir=None, margin=MARGIN) -> PilotRecord:
    cfg = referring_config(cfg)
    tensor.set_precision(cfg.precision)
    held_out = trainer.held_out_samples(cfg)
    untrained, _ = evaluator.evaluate_model(segmenter.InstructedSegmenter(cfg), held_out)
    begin = time.perf_counter()
    result = trainer.Trainer(cfg, out_dir, eval_samples=held_out).run()
    seconds = time.perf_counter() - begin
    record = PilotRecord.from_measurement(evaluator.headline(untrained)["overall_giou"],
        evaluator.headline(result.report)["overall_giou"], cfg.total_steps, round(seconds, 1), margin)
    log.info(run_pilot, "untrained gIoU", record.untrained_giou, "trained gIoU", record.trained_giou, "in",
        record.seconds, "s")

    return record
