"""
Command-line surface.

Every failure ends as one line on stderr,

    error type=<ExceptionName> message=<json string>

and exit code 1. Argument errors keep argparse's exit code 2.
"""

import argparse
import dataclasses
import json
import pathlib
import sys

import pandas

import ivseg.config
import ivseg.data_processing.manifest as manifest
import ivseg.synthdata.corpus as corpus
import ivseg.synthdata.instruction as instruction
import ivseg.synthdata.scene as scene
import ivseg.training.ablation as ablation
import ivseg.training.checkpoint as checkpoint
import ivseg.training.evaluator as evaluator
import ivseg.training.gradient_suite as gradient_suite
import ivseg.training.pilot as pilot
import ivseg.training.rendering as rendering
import ivseg.training.trainer as trainer
import ivseg.ut as ut
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

DEFAULT_MODE_MIX = ",".join(f"{m}:1" for m in instruction.MODES)


def _parse_arguments(argv=None):
    parser = argparse.ArgumentParser(prog="ivseg", description="Instructed visual segmentation at toy scale")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level (IVSEG_LOG_LEVEL takes precedence)")
    commands = parser.add_subparsers(dest="command", required=True)

    gen_data = commands.add_parser("gen-data", help="Generate a synthetic split: clips, PGM masks and a manifest")
    gen_data.add_argument("--seed", type=int, required=True)
    gen_data.add_argument("--size", type=int, required=True, help="Number of samples")
    gen_data.add_argument("--out", type=str, required=True, help="Output directory")
    gen_data.add_argument("--difficulty", type=str, default="easy:1",
        help=f"Difficulty mix, `name:weight,...` over {tuple(scene.DIFFICULTIES)}")
    gen_data.add_argument("--mode-mix", type=str, default=DEFAULT_MODE_MIX,
        help=f"Task mix, `name:weight,...` over {instruction.MODES}")
    gen_data.add_argument("--split", type=str, default="train", help="Split name, also the manifest's file stem")
    gen_data.add_argument("--clip-length", type=int, default=4)
    gen_data.add_argument("--image-size", type=int, default=32)

    train = commands.add_parser("train", help="Train end to end from a config file")
    train.add_argument("--config", type=str, default=None,
        help="`key = value` config file; taken from the checkpoint when resuming")
    train.add_argument("--resume", type=str, default=None, help="Checkpoint to continue training from")
    train.add_argument("--out", type=str, required=True, help="Output directory for checkpoint and metric log")

    evaluate = commands.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=str, required=True)
    evaluate.add_argument("--split", type=str, default=None,
        help="Manifest of the split; the checkpoint config's held-out corpus when omitted")
    evaluate.add_argument("--report", type=str, default=None, help="CSV file for the report")

    ablate = commands.add_parser("ablate", help="Train and compare every cell of an ablation axis")
    ablate.add_argument("--config", type=str, required=True)
    ablate.add_argument("--axis", type=str, required=True, choices=tuple(ablation.AXES))
    ablate.add_argument("--seeds", type=int, default=3)
    ablate.add_argument("--out", type=str, default=None, help="Directory for per-cell runs and the CSV tables")

    calibrate = commands.add_parser("pilot", help="Measure held-out gIoU before and after toy training and record "
        "acceptance thresholds")
    calibrate.add_argument("--config", type=str, default=None, help="Base config; defaults when omitted")
    calibrate.add_argument("--record", type=str, required=True, help="`key = value` file for the measured numbers")
    calibrate.add_argument("--out", type=str, default=None, help="Output directory of the pilot run")

    grad_check = commands.add_parser("grad-check", help="Central-difference gradient suite")
    grad_check.add_argument("--module", type=str, default=None, choices=tuple(gradient_suite.SUITE),
        help="One block family; every family when omitted")
    grad_check.add_argument("--instances", type=int, default=20)
    grad_check.add_argument("--seed", type=int, default=0)

    render = commands.add_parser("render", help="Write frame / ground truth / prediction panels and overlays")
    render.add_argument("--checkpoint", type=str, required=True)
    render.add_argument("--ids", type=str, required=True, help="Comma separated sample ids")
    render.add_argument("--out", type=str, required=True)
    render.add_argument("--split", type=str, default=None,
        help="Manifest holding the samples; the checkpoint config's held-out corpus when omitted")

    return parser.parse_args(argv)


class Format:
    """
    Human-readable renditions of command results
    """

    @staticmethod
    def table(frame: pandas.DataFrame):
        with pandas.option_context("display.max_columns", None, "display.width", 160, "display.float_format",
                "{:.4f}".format):
            return frame.to_string(index=False)

    @staticmethod
    def suite_summary(results: pandas.DataFrame):
        summary = results.groupby(["module", "case"], sort=False).agg(instances=("instance", "count"),
            passed=("passed", "sum"), max_error=("max_error", "max")).reset_index()

        return Format.table(summary)

    @staticmethod
    def error(e: Exception):
        return f"error type={type(e).__name__} message={json.dumps(str(e))}"


def _samples(ckpt: checkpoint.Checkpoint, split):
    if split is not None:
        return manifest.load_split(split)

    return trainer.held_out_samples(ckpt.config)


def command_gen_data(args):
    difficulty_mix = corpus.parse_mix(args.difficulty, scene.DIFFICULTIES)
    mode_mix = corpus.parse_mix(args.mode_mix, instruction.MODES)
    samples = corpus.generate_corpus(args.seed, args.size, difficulty_mix, mode_mix, args.clip_length,
        args.image_size)
    path = manifest.write_split(samples, args.out, args.split)
    print(path)


def command_train(args):
    resume = checkpoint.load(args.resume) if args.resume is not None else None

    if args.config is None and resume is None:
        raise ivseg.config.ConfigError("`train` needs --config or --resume")

    cfg = ivseg.config.RunConfig.load(args.config) if args.config is not None else resume.config
    result = trainer.train(cfg, args.out, resume)

    if result.report is not None:
        print(Format.table(result.report))

    print(result.checkpoint_path)


def command_eval(args):
    ckpt = checkpoint.load(args.checkpoint)
    model = ckpt.restore_model()
    report, _ = evaluator.evaluate_model(model, _samples(ckpt, args.split))

    if args.report is not None:
        parent = pathlib.Path(args.report).parent

        if str(parent):
            ut.dir_create_if_not_exists(str(parent))

        report.to_csv(args.report, index=False)

    print(Format.table(report))


def command_ablate(args):
    cfg = ivseg.config.RunConfig.load(args.config)
    runs = ablation.ablate(cfg, args.axis, args.seeds, args.out)
    summary = ablation.summarize(runs)

    if args.out is not None:
        ut.dir_create_if_not_exists(args.out)
        runs.to_csv(str(pathlib.Path(args.out) / f"{args.axis}_runs.csv"), index=False)
        summary.to_csv(str(pathlib.Path(args.out) / f"{args.axis}_summary.csv"), index=False)

    print(Format.table(summary))


def command_pilot(args):
    cfg = ivseg.config.RunConfig.load(args.config) if args.config is not None else None
    record = pilot.run_pilot(cfg, args.out)
    record.save(args.record)
    print(Format.table(pandas.DataFrame([dataclasses.asdict(record)])))


def command_grad_check(args):
    modules = [args.module] if args.module else None
    results = gradient_suite.run_suite(modules, args.instances, args.seed)
    print(Format.suite_summary(results))
    failures = results[~results["passed"]]

    if len(failures):
        raise gradient_suite.GradientSuiteError(failures)


def command_render(args):
    ckpt = checkpoint.load(args.checkpoint)
    model = ckpt.restore_model()
    wanted = ut.parse_id_list(args.ids)
    samples = {s.sample_id: s for s in _samples(ckpt, args.split)}
    missing = [i for i in wanted if i not in samples]

    if missing:
        raise KeyError(f"Unknown sample ids {missing}")

    for sample_id in wanted:
        sample = samples[sample_id]

        for path in rendering.render_sample(sample, model.predict_clip(sample), args.out):
            print(path)


COMMANDS = {
    "gen-data": command_gen_data,
    "train": command_train,
    "eval": command_eval,
    "ablate": command_ablate,
    "pilot": command_pilot,
    "grad-check": command_grad_check,
    "render": command_render,
}


def main(argv=None):
    args = _parse_arguments(argv)

    if args.verbose:
        ivseg.utility.logging.Log.LEVEL = ivseg.utility.logging.Log.LEVEL_DEBUG

    try:
        COMMANDS[args.command](args)
    except Exception as e:
        log.debug(main, args.command, "failed:", repr(e))
        print(Format.error(e), file=sys.stderr)

        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
