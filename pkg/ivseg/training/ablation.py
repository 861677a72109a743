"""
Ablation runner.

Every cell of an axis is trained with `k` seeds (`cfg.seed + i`) and evaluated
on one held-out split shared by all cells, drawn from the base configuration's
mixes.
"""

import pathlib

import pandas

import ivseg.synthdata.instruction as instruction
import ivseg.training.evaluator as evaluator
import ivseg.training.trainer as trainer
import ivseg.utility.logging


log = ivseg.utility.logging.Log(file=__file__)

AXES = {
    "components": {
        "ovp+vmtf": dict(ovp_enabled=True, vmtf_enabled=True),
        "ovp": dict(ovp_enabled=True, vmtf_enabled=False),
        "vmtf": dict(ovp_enabled=False, vmtf_enabled=True),
        "none": dict(ovp_enabled=False, vmtf_enabled=False),
    },
    "t_r": {
        "t_r=0": dict(t_r=0),
        "t_r=4": dict(t_r=4),
        "t_r=8": dict(t_r=8),
    },
    "fusion": {
        "global": dict(fusion_mode="global"),
        "detailed": dict(fusion_mode="detailed"),
        "both": dict(fusion_mode="both"),
    },
    "data": {
        "image": dict(mode_mix=f"{instruction.RES}:1,{instruction.REASON_SEG}:1"),
        "video": dict(mode_mix=f"{instruction.RVOS}:1,{instruction.REASON_VOS}:1"),
        "all": dict(mode_mix=",".join(f"{m}:1" for m in instruction.MODES)),
    },
}


def run_cell(cfg, train_samples=None, eval_samples=None, out_dir=None):
    """
    Headline metrics of one trained configuration
    """
    result = trainer.Trainer(cfg, out_dir, train_samples, eval_samples).run()

    return evaluator.headline(result.report)


def ablate(cfg, axis, seeds=3, out_dir=None, run=run_cell) -> pandas.DataFrame:
    """
    Returns one row per (cell, seed) with the headline metrics; see
    `summarize` for the per-cell table
    """
    if axis not in AXES:
        raise ValueError(f"Unknown ablation axis `{axis}`, expected one of {tuple(AXES)}")

    if seeds < 1:
        raise ValueError(f"At least one seed per cell is required, got {seeds}")

    eval_samples = trainer.held_out_samples(cfg)
    rows = []

    for cell, changes in AXES[axis].items():
        for k in range(seeds):
            cell_cfg = cfg.replace(**changes, seed=cfg.seed + k)
            cell_dir = str(pathlib.Path(out_dir) / cell.replace("=", "_") / f"seed_{k}") if out_dir else None
            log.info(ablate, axis, cell, "seed", cell_cfg.seed)
            metrics = run(cell_cfg, eval_samples=eval_samples, out_dir=cell_dir)
            rows.append(dict(axis=axis, cell=cell, seed=cell_cfg.seed, **metrics))

    return pandas.DataFrame(rows)


def summarize(runs: pandas.DataFrame) -> pandas.DataFrame:
    """
    Mean and spread (population standard deviation) of every metric per cell,
    in axis order
    """
    metrics = [c for c in runs.columns if c not in ("axis", "cell", "seed")]
    grouped = runs.groupby("cell", sort=False)[metrics]
    mean = grouped.mean().add_suffix("_mean")
    spread = grouped.std(ddof=0).add_suffix("_spread")

    return pandas.concat([mean, spread], axis=1).reset_index()
