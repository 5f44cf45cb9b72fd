"""End-to-end runs: data assembly, strategy comparison and one-at-a-time hyperparameter sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .curriculum import CurriculumSchedule, match_budget
from .data import (
    SPLITS,
    NormStats,
    PreparedData,
    Region,
    SplitSpec,
    load_scene,
    load_split_spec,
    prepare_splits,
    scene_format,
)
from .evaluation import MetricReport, aggregate_runs, confusion, metrics
from .model import EncoderSpec, HeadSpec, MultiTaskModel, build_model, default_heads, save_checkpoint
from .synthetic import SyntheticSpec, generate_scene
from .training import STRATEGIES, TrainLog, finetune, predict, pretrain

log = logging.getLogger(__name__)

SWEEP_KEYS = {
    "F": "curriculum.F",
    "K": "curriculum.K",
    "S": "curriculum.S",
    "alpha_spa": "loss.spa",
    "alpha_spe": "loss.spe",
    "alpha_mim": "loss.mim",
    "ratio": "mim.ratio",
}


def grid_regions(scene: str, height: int, width: int, block: int, pattern) -> list[Region]:
    """Square blocks assigned round-robin along anti-diagonals so every split spans the scene."""
    regions = []
    for bi, y in enumerate(range(0, height, block)):
        for bj, x in enumerate(range(0, width, block)):
            split = pattern[(bi + bj) % len(pattern)]
            regions.append(Region(x, y, min(x + block, width), min(y + block, height), split, scene))
    return regions


def synthetic_scenes(cfg: RunConfig):
    s = cfg.data["synthetic"]
    base = int(s.get("seed", 0)) if isinstance(s, dict) else 0
    common = dict(height=int(s["size"]), width=int(s["size"]), bands=int(s["bands"]), num_classes=int(s["classes"]),
                  texture_amplitude=list(np.atleast_1d(s["texture_amplitude"]).astype(float)),
                  noise_std=float(s["noise_std"]))
    main = generate_scene(SyntheticSpec(**common, seed=base, name="synthetic-0"))
    extra = [generate_scene(SyntheticSpec(**common, seed=base + 1 + i, name=f"synthetic-pre-{i}"))
             for i in range(int(s["pretrain_scenes"]))]
    return [main], extra


def load_data(cfg: RunConfig, stats: NormStats | None = None) -> PreparedData:
    d = cfg.data["data"]
    if d["scenes"]:
        scenes = [load_scene(p, scene_format(p)) for p in d["scenes"]]
        pre = [load_scene(p, scene_format(p)) for p in d["pretrain_scenes"]]
    else:
        scenes, pre = synthetic_scenes(cfg)

    if d["split_file"]:
        spec = load_split_spec(d["split_file"])
        regions = list(spec.regions)
        tile, stride = spec.tile_size, spec.pretrain_stride
    else:
        tile, stride = int(d["tile_size"]), int(d["pretrain_stride"])
        if d["regions"]:
            regions = [Region(**r) for r in d["regions"]]
        else:
            regions = []
            for sc in scenes:
                regions += grid_regions(sc.name, sc.height, sc.width, int(d["grid_block"]), list(d["grid_pattern"]))
    big = 1 << 30
    # pretrain-only scenes without their own regions are tiled whole
    covered = {r.scene for r in regions}
    regions += [Region(0, 0, big, big, "pretrain", sc.name) for sc in pre if sc.name not in covered]
    spec = SplitSpec(tile_size=tile, pretrain_stride=stride, regions=regions)
    return prepare_splits(scenes + pre, spec, stats)


def encoder_spec(cfg: RunConfig, data: PreparedData) -> EncoderSpec:
    cube = next(c for s in SPLITS for c in data[s])
    h, w, c = cube.values.shape
    m = cfg.data["model"]
    return EncoderSpec(height=h, width=w, bands=c, widths=tuple(m["widths"]), budget=int(m["budget"]))


def pretext_model(cfg: RunConfig, enc: EncoderSpec, seed: int) -> MultiTaskModel:
    patch = cfg.data["jigsaw"]["spatial"]["patch"]
    heads = default_heads(enc, (int(patch[0]), int(patch[1])), int(cfg.data["jigsaw"]["spectral"]["blocks"]))
    return build_model(enc, heads, seed=seed)


def step_budget(cfg: RunConfig, n: int) -> int:
    c = cfg.data["curriculum"]
    return match_budget(CurriculumSchedule(n, int(c["S"]), int(c["K"]), float(c["F"])), int(cfg.data["optim"]["batch_size"]))


@dataclass
class RunResult:
    strategy: str
    seed: int
    report: MetricReport
    pretrain_steps: int
    finetune_steps: int
    pretrain_log: TrainLog = field(repr=False, default_factory=TrainLog)


def evaluate_model(model: MultiTaskModel, cubes, num_classes: int) -> MetricReport:
    from .data import stack_labels

    pred = predict(model, cubes)
    return metrics(confusion(pred, stack_labels(cubes), num_classes))


def run_strategy(cfg: RunConfig, data: PreparedData, strategy: str, seed: int, out_dir=None) -> RunResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    enc = encoder_spec(cfg, data)
    num_classes = data.num_classes
    tcfg = cfg.train_config(strategy, seed)
    if strategy == "scratch":
        model = build_model(enc, [HeadSpec("segmentation", (num_classes,))], seed=seed)
        plog = TrainLog()
    else:
        model = pretext_model(cfg, enc, seed)
        ckpt = None if out_dir is None else Path(out_dir) / "ckpt"
        model, plog = pretrain(data["pretrain"], model, cfg.loss_weights(), tcfg, checkpoint_dir=ckpt,
                               config_snapshot=cfg.data)
    fcfg = cfg.finetune_config(seed)
    seg, flog = finetune(model, data["train"], num_classes, fcfg, validation=data["validation"] or None)
    report = evaluate_model(seg, data["test"], num_classes)
    if out_dir is not None:
        out_dir = Path(out_dir)
        plog.write_jsonl(out_dir / "log.jsonl")
        flog.write_jsonl(out_dir / "finetune.jsonl")
        save_checkpoint(seg, out_dir / "model", cfg.data, {"normalization_stats": data.stats.to_dict(),
                                                           "num_classes": num_classes})
    return RunResult(strategy, seed, report, plog.steps, flog.steps, plog)


def _run_job(args):
    cfg_data, strategy, seed, out = args
    cfg = RunConfig(cfg_data)
    data = load_data(cfg)
    res = run_strategy(cfg, data, strategy, seed, out)
    res.pretrain_log = TrainLog()
    return res


def _execute(jobs, workers: int, data: PreparedData, cfgs: list[RunConfig]):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, [(c.data, s, seed, o) for c, (s, seed, o) in zip(cfgs, jobs)]))
    return [run_strategy(c, data, s, seed, o) for c, (s, seed, o) in zip(cfgs, jobs)]


def compare(cfg: RunConfig, strategies, seeds, out_dir=None, workers: int = 1, data: PreparedData | None = None) -> dict:
    """Comparison table: mean +- std of AA / OA / Kappa per strategy over ``seeds``."""
    data = data or load_data(cfg)
    jobs = []
    for strategy in strategies:
        for seed in seeds:
            out = None if out_dir is None else str(Path(out_dir) / "runs" / f"{strategy}-seed{seed}")
            jobs.append((strategy, int(seed), out))
    results = _execute(jobs, workers, data, [cfg] * len(jobs))

    rows = []
    for strategy in strategies:
        runs = [r for r in results if r.strategy == strategy]
        agg = aggregate_runs([r.report for r in runs])
        rows.append({
            "strategy": strategy,
            "metrics": agg.to_dict(per_class=True),
            "runs": [{"seed": r.seed, "pretrain_steps": r.pretrain_steps, "finetune_steps": r.finetune_steps,
                      **r.report.to_dict(per_class=True)} for r in runs],
        })
    report = {
        "kind": "compare",
        "pretrain_size": len(data["pretrain"]),
        "step_budget": step_budget(cfg, len(data["pretrain"])) if data["pretrain"] else 0,
        "rows": rows,
    }
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def sweep(cfg: RunConfig, param: str, values, seeds=(0,), out_dir=None, workers: int = 1,
          strategy: str = "cmtssl", data: PreparedData | None = None) -> dict:
    """Vary one hyperparameter over ``values`` with everything else fixed."""
    key = SWEEP_KEYS.get(param, param)
    data = data or load_data(cfg)
    cfgs, jobs = [], []
    for v in values:
        c = cfg.copy()
        c.set(key, v)
        c.validate()
        for seed in seeds:
            out = None if out_dir is None else str(Path(out_dir) / "runs" / f"{param}={v}-seed{seed}")
            cfgs.append(c)
            jobs.append((strategy, int(seed), out))
    results = _execute(jobs, workers, data, cfgs)
    rows = []
    per_value = len(seeds)
    for i, v in enumerate(values):
        runs = results[i * per_value:(i + 1) * per_value]
        agg = aggregate_runs([r.report for r in runs])
        rows.append({"param": param, "value": v, "metrics": agg.to_dict(per_class=False),
                     "pretrain_steps": [r.pretrain_steps for r in runs]})
    report = {"kind": "sweep", "param": param, "key": key, "strategy": strategy, "rows": rows}
    if out_dir is not None:
        write_report(report, out_dir)
    return report


# -- report emission ------------------------------------------------------------


def report_table(report: dict) -> str:
    if report["kind"] == "compare":
        lines = [f"{'strategy':<10}  {'AA':>12}  {'OA':>12}  {'Kappa':>12}"]
        for row in report["rows"]:
            m = row["metrics"]
            cells = [f"{100 * m[k]:6.2f}±{100 * m['std'][k]:5.2f}" for k in ("aa", "oa", "kappa")]
            lines.append(f"{row['strategy']:<10}  " + "  ".join(f"{c:>12}" for c in cells))
        return "\n".join(lines)
    lines = [f"{report['param']:<10}  {'AA':>12}  {'OA':>12}  {'Kappa':>12}"]
    for row in report["rows"]:
        m = row["metrics"]
        cells = [f"{100 * m[k]:6.2f}±{100 * m['std'][k]:5.2f}" for k in ("aa", "oa", "kappa")]
        lines.append(f"{str(row['value']):<10}  " + "  ".join(f"{c:>12}" for c in cells))
    return "\n".join(lines)


def write_report(report: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report, indent=2))
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    label_key = "strategy" if report["kind"] == "compare" else "value"
    with open(plots / f"{report['kind']}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([label_key, "aa", "aa_std", "oa", "oa_std", "kappa", "kappa_std"])
        for row in report["rows"]:
            m = row["metrics"]
            w.writerow([row[label_key], m["aa"], m["std"]["aa"], m["oa"], m["std"]["oa"], m["kappa"], m["std"]["kappa"]])
    _plot(report, plots / f"{report['kind']}.png", label_key)
    return path


def _plot(report: dict, path: Path, label_key: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [str(r[label_key]) for r in report["rows"]]
    aa = [100 * r["metrics"]["aa"] for r in report["rows"]]
    err = [100 * r["metrics"]["std"]["aa"] for r in report["rows"]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if report["kind"] == "compare":
        ax.bar(labels, aa, yerr=err, capsize=3)
    else:
        ax.errorbar(labels, aa, yerr=err, marker="o", capsize=3)
        ax.set_xlabel(report["param"])
    ax.set_ylabel("AA (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def budget_gap(report: dict, batch_size: int) -> dict:
    """Pretraining step counts per strategy and the slack allowed by one full epoch."""
    steps = {row["strategy"]: [r["pretrain_steps"] for r in row["runs"]] for row in report["rows"]}
    return {"steps": steps, "epoch_slack": math.ceil(report["pretrain_size"] / batch_size)}
