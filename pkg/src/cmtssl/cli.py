"""``cmtssl`` command line: synth, score, plan, pretrain, finetune, eval, compare, correlate, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, parse_value
from .errors import CMTSSLError

log = logging.getLogger("cmtssl")


class UsageError(Exception):
    pass


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = parse_value(value.strip())
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "strategy", None) is not None:
        out["strategy"] = args.strategy
    return out


def _run_dir(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CMTSSLError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args):
    from .data import save_scene
    from .experiment import grid_regions
    from .synthetic import SyntheticSpec, generate_scene

    out = Path(args.out)
    amps = [float(a) for a in args.amplitudes.split(",")]
    split_regions = []
    for i in range(args.count):
        spec = SyntheticSpec(height=args.size, width=args.size, bands=args.bands, num_classes=args.classes,
                             texture_amplitude=amps, noise_std=args.noise, seed=args.seed + i,
                             name=f"{args.name}-{i}" if args.count > 1 else args.name)
        scene = generate_scene(spec)
        path = save_scene(scene, out, args.format)
        split_regions += [
            dict(vars(r)) for r in grid_regions(scene.name, scene.height, scene.width, max(16, args.size // 4),
                                                ["train", "train", "validation", "test"])
        ]
        print(path)
    _write_json({"tile_size": 16, "pretrain_stride": 8, "regions": split_regions}, out / "split.json")
    return 0


def cmd_score(args):
    from .data import SplitSpec, fit_normalizer, list_scenes, load_scene, normalize, scene_format, tile_scene
    from .difficulty import score_many

    paths = list_scenes(args.input)
    if not paths:
        raise CMTSSLError(f"no scenes found in {args.input}")
    spec = SplitSpec.whole_scene("train", tile_size=args.tile)
    cubes = []
    for p in paths:
        cubes += tile_scene(load_scene(p, scene_format(p)), spec, "train")
    if not cubes:
        raise CMTSSLError("no full tiles fit in the input scenes")
    if not args.raw:
        stats = fit_normalizer(cubes)
        cubes = [normalize(c, stats) for c in cubes]
    scores = score_many(cubes, args.aggregation)
    with _open_out(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["cube_id", "score"])
        for c, s in zip(cubes, scores):
            w.writerow([c.cube_id, repr(float(s))])
    return 0


class _open_out:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = sys.stdout
        else:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(self.path, "w", newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()


def _read_column(path, column):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "cube_id" not in reader.fieldnames:
            raise CMTSSLError(f"{path}: expected a 'cube_id' column")
        col = column if column in reader.fieldnames else reader.fieldnames[1]
        return {row["cube_id"]: float(row[col]) for row in reader}


def cmd_correlate(args):
    from .difficulty import correlate_difficulty_with_loss

    scores = _read_column(args.scores, "score")
    losses = _read_column(args.losses, "loss")
    ids = [k for k in scores if k in losses]
    if len(ids) < 3:
        raise CMTSSLError(f"only {len(ids)} cube ids shared between score and loss files")
    rep = correlate_difficulty_with_loss([scores[i] for i in ids], [losses[i] for i in ids],
                                         args.aggregation, args.task)
    _write_json(rep.to_dict(), args.out)
    return 0


def cmd_plan(args):
    from .curriculum import CurriculumSchedule, format_plan

    print(format_plan(CurriculumSchedule(args.n, args.s, args.k, args.f), args.batch_size))
    return 0


def _plot_losses(tlog, plots: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots.mkdir(parents=True, exist_ok=True)
    keys = ["L_spa", "L_spe", "L_mim", "L_total"]
    with open(plots / "losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "stage", "epoch", *keys])
        for r in tlog.records:
            w.writerow([r["step"], r["stage"], r["epoch"], *[r[k] for k in keys]])
    if not tlog.records:
        return
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in tlog.records]
    for k in keys:
        ax.plot(steps, [r[k] for r in tlog.records], label=k, lw=0.8)
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    fig.savefig(plots / "losses.png", dpi=100)
    plt.close(fig)


def cmd_pretrain(args):
    from .experiment import encoder_spec, load_data, pretext_model
    from .training import pretrain

    cfg = RunConfig.resolve(args.config, _overrides(args))
    out = _run_dir(args.out, args.force)
    cfg.save(out / "config.snapshot")
    data = load_data(cfg)
    if not data["pretrain"]:
        raise CMTSSLError("no pretraining tiles; assign a train or pretrain region")
    enc = encoder_spec(cfg, data)
    model = pretext_model(cfg, enc, int(cfg["seed"]))
    tcfg = cfg.train_config()

    def progress(k, e, step, rec):
        if rec is not None:
            log.info("stage %d epoch %d step %d L_total %.4f", k, e, step, rec["L_total"])

    snapshot = dict(cfg.data, normalization_stats=data.stats.to_dict())
    model, tlog = pretrain(data["pretrain"], model, cfg.loss_weights(), tcfg,
                           validation=data["validation"] or None, checkpoint_dir=out / "ckpt",
                           config_snapshot=snapshot, progress=progress)
    tlog.write_jsonl(out / "log.jsonl")
    _plot_losses(tlog, out / "plots")
    summary = {
        "strategy": tcfg.strategy,
        "pretrain_tiles": len(data["pretrain"]),
        "steps": tlog.steps,
        "checkpoints": tlog.checkpoints,
        "final": tlog.records[-1] if tlog.records else None,
        "parameters": model.parameter_count(),
    }
    _write_json(summary, out / "report.json")
    print(json.dumps(summary, indent=2))
    return 0


def _config_from_checkpoint(meta: dict, args) -> RunConfig:
    stored = {k: v for k, v in meta.get("config", {}).items() if k != "normalization_stats"}
    cfg = RunConfig(stored) if stored else RunConfig()
    if args.config:
        cfg = RunConfig.resolve(args.config)
    for k, v in _overrides(args).items():
        cfg.set(k, v)
    cfg.validate()
    return cfg


def _stored_stats(meta: dict):
    from .data import NormStats

    raw = meta.get("config", {}).get("normalization_stats") or meta.get("extra", {}).get("normalization_stats")
    return NormStats.from_dict(raw) if raw else None


def cmd_finetune(args):
    from .experiment import encoder_spec, evaluate_model, load_data
    from .model import HeadSpec, build_model, load_checkpoint, save_checkpoint
    from .training import finetune

    if args.init:
        model, meta = load_checkpoint(args.init)
        cfg = _config_from_checkpoint(meta, args)
        data = load_data(cfg, _stored_stats(meta))
    else:
        cfg = RunConfig.resolve(args.config, _overrides(args))
        data = load_data(cfg)
        model = build_model(encoder_spec(cfg, data), [HeadSpec("segmentation", (data.num_classes,))],
                            seed=int(cfg["seed"]))
    if data.num_classes is None:
        raise CMTSSLError("scenes carry no labels; cannot fine-tune")
    out = _run_dir(args.out, args.force)
    cfg.save(out / "config.snapshot")
    fcfg = cfg.finetune_config()
    if args.freeze_encoder:
        fcfg.freeze_encoder = True
    train = data[args.labels]
    if not train:
        raise CMTSSLError(f"split {args.labels!r} has no tiles")
    seg, tlog = finetune(model, train, data.num_classes, fcfg, validation=data["validation"] or None)
    tlog.write_jsonl(out / "log.jsonl")
    snapshot = dict(cfg.data, normalization_stats=data.stats.to_dict())
    save_checkpoint(seg, out / "model", snapshot, {"num_classes": data.num_classes, "init": args.init})
    report = {"steps": tlog.steps, "trainable_parameters": seg.parameter_count(trainable_only=True)}
    if data["validation"]:
        report["validation"] = evaluate_model(seg, data["validation"], data.num_classes).to_dict()
    _write_json(report, out / "report.json")
    print(json.dumps(report, indent=2))
    return 0


def cmd_eval(args):
    from .experiment import evaluate_model, load_data
    from .model import load_checkpoint

    model, meta = load_checkpoint(args.model)
    if "segmentation" not in model.heads:
        raise CMTSSLError(f"{args.model} has no segmentation head; fine-tune it first")
    cfg = _config_from_checkpoint(meta, args)
    data = load_data(cfg, _stored_stats(meta))
    cubes = data[args.split]
    if not cubes:
        raise CMTSSLError(f"split {args.split!r} has no tiles")
    num_classes = model.head_specs["segmentation"].shape[0]
    report = evaluate_model(model, cubes, num_classes)
    out = report.to_dict(per_class=args.per_class)
    out["split"] = args.split
    out["pixels"] = int(sum(int((c.labels >= 0).sum()) for c in cubes))
    _write_json(out, args.out)
    if args.out not in (None, "-"):
        print(f"OA {100 * report.oa:.2f}  AA {100 * report.aa:.2f}  Kappa {100 * report.kappa:.2f}")
    return 0


def _seed_list(cfg: RunConfig, n: int) -> list[int]:
    base = int(cfg["seed"])
    return [base + i for i in range(n)]


def cmd_compare(args):
    from .experiment import compare, report_table

    cfg = RunConfig.resolve(args.config, _overrides(args))
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    out = _run_dir(args.out, args.force) if args.out else None
    if out:
        cfg.save(out / "config.snapshot")
    report = compare(cfg, strategies, _seed_list(cfg, args.seeds), out, workers=args.workers)
    print(report_table(report))
    return 0


def cmd_sweep(args):
    from .experiment import report_table, sweep

    cfg = RunConfig.resolve(args.config, _overrides(args))
    values = [parse_value(v) for v in args.values.split(",")]
    out = _run_dir(args.out, args.force) if args.out else None
    if out:
        cfg.save(out / "config.snapshot")
    report = sweep(cfg, args.param, values, _seed_list(cfg, args.seeds), out, workers=args.workers,
                   strategy=args.sweep_strategy)
    print(report_table(report))
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmtssl", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp, out_required=True):
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    sp = sub.add_parser("synth", help="write synthetic labelled scenes")
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--bands", type=int, default=32)
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--amplitudes", default="0,0.25,0.5,1,2")
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--name", default="synthetic")
    sp.add_argument("--format", default="raw-tensor-container", choices=["raw-tensor-container", "delimited-matrix"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("score", help="difficulty score per tile")
    sp.add_argument("--input", required=True, help="directory of scene containers")
    sp.add_argument("--aggregation", default="average", choices=["average", "maximum", "std"])
    sp.add_argument("--tile", type=int, default=16)
    sp.add_argument("--raw", action="store_true", help="score un-normalized tiles")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("correlate", help="Pearson correlation of scores and losses")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--losses", required=True)
    sp.add_argument("--task", default="mim", choices=["mim", "jps"])
    sp.add_argument("--aggregation", default="average", choices=["average", "maximum", "std"])
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_correlate)

    sp = sub.add_parser("plan", help="print the curriculum batch table")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--s", type=int, default=3)
    sp.add_argument("--k", type=int, default=32)
    sp.add_argument("--f", type=float, default=1.5)
    sp.add_argument("--batch-size", type=int)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("pretrain", help="multi-task pretext pretraining")
    run_opts(sp)
    sp.add_argument("--strategy", choices=["mim", "jps", "mtssl", "cmtssl"])
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="supervised segmentation fine-tuning")
    run_opts(sp)
    sp.add_argument("--init", help="pretrained checkpoint (omit to train from scratch)")
    sp.add_argument("--labels", default="train", choices=["train", "validation", "test"])
    sp.add_argument("--freeze-encoder", action="store_true")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="OA / AA / Kappa of a fine-tuned model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", default="test", choices=["train", "validation", "test"])
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--per-class", action="store_true")
    sp.add_argument("--out", default="-")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="strategy comparison over seeds")
    run_opts(sp, out_required=False)
    sp.add_argument("--strategies", default="scratch,mim,jps,mtssl,cmtssl")
    sp.add_argument("--seeds", type=int, default=3, help="number of seeds, counting up from --seed")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("sweep", help="vary one hyperparameter, others fixed")
    run_opts(sp, out_required=False)
    sp.add_argument("--param", required=True, help="F, K, S, alpha_spa, alpha_spe, alpha_mim, ratio or a dotted key")
    sp.add_argument("--values", required=True)
    sp.add_argument("--seeds", type=int, default=1)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--strategy", dest="sweep_strategy", default="cmtssl")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CMTSSLError, OSError, ValueError, KeyError) as exc:
        print(f"cmtssl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
