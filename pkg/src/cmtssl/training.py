"""Multi-task pretext pretraining with a curriculum, plus supervised fine-tuning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as Fn

from .curriculum import CurriculumSchedule, baseline_epochs, mini_batches
from .data import IGNORE_ID, DataCube, stack_labels, stack_values
from .difficulty import score_many
from .errors import ConfigurationError, DataError, DegenerateInputError, DivergenceError
from .model import MultiTaskModel, save_checkpoint
from .pretext import (
    MaskingConfig,
    SpatialJigsawConfig,
    SpectralJigsawConfig,
    cube_rng,
    mask_cube,
    spatial_jigsaw,
    spectral_jigsaw,
)

log = logging.getLogger(__name__)

STRATEGIES = ("scratch", "mim", "jps", "mtssl", "cmtssl")
TASKS = ("spatial", "spectral", "mim")


@dataclass(frozen=True)
class LossWeights:
    spa: float = 1.0
    spe: float = 1.0
    mim: float = 4.0

    def __post_init__(self):
        if min(self.spa, self.spe, self.mim) < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if max(self.spa, self.spe, self.mim) <= 0:
            raise ConfigurationError("at least one loss weight must be positive")

    def for_task(self, task: str) -> float:
        return {"spatial": self.spa, "spectral": self.spe, "mim": self.mim}[task]

    def active(self) -> tuple[str, ...]:
        return tuple(t for t in TASKS if self.for_task(t) > 0)

    def for_strategy(self, strategy: str) -> "LossWeights":
        if strategy == "mim":
            return LossWeights(0.0, 0.0, self.mim or 1.0)
        if strategy == "jps":
            return LossWeights(self.spa or 1.0, self.spe or 1.0, 0.0)
        return self


@dataclass
class TrainConfig:
    strategy: str = "cmtssl"
    learning_rate: float = 5e-4
    batch_size: int = 16
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    # curriculum (used by cmtssl; also defines the step budget the baselines match)
    S: int = 3
    K: int = 32
    F: float = 1.5
    # full-dataset epochs for non-curriculum strategies; None -> match the curriculum budget
    epochs: int | None = None
    aggregation: str = "average"
    spatial: SpatialJigsawConfig = field(default_factory=SpatialJigsawConfig)
    spectral: SpectralJigsawConfig = field(default_factory=SpectralJigsawConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def steps(self) -> int:
        return len(self.records)

    def losses(self, key: str = "L_total") -> list[float]:
        return [r[key] for r in self.records]

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps({"type": "step", **r}) + "\n")
            for r in self.validation:
                fh.write(json.dumps({"type": "validation", **r}) + "\n")
            fh.write(json.dumps({"type": "summary", "steps": self.steps, "wall_clock": self.wall_clock,
                                 "checkpoints": self.checkpoints}) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        out = cls()
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "step":
                out.records.append(rec)
            elif kind == "validation":
                out.validation.append(rec)
            else:
                out.wall_clock = rec["wall_clock"]
                out.checkpoints = rec["checkpoints"]
        return out


# -- losses -------------------------------------------------------------------


def loss_jigsaw(target, logits) -> torch.Tensor:
    """Mean binary cross-entropy over all N^2 permutation-matrix entries, from logits."""
    target = torch.as_tensor(target, dtype=logits.dtype)
    if target.shape != logits.shape:
        raise DataError(f"target shape {tuple(target.shape)} != logits shape {tuple(logits.shape)}")
    if not torch.all((target == 0) | (target == 1)):
        raise DataError("jigsaw targets must be binary")
    return Fn.binary_cross_entropy_with_logits(logits, target)


loss_spatial = loss_jigsaw
loss_spectral = loss_jigsaw


def loss_mim(target, reconstruction, mask) -> torch.Tensor:
    """Mean absolute error over masked voxels only.

    ``target`` is either the original cube (same shape as ``reconstruction``)
    or the flat vector of original values at the masked voxels.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise DegenerateInputError("empty mask; masked MAE undefined")
    target = torch.as_tensor(target, dtype=reconstruction.dtype)
    picked = reconstruction[mask]
    if target.shape == reconstruction.shape:
        target = target[mask]
    return (picked - target).abs().mean()


# -- pretext batch construction -------------------------------------------------


@dataclass
class PretextBatch:
    spa: np.ndarray | None = None
    y_spa: np.ndarray | None = None
    spe: np.ndarray | None = None
    y_spe: np.ndarray | None = None
    vis: np.ndarray | None = None
    original: np.ndarray | None = None
    mask: np.ndarray | None = None


def make_pretext_batch(values: np.ndarray, indices: Sequence[int], cfg: TrainConfig, tasks: Sequence[str],
                       stage: int, epoch: int) -> PretextBatch:
    """Generate every active task for the cubes at ``indices``; randomness keyed per cube and visit."""
    spa, y_spa, spe, y_spe, vis, mask = [], [], [], [], [], []
    for i in indices:
        cube = values[i]
        rng = cube_rng(cfg.seed, 1, stage, epoch, int(i))
        if "spatial" in tasks:
            s = spatial_jigsaw(cube, cfg.spatial, rng)
            spa.append(s.shuffled)
            y_spa.append(s.target)
        if "spectral" in tasks:
            s = spectral_jigsaw(cube, cfg.spectral, rng)
            spe.append(s.shuffled)
            y_spe.append(s.target)
        if "mim" in tasks:
            m = mask_cube(cube, cfg.masking, rng)
            vis.append(m.visible)
            mask.append(m.mask)
    b = PretextBatch()
    if spa:
        b.spa, b.y_spa = np.stack(spa), np.stack(y_spa)
    if spe:
        b.spe, b.y_spe = np.stack(spe), np.stack(y_spe)
    if vis:
        b.vis, b.mask = np.stack(vis), np.stack(mask)
        b.original = values[np.asarray(indices)]
    return b


def pretext_losses(model: MultiTaskModel, batch: PretextBatch) -> dict[str, torch.Tensor]:
    out = model.forward_pretext(
        spa=None if batch.spa is None else torch.from_numpy(batch.spa),
        spe=None if batch.spe is None else torch.from_numpy(batch.spe),
        vis=None if batch.vis is None else torch.from_numpy(batch.vis),
    )
    losses = {}
    if "spatial" in out:
        losses["spatial"] = loss_spatial(torch.from_numpy(batch.y_spa), out["spatial"])
    if "spectral" in out:
        losses["spectral"] = loss_spectral(torch.from_numpy(batch.y_spe), out["spectral"])
    if "mim" in out:
        losses["mim"] = loss_mim(torch.from_numpy(batch.original), out["mim"], torch.from_numpy(batch.mask))
    return losses


def weighted_total(losses: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return sum(weights.for_task(t) * losses[t] for t in losses)


def loss_gradient_norms(model: MultiTaskModel, batch: PretextBatch, weights: LossWeights) -> dict[str, float]:
    """Norm of each weighted loss term's gradient w.r.t. the shared encoder (a balancing diagnostic)."""
    losses = pretext_losses(model, batch)
    params = [p for p in model.encoder.parameters() if p.requires_grad]
    norms = {}
    for task, loss in losses.items():
        grads = torch.autograd.grad(weights.for_task(task) * loss, params, retain_graph=True, allow_unused=True)
        norms[task] = float(torch.sqrt(sum((g ** 2).sum() for g in grads if g is not None)))
    return norms


# -- pretraining ------------------------------------------------------------------


def _as_stack(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return np.ascontiguousarray(dataset, dtype=np.float32)
    return stack_values(dataset)


def _optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=cfg.learning_rate, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)


def plan_stages(n: int, cfg: TrainConfig, scores: np.ndarray | None = None) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Data order and (size, epochs) per stage for the configured strategy."""
    schedule = CurriculumSchedule(n, cfg.S, cfg.K, cfg.F)
    if cfg.strategy == "cmtssl":
        if scores is None:
            raise ConfigurationError("cmtssl needs difficulty scores")
        order = np.argsort(np.asarray(scores), kind="stable")
        return order, list(zip(schedule.sizes, schedule.epochs))
    epochs = cfg.epochs if cfg.epochs is not None else baseline_epochs(schedule, cfg.batch_size)
    return np.arange(n), [(n, epochs)]


def set_determinism():
    torch.use_deterministic_algorithms(True, warn_only=True)


def train_step(model: MultiTaskModel, optimizer, batch: PretextBatch, weights: LossWeights) -> dict[str, float]:
    """One update: heads move along their own loss gradient, the encoder along the weighted total."""
    losses = pretext_losses(model, batch)
    total = weighted_total(losses, weights)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    for task in losses:
        # backward of the total hands each head alpha * grad; undo the factor
        alpha = weights.for_task(task)
        for p in model.heads[task].parameters():
            if p.grad is not None:
                p.grad.div_(alpha)
    optimizer.step()
    rec = {key: float(losses[t].detach()) if t in losses else 0.0
           for key, t in (("L_spa", "spatial"), ("L_spe", "spectral"), ("L_mim", "mim"))}
    rec["L_total"] = float(total.detach())
    return rec


def pretrain(dataset, model: MultiTaskModel, weights: LossWeights, cfg: TrainConfig,
             validation=None, checkpoint_dir=None, config_snapshot: dict | None = None,
             progress=None) -> tuple[MultiTaskModel, TrainLog]:
    """Stage / epoch / mini-batch pretext training.

    ``cmtssl`` sorts by difficulty and walks the cumulative curriculum;
    ``mtssl``, ``mim`` and ``jps`` train on the full set in input order for
    ``cfg.epochs`` (default: the curriculum's step budget). ``scratch`` is a
    no-op.
    """
    set_determinism()
    tlog = TrainLog()
    if cfg.strategy == "scratch":
        return model, tlog
    weights = weights.for_strategy(cfg.strategy)
    tasks = weights.active()
    missing = [t for t in tasks if t not in model.heads]
    if missing:
        raise ConfigurationError(f"model lacks heads for active tasks {missing}")

    values = _as_stack(dataset)
    n = len(values)
    scores = score_many(values, cfg.aggregation) if cfg.strategy == "cmtssl" else None
    order, stages = plan_stages(n, cfg, scores)

    params = list(model.encoder.parameters())
    for t in tasks:
        params += list(model.heads[t].parameters())
    optimizer = _optimizer(params, cfg)
    val_values = None if validation is None or len(validation) == 0 else _as_stack(validation)

    start = time.perf_counter()
    step = 0
    last_ckpt = None
    for k, (size, epochs) in enumerate(stages, start=1):
        members = order[:size]
        for e in range(1, epochs + 1):
            shuffle_rng = cube_rng(cfg.seed, 0, k, e)
            for mb in mini_batches(members, cfg.batch_size, shuffle_rng):
                batch = make_pretext_batch(values, mb, cfg, tasks, k, e)
                rec = train_step(model, optimizer, batch, weights)
                step += 1
                if not np.isfinite(rec["L_total"]):
                    raise DivergenceError(f"non-finite loss at stage {k}, epoch {e}, step {step}", last_ckpt)
                tlog.records.append({"stage": k, "epoch": e, "step": step, **rec})
            if val_values is not None:
                tlog.validation.append({"stage": k, "epoch": e, "step": step,
                                        **evaluate_pretext(model, val_values, cfg, weights)})
            if progress is not None:
                progress(k, e, step, tlog.records[-1] if tlog.records else None)
        if checkpoint_dir is not None:
            extra = {"stage": k, "step": step, "strategy": cfg.strategy}
            last_ckpt = str(save_checkpoint(model, Path(checkpoint_dir) / f"stage-{k}", config_snapshot, extra))
            tlog.checkpoints.append(last_ckpt)
    tlog.wall_clock = time.perf_counter() - start
    return model, tlog


@torch.no_grad()
def evaluate_pretext(model: MultiTaskModel, values: np.ndarray, cfg: TrainConfig, weights: LossWeights,
                     batch_size: int = 64) -> dict[str, float]:
    """Mean pretext losses on fixed (seed-keyed) tasks over ``values``."""
    tasks = weights.active()
    sums = {t: 0.0 for t in tasks}
    n = len(values)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        batch = make_pretext_batch(values, idx, cfg, tasks, 0, 0)
        for t, loss in pretext_losses(model, batch).items():
            sums[t] += float(loss) * len(idx)
    out = {f"val_{t}": s / n for t, s in sums.items()}
    out["val_total"] = sum(weights.for_task(t) * out[f"val_{t}"] for t in tasks)
    return out


@torch.no_grad()
def per_cube_mim_loss(model: MultiTaskModel, values: np.ndarray, masking: MaskingConfig, seed: int = 0) -> np.ndarray:
    """Masked-MAE of the reconstruction head for every cube individually (fixed masks per seed)."""
    values = _as_stack(values)
    out = np.empty(len(values))
    for i, cube in enumerate(values):
        m = mask_cube(cube, masking, cube_rng(seed, 2, i))
        recon = model.forward_mim(torch.from_numpy(m.visible[None]))[0]
        out[i] = float(loss_mim(torch.from_numpy(cube), recon, torch.from_numpy(m.mask)))
    return out


# -- fine-tuning ----------------------------------------------------------------------


@dataclass
class FinetuneConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 30
    # when set, stop after this many optimizer steps
    max_steps: int | None = None
    freeze_encoder: bool = False
    seed: int = 0
    ignore_id: int = IGNORE_ID


def prepare_for_finetune(model: MultiTaskModel, num_classes: int, cfg: FinetuneConfig) -> MultiTaskModel:
    if num_classes < 2:
        raise ConfigurationError("segmentation needs at least 2 classes")
    if "segmentation" in model.heads and model.head_specs["segmentation"].shape[0] == num_classes:
        seg = model
    else:
        seg = model.with_segmentation_head(num_classes, cfg.seed)
    for p in seg.encoder.parameters():
        p.requires_grad_(not cfg.freeze_encoder)
    return seg


def finetune(model: MultiTaskModel, cubes, num_classes: int, cfg: FinetuneConfig, labels=None,
             validation: Sequence[DataCube] | None = None) -> tuple[MultiTaskModel, TrainLog]:
    """Per-pixel cross-entropy training of encoder + segmentation head on labelled pixels."""
    set_determinism()
    values = _as_stack(cubes)
    if labels is None:
        if any(c.labels is None for c in cubes):
            raise DataError("fine-tuning cubes carry no labels")
        labels = stack_labels(cubes)
    labels = np.asarray(labels, dtype=np.int64)
    if not (labels != cfg.ignore_id).any():
        raise DataError("every pixel is unlabelled; nothing to fine-tune on")
    seg = prepare_for_finetune(model, num_classes, cfg)
    params = [p for p in seg.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=cfg.learning_rate, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay)
    target_all = torch.from_numpy(np.where(labels == cfg.ignore_id, -100, labels))

    tlog = TrainLog()
    start = time.perf_counter()
    step = 0
    for e in range(1, cfg.epochs + 1):
        rng = cube_rng(cfg.seed, 3, e)
        for mb in mini_batches(np.arange(len(values)), cfg.batch_size, rng):
            x = torch.from_numpy(values[mb])
            y = target_all[torch.from_numpy(mb)]
            if not bool((y != -100).any()):
                continue
            logits = seg.forward_segmentation(x)
            loss = Fn.cross_entropy(logits.reshape(-1, num_classes), y.reshape(-1), ignore_index=-100)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step += 1
            lv = float(loss.detach())
            if not np.isfinite(lv):
                raise DivergenceError(f"non-finite fine-tuning loss at epoch {e}, step {step}")
            tlog.records.append({"stage": 0, "epoch": e, "step": step, "L_ce": lv})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if validation:
            from .evaluation import confusion, metrics

            pred = predict(seg, validation)
            cm = confusion(pred, stack_labels(validation), num_classes, cfg.ignore_id)
            if cm.total:
                tlog.validation.append({"epoch": e, "step": step, **metrics(cm).to_dict(per_class=False)})
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    tlog.wall_clock = time.perf_counter() - start
    return seg, tlog


@torch.no_grad()
def predict(model: MultiTaskModel, cubes, batch_size: int = 64) -> np.ndarray:
    """Per-pixel arg-max class ids, shape (N, H, W)."""
    values = _as_stack(cubes)
    out = []
    for start in range(0, len(values), batch_size):
        logits = model.forward_segmentation(torch.from_numpy(values[start:start + batch_size]))
        out.append(logits.argmax(dim=-1).numpy())
    return np.concatenate(out) if out else np.zeros((0,) + values.shape[1:3], dtype=np.int64)


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return json.loads(json.dumps(d, default=str))
