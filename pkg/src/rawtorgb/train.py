"""Two-phase training, checkpointing, evaluation, and output ensembling.

Phase 1 trains the stage-1 U-Net against its own RGB output; phase 2
freezes stage 1 and trains the refinement U-Net on the cascade output.
The learning rate is lr_initial except on each phase's final epoch,
which uses lr_final.  All losses are computed in normalized target
space; metrics are computed after denormalizing and clamping.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import config_digest, read_container, write_container
from .data import NormStats, batch_iterator, compute_norm_stats
from .losses import FeatureExtractor, LossConfig, total_loss
from .metrics import psnr, ssim
from .model import ModelConfig, TwoStageModel
from .optim import Adam
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 24
    stage1_epochs: int = 100
    stage2_epochs: int = 25
    # optional hard caps in optimizer steps; an exhausted cap ends the phase
    stage1_steps: int | None = None
    stage2_steps: int | None = None
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only

    def validate(self) -> None:
        if self.stage1_epochs < 1 or self.stage2_epochs < 0:
            raise ValueError("stage1_epochs must be >= 1 and stage2_epochs >= 0")
        if self.lr_final > self.lr_initial:
            raise ValueError(f"lr_final {self.lr_final} exceeds lr_initial {self.lr_initial}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        self.loss.validate()

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "batch_size", "stage1_epochs", "stage2_epochs", "stage1_steps",
            "stage2_steps", "lr_initial", "lr_final", "beta1", "beta2",
            "epsilon", "seed", "checkpoint_every")}
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossConfig.from_dict(d.get("loss", {}))
        cfg = cls(**d)
        cfg.validate()
        return cfg


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes NaN; carries the last good checkpoint."""

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    model: TwoStageModel
    stats: NormStats
    history: list
    checkpoint_path: str | None = None


def train(samples, model_cfg: ModelConfig, train_cfg: TrainConfig,
          fx: FeatureExtractor | None = None, out_dir: str | None = None,
          stats: NormStats | None = None, log=None) -> TrainResult:
    """Run both phases over the sample list; deterministic given the seed."""
    model_cfg.validate()
    train_cfg.validate()
    if train_cfg.loss.use_feat and fx is None:
        raise ValueError("loss config enables the feature term but no extractor was given")
    if stats is None:
        stats = compute_norm_stats(samples)

    model = TwoStageModel(model_cfg, seed=train_cfg.seed)
    history: list = []
    tracker = _CheckpointTracker(out_dir, model, train_cfg, stats)

    _run_phase(model, samples, stats, train_cfg, fx, stage=1,
               epochs=train_cfg.stage1_epochs, step_cap=train_cfg.stage1_steps,
               history=history, tracker=tracker, log=log)
    if train_cfg.stage2_epochs > 0:
        model.set_stage_trainable(1, False)
        _run_phase(model, samples, stats, train_cfg, fx, stage=2,
                   epochs=train_cfg.stage2_epochs, step_cap=train_cfg.stage2_steps,
                   history=history, tracker=tracker, log=log)

    path = tracker.save_final()
    return TrainResult(model=model, stats=stats, history=history, checkpoint_path=path)


class _CheckpointTracker:
    def __init__(self, out_dir, model, train_cfg, stats):
        self.out_dir = out_dir
        self.model = model
        self.train_cfg = train_cfg
        self.stats = stats
        self.last_path: str | None = None

    def save(self, tag: str, phase: int, epoch: int) -> str | None:
        if self.out_dir is None:
            return None
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, f"wnet-{tag}.ckpt")
        save_checkpoint(path, self.model, self.train_cfg, self.stats,
                        extra={"phase": phase, "epoch": epoch})
        self.last_path = path
        return path

    def maybe_save_periodic(self, phase: int, epoch: int) -> None:
        every = self.train_cfg.checkpoint_every
        if every > 0 and (epoch + 1) % every == 0:
            self.save(f"phase{phase}-epoch{epoch + 1:04d}", phase, epoch + 1)

    def save_final(self) -> str | None:
        return self.save("final", 2 if self.train_cfg.stage2_epochs else 1, -1)


def _run_phase(model, samples, stats, cfg: TrainConfig, fx, stage: int,
               epochs: int, step_cap, history, tracker, log) -> None:
    if epochs < 1:
        return
    opt = Adam(model.stage_parameters(stage), beta1=cfg.beta1, beta2=cfg.beta2,
               epsilon=cfg.epsilon)
    forward_stage = "1" if stage == 1 else "both"
    steps_done = 0
    for epoch in range(epochs):
        lr = cfg.lr_final if epoch == epochs - 1 else cfg.lr_initial
        sums: dict[str, float] = {}
        batches = 0
        for raws, targets in batch_iterator(samples, cfg.batch_size,
                                            cfg.seed + stage, epoch=epoch):
            x = Tensor(stats.normalize_input(raws))
            t = Tensor(stats.normalize_target(targets))
            rgb1, rgb2 = model.forward(x, stage=forward_stage)
            pred = rgb1 if stage == 1 else rgb2
            loss, breakdown = total_loss(pred, t, cfg.loss, fx=fx, stats=stats)
            if math.isnan(breakdown["total"]):
                raise TrainingDiverged(
                    f"loss became NaN at phase {stage}, epoch {epoch}, step {steps_done}"
                    + (f"; last good checkpoint: {tracker.last_path}"
                       if tracker.last_path else "; no checkpoint was written"),
                    last_checkpoint=tracker.last_path)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
            steps_done += 1
            if step_cap is not None and steps_done >= step_cap:
                break
        record = {"phase": stage, "epoch": epoch, "lr": lr, "steps": steps_done}
        record.update({k: v / batches for k, v in sums.items()})
        history.append(record)
        if log is not None:
            log(record)
        tracker.maybe_save_periodic(stage, epoch)
        if step_cap is not None and steps_done >= step_cap:
            break


# ---------------------------------------------------------------------------
# checkpoint container composition
# ---------------------------------------------------------------------------

CHECKPOINT_KIND = "wnet-checkpoint"


def save_checkpoint(path, model: TwoStageModel, train_cfg: TrainConfig | None = None,
                    stats: NormStats | None = None, extra: dict | None = None) -> None:
    metadata = {
        "kind": CHECKPOINT_KIND,
        "model_config": model.config.to_dict(),
        "train_config": train_cfg.to_dict() if train_cfg else None,
        "norm_stats": stats.to_dict() if stats else None,
        "extra": extra or {},
    }
    write_container(path, model.state_arrays(), metadata)


@dataclass
class CheckpointBundle:
    model: TwoStageModel
    stats: NormStats | None
    train_cfg: TrainConfig | None
    metadata: dict


def load_checkpoint(path) -> CheckpointBundle:
    container = read_container(path)
    meta = container.metadata
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path}: not a model checkpoint (kind={meta.get('kind')!r})")
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    model = TwoStageModel(model_cfg, seed=0)
    model.load_state(container.tensors)
    stats = NormStats.from_dict(meta["norm_stats"]) if meta.get("norm_stats") else None
    train_cfg = (TrainConfig.from_dict(meta["train_config"])
                 if meta.get("train_config") else None)
    return CheckpointBundle(model=model, stats=stats, train_cfg=train_cfg, metadata=meta)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    count: int
    psnr_values: list
    ssim_values: list
    mean_psnr: float
    mean_ssim: float
    loss_breakdown: dict | None
    config_digest: str

    def to_text(self) -> str:
        lines = [
            "eval-report v1",
            f"config_digest = {self.config_digest}",
            f"images = {self.count}",
            f"mean_psnr_db = {_fmt(self.mean_psnr)}",
            f"mean_ssim = {_fmt(self.mean_ssim)}",
        ]
        if self.loss_breakdown:
            for k in sorted(self.loss_breakdown):
                lines.append(f"loss_{k} = {_fmt(self.loss_breakdown[k])}")
        lines.append("")
        lines.append("index\tpsnr_db\tssim")
        for i, (p, s) in enumerate(zip(self.psnr_values, self.ssim_values)):
            lines.append(f"{i}\t{_fmt(p)}\t{_fmt(s)}")
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def predict_display(model: TwoStageModel, raws: np.ndarray, stats: NormStats,
                    stage: str = "both") -> np.ndarray:
    """Denormalized, [0,1]-clamped RGB for a (B, C, H, W) raw batch."""
    with T.no_grad():
        x = Tensor(stats.normalize_input(raws))
        rgb1, rgb2 = model.forward(x, stage=stage)
        out = rgb1 if rgb2 is None else rgb2
    return np.clip(stats.denormalize_target(out.data.astype(np.float64)), 0.0, 1.0)


def evaluate(model: TwoStageModel, samples, stats: NormStats,
             loss_cfg: LossConfig | None = None, fx: FeatureExtractor | None = None,
             stage: str = "both", batch_size: int = 8) -> EvalReport:
    """Side-effect-free metrics over a sample list, in deterministic order."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    psnrs: list[float] = []
    ssims: list[float] = []
    loss_sums: dict[str, float] = {}
    loss_batches = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        raws = np.stack([s.raw for s in chunk])
        targets = np.stack([s.target_rgb for s in chunk])
        preds = predict_display(model, raws, stats, stage=stage)
        for i in range(len(chunk)):
            psnrs.append(psnr(preds[i], targets[i].astype(np.float64)))
            ssims.append(ssim(preds[i], targets[i].astype(np.float64)))
        if loss_cfg is not None:
            with T.no_grad():
                x = Tensor(stats.normalize_input(raws))
                rgb1, rgb2 = model.forward(x, stage=stage)
                pred = rgb1 if rgb2 is None else rgb2
                _, breakdown = total_loss(pred, Tensor(stats.normalize_target(targets)),
                                          loss_cfg, fx=fx, stats=stats)
            for k, v in breakdown.items():
                loss_sums[k] = loss_sums.get(k, 0.0) + v
            loss_batches += 1
    breakdown = ({k: v / loss_batches for k, v in loss_sums.items()}
                 if loss_batches else None)
    digest = config_digest({
        "model_config": model.config.to_dict(),
        "loss_config": loss_cfg.to_dict() if loss_cfg else None,
        "stage": stage,
    })
    return EvalReport(
        count=len(samples),
        psnr_values=psnrs,
        ssim_values=ssims,
        mean_psnr=float(np.mean(psnrs)),
        mean_ssim=float(np.mean(ssims)),
        loss_breakdown=breakdown,
        config_digest=digest,
    )


# ---------------------------------------------------------------------------
# ensembling
# ---------------------------------------------------------------------------


def ensemble_average(predictions) -> np.ndarray:
    """Pixelwise mean of display-space predictions.

    Identical inputs short-circuit to an exact copy, so averaging K
    copies of one image returns that image bit-for-bit.
    """
    predictions = [np.asarray(p) for p in predictions]
    if not predictions:
        raise ValueError("ensemble_average needs at least one prediction")
    first = predictions[0]
    for i, p in enumerate(predictions[1:], start=1):
        if p.shape != first.shape:
            raise ValueError(
                f"prediction {i} shape {p.shape} differs from {first.shape}")
    if all(np.array_equal(p, first) for p in predictions[1:]):
        return first.copy()
    acc = np.zeros(first.shape, dtype=np.float64)
    for p in predictions:
        acc += p
    return acc / len(predictions)


def ensemble_evaluate(members, samples, batch_size: int = 8) -> EvalReport:
    """Average display-space outputs of (model, stats) pairs, then score."""
    members = list(members)
    if not members:
        raise ValueError("ensemble needs at least one member")
    samples = list(samples)
    psnrs: list[float] = []
    ssims: list[float] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        raws = np.stack([s.raw for s in chunk])
        targets = np.stack([s.target_rgb for s in chunk])
        preds = ensemble_average([predict_display(m, raws, st) for m, st in members])
        for i in range(len(chunk)):
            psnrs.append(psnr(preds[i], targets[i].astype(np.float64)))
            ssims.append(ssim(preds[i], targets[i].astype(np.float64)))
    digest = config_digest({
        "ensemble": [m.config.to_dict() for m, _ in members],
    })
    return EvalReport(
        count=len(samples), psnr_values=psnrs, ssim_values=ssims,
        mean_psnr=float(np.mean(psnrs)), mean_ssim=float(np.mean(ssims)),
        loss_breakdown=None, config_digest=digest,
    )
