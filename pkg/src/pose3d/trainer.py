"""Three-stage training: schedules, fusion batch sampling, and the stage loop.

Stage 1 trains the heatmap head on 2D data only.  Stage 2 adds the depth
head: fusion mode mixes 2D and 3D samples 1:1 per epoch with the geometric
branch off; 3D-exclusive mode trains the depth head alone on 3D data.
Stage 3 fine-tunes with the geometric loss active (fusion) or with reduced
learning rate and depth weight (3D-exclusive).

Default hyperparameters reproduce the published schedule constants exactly;
scale_epochs stretches a schedule (epochs and drop epochs together) to
compensate for smaller 2D datasets.  Every epoch appends one train entry to
the metric log; validation runs every validation_every epochs plus on the
final epoch.  A non-finite loss aborts the stage with the offending batch
identified.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .harmonize import HarmonizedSample
from .heatmap import render_pose_heatmaps
from .losses import (
    DivergenceError,
    LossWeights,
    geometric_per_sample,
    loss_2d_heatmap,
    loss_total,
)
from .metrics import EvalData, evaluate
from .model import ModelConfig, PoseNet, save_checkpoint
from .skeleton import (
    NUM_JOINTS,
    BoneGroup,
    CanonicalPose2D,
    default_bone_groups,
    DEFAULT_SKELETON,
    rest_pose,
)
from .synth import render_pose_image

STAGES = ("s1", "s2", "s3")
MODES = ("fusion", "three_d_only")


class StageOrderError(RuntimeError):
    """Stages were run out of order (e.g. s3 without a completed s2)."""


@dataclass(frozen=True)
class TrainingConfig:
    """One stage's hyperparameters.

    Invariants: drop epochs are strictly increasing and inside the schedule;
    stage 1 is 2D-loss-only (both lambdas zero); fusion stage 2 keeps the
    geometric branch off.
    """

    stage: str
    mode: str = "fusion"
    epochs: int = 1
    batch_size: int = 32
    initial_lr: float = 1e-3
    lr_drop_epochs: tuple[int, ...] = ()
    lr_drop_factor: float = 10.0
    lambda_reg: float = 0.0
    lambda_geo: float = 0.0
    beta: float = 1.0
    epoch_scale: int = 1
    validation_every: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "three_d_only" and self.stage == "s1":
            raise ValueError("3D-exclusive training has no stage s1")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.epoch_scale < 1:
            raise ValueError("epoch_scale must be >= 1")
        if self.validation_every <= 0:
            raise ValueError("validation_every must be positive")
        drops = tuple(self.lr_drop_epochs)
        if any(d2 <= d1 for d1, d2 in zip(drops, drops[1:])):
            raise ValueError("lr_drop_epochs must be strictly increasing")
        if drops and (drops[0] < 0 or drops[-1] >= self.epochs):
            raise ValueError("lr_drop_epochs must lie inside [0, epochs)")
        if self.stage == "s1" and (self.lambda_reg != 0 or self.lambda_geo != 0):
            raise ValueError("stage s1 trains the 2D loss only (lambda_reg = lambda_geo = 0)")
        if self.stage == "s2" and self.mode == "fusion" and self.lambda_geo != 0:
            raise ValueError("fusion stage s2 requires lambda_geo = 0")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(lambda_reg=self.lambda_reg, lambda_geo=self.lambda_geo, beta=self.beta)


_DEFAULTS = {
    ("fusion", "s1"): dict(
        epochs=140, batch_size=32, initial_lr=1e-3, lr_drop_epochs=(90, 120),
        lambda_reg=0.0, lambda_geo=0.0,
    ),
    ("fusion", "s2"): dict(
        epochs=60, batch_size=32, initial_lr=1e-3, lr_drop_epochs=(45,),
        lambda_reg=0.1, lambda_geo=0.0,
    ),
    ("fusion", "s3"): dict(
        epochs=10, batch_size=32, initial_lr=1e-4, lr_drop_epochs=(),
        lambda_reg=0.1, lambda_geo=0.01,
    ),
    ("three_d_only", "s2"): dict(
        epochs=5, batch_size=128, initial_lr=1e-3, lr_drop_epochs=(3,),
        lambda_reg=1.0, lambda_geo=0.0,
    ),
    ("three_d_only", "s3"): dict(
        epochs=2, batch_size=128, initial_lr=1e-4, lr_drop_epochs=(),
        lambda_reg=0.1, lambda_geo=0.0,
    ),
}


def default_config(stage: str, mode: str = "fusion", seed: int = 0) -> TrainingConfig:
    """Published schedule constants for a stage/mode pair."""
    key = (mode, stage)
    if key not in _DEFAULTS:
        raise ValueError(f"no default schedule for stage {stage!r} in mode {mode!r}")
    return TrainingConfig(stage=stage, mode=mode, seed=seed, **_DEFAULTS[key])


def lr_at(config: TrainingConfig, epoch: int) -> float:
    """Learning rate at an epoch: one factor-of-lr_drop_factor cut per drop passed."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    drops = sum(1 for d in config.lr_drop_epochs if d <= epoch)
    return config.initial_lr / config.lr_drop_factor**drops


def scale_epochs(config: TrainingConfig, factor: int) -> TrainingConfig:
    """Multiply the epoch count and every drop epoch by an integer factor."""
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"scale factor must be a positive integer, got {factor}")
    if factor == 1:
        return config
    return replace(
        config,
        epochs=config.epochs * factor,
        lr_drop_epochs=tuple(d * factor for d in config.lr_drop_epochs),
        epoch_scale=config.epoch_scale * factor,
    )


def validation_epochs(config: TrainingConfig) -> list[int]:
    """0-based epochs after which validation runs: every Nth epoch plus the last."""
    every = config.validation_every
    return [
        e for e in range(config.epochs)
        if (e + 1) % every == 0 or e == config.epochs - 1
    ]


@dataclass
class FusionEpochPlan:
    """Per-epoch sample draw: equally many 2D and 3D indices, interleaved."""

    indices_2d: list[int]
    indices_3d: list[int]
    order: list[tuple[str, int]]


def plan_fusion_epoch(data2d, data3d, rng: np.random.Generator) -> FusionEpochPlan:
    """Draw min(|2D|, |3D|) indices from each set without replacement (1:1 rule).

    data2d/data3d may be sample lists or bare sizes.  The merged order
    alternates sources so every batch mixes both.
    """
    n2 = data2d if isinstance(data2d, int) else len(data2d)
    n3 = data3d if isinstance(data3d, int) else len(data3d)
    if n2 == 0 or n3 == 0:
        raise ValueError("fusion training needs nonempty 2D and 3D sets")
    n = min(n2, n3)
    idx2 = [int(i) for i in rng.permutation(n2)[:n]]
    idx3 = [int(i) for i in rng.permutation(n3)[:n]]
    order: list[tuple[str, int]] = []
    for a, b in zip(idx2, idx3):
        order.append(("2d", a))
        order.append(("3d", b))
    return FusionEpochPlan(indices_2d=idx2, indices_3d=idx3, order=order)


def _plan_single(source: str, n: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    return [(source, int(i)) for i in rng.permutation(n)]


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class DataBundle:
    """Training inputs: the 2D-annotated and 3D-annotated sample sets."""

    samples_2d: list[HarmonizedSample] = field(default_factory=list)
    samples_3d: list[HarmonizedSample] = field(default_factory=list)


class SampleBank:
    """Precomputed tensors (images, target heatmaps, labels) for one sample set."""

    def __init__(
        self,
        samples: list[HarmonizedSample],
        image_size: int,
        heatmap_size: int = 64,
        sigma: float = 2.0,
    ):
        usable = [s for s in samples if not s.excluded]
        self.samples = usable
        self.image_size = image_size
        n = len(usable)
        self.images = np.zeros((n, 3, image_size, image_size), dtype=np.float32)
        self.heatmaps = np.zeros((n, NUM_JOINTS, heatmap_size, heatmap_size), dtype=np.float32)
        self.visibility = np.zeros((n, NUM_JOINTS), dtype=np.float32)
        self.depth = np.zeros((n, NUM_JOINTS), dtype=np.float32)
        self.pose2d_px = np.zeros((n, NUM_JOINTS, 2), dtype=np.float32)
        ratio = heatmap_size / image_size
        for i, sample in enumerate(usable):
            self.images[i] = render_pose_image(sample.pose2d, image_size, sample.depth).transpose(2, 0, 1)
            hm_pose = CanonicalPose2D(sample.pose2d.coords * ratio, sample.pose2d.visibility)
            self.heatmaps[i] = render_pose_heatmaps(hm_pose, (heatmap_size, heatmap_size), sigma)
            self.visibility[i] = sample.pose2d.visibility
            self.pose2d_px[i] = sample.pose2d.coords
            if sample.depth is not None:
                self.depth[i] = sample.depth

    def __len__(self) -> int:
        return len(self.samples)


def _smooth_l1_per_sample(pred: torch.Tensor, target: torch.Tensor, vis: torch.Tensor, beta: float) -> torch.Tensor:
    """Per-sample Smooth-L1 depth loss, mean over visible joints."""
    d = (pred - target).abs()
    elementwise = torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    count = vis.sum(dim=-1)
    return (elementwise * vis).sum(dim=-1) / count.clamp(min=1.0)


def _depth_grad_norm(net: PoseNet) -> float:
    total = 0.0
    for p in net.depth_parameters():
        if p.grad is not None:
            total += float(p.grad.abs().sum())
    return total


# ---------------------------------------------------------------------------
# stage runner

_PREREQUISITES = {
    ("fusion", "s1"): ("none",),
    ("fusion", "s2"): ("s1",),
    ("fusion", "s3"): ("s2",),
    ("three_d_only", "s2"): ("none", "s1"),
    ("three_d_only", "s3"): ("s2",),
}


def _check_stage_order(config: TrainingConfig, resume_meta: dict | None) -> None:
    completed = "none" if resume_meta is None else resume_meta.get("stage_completed", "none")
    allowed = _PREREQUISITES[(config.mode, config.stage)]
    if completed not in allowed:
        raise StageOrderError(
            f"stage {config.stage} ({config.mode}) requires a checkpoint with "
            f"stage_completed in {allowed}, got {completed!r}"
        )


class MetricLogWriter:
    """Append-only JSON-lines metric log."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, entry: dict) -> None:
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")


def run_stage(
    config: TrainingConfig,
    net: PoseNet,
    train: DataBundle,
    val: list[HarmonizedSample] | EvalData | None,
    resume_meta: dict | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    bone_groups: list[BoneGroup] | None = None,
) -> tuple[dict, list[dict]]:
    """Run one training stage; returns (checkpoint metadata, metric log entries).

    The network is updated in place.  Gradients for the depth head are
    recorded per epoch, and the geometric-loss contribution is logged, so
    stage isolation is checkable from the log alone.
    """
    _check_stage_order(config, resume_meta)
    if bone_groups is None:
        bone_groups = default_bone_groups(DEFAULT_SKELETON, rest_pose())

    image_size = net.config.input_size
    heatmap_size = net.config.heatmap_size
    bank2d = SampleBank(train.samples_2d, image_size, heatmap_size)
    bank3d = SampleBank(train.samples_3d, image_size, heatmap_size)
    use_2d = config.stage == "s1" or config.mode == "fusion"
    if config.stage == "s1" and len(bank2d) == 0:
        raise ValueError("stage s1 consumes 2D data only and the 2D set is empty")
    if config.mode == "three_d_only" and len(bank3d) == 0:
        raise ValueError("3D-exclusive training needs a nonempty 3D set")

    banks = {"2d": bank2d, "3d": bank3d}
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.initial_lr)
    weights = config.weights

    val_data = None
    if val is not None:
        val_data = val if isinstance(val, EvalData) else EvalData(val, image_size)
    val_at = set(validation_epochs(config))

    writer = MetricLogWriter(log_path)
    entries: list[dict] = []
    net.train()

    def _emit(entry: dict) -> None:
        entries.append(entry)
        writer.append(entry)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = lr_at(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        if config.stage == "s1":
            order = _plan_single("2d", len(bank2d), rng)
        elif config.mode == "fusion":
            order = plan_fusion_epoch(len(bank2d), len(bank3d), rng).order
        else:
            order = _plan_single("3d", len(bank3d), rng)

        sums = {"loss_2d": 0.0, "loss_dep": 0.0, "loss_geo": 0.0, "grad": 0.0}
        n_batches = 0
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            idx = {"2d": [i for s, i in batch if s == "2d"], "3d": [i for s, i in batch if s == "3d"]}
            images = np.concatenate(
                [banks[s].images[idx[s]] for s in ("2d", "3d") if idx[s]], axis=0
            )
            image_t = torch.as_tensor(images)
            n2, n3 = len(idx["2d"]), len(idx["3d"])
            batch_n = n2 + n3

            heatmaps_pred, latent = net.forward_2d(image_t)

            if use_2d:
                targets = np.concatenate(
                    [banks[s].heatmaps[idx[s]] for s in ("2d", "3d") if idx[s]], axis=0
                )
                vis = np.concatenate(
                    [banks[s].visibility[idx[s]] for s in ("2d", "3d") if idx[s]], axis=0
                )
                l2d = loss_2d_heatmap(heatmaps_pred, torch.as_tensor(targets), torch.as_tensor(vis))
            else:
                l2d = torch.zeros((), dtype=torch.float32)

            geo_value = 0.0
            if config.stage == "s1":
                ldep = torch.zeros((), dtype=torch.float32)
            else:
                depth_pred = net.forward_depth(latent)
                dep_sum = torch.zeros((), dtype=depth_pred.dtype)
                if n3:
                    rows = depth_pred[n2:]
                    target = torch.as_tensor(bank3d.depth[idx["3d"]])
                    vis3 = torch.as_tensor(bank3d.visibility[idx["3d"]])
                    per_sample = _smooth_l1_per_sample(rows, target, vis3, config.beta)
                    dep_sum = dep_sum + weights.lambda_reg * per_sample.sum()
                if n2 and weights.lambda_geo > 0:
                    xy = torch.as_tensor(bank2d.pose2d_px[idx["2d"]])
                    z = depth_pred[:n2]
                    coords = torch.cat([xy, z.unsqueeze(-1)], dim=-1)
                    vis2 = torch.as_tensor(bank2d.visibility[idx["2d"]])
                    per_sample = geometric_per_sample(coords, bone_groups, vis2)
                    geo_term = per_sample.sum()
                    geo_value = float(geo_term.detach())
                    dep_sum = dep_sum + weights.lambda_geo * geo_term
                ldep = dep_sum / batch_n

            try:
                total = loss_total(l2d, ldep)
            except DivergenceError as err:
                raise DivergenceError(
                    f"stage {config.stage} epoch {epoch} batch {n_batches} "
                    f"({n2} 2D + {n3} 3D samples): {err}"
                ) from err

            optimizer.zero_grad(set_to_none=True)
            total.backward()
            sums["grad"] += _depth_grad_norm(net)
            optimizer.step()

            sums["loss_2d"] += float(l2d.detach())
            sums["loss_dep"] += float(ldep.detach())
            sums["loss_geo"] += geo_value
            n_batches += 1

        _emit({
            "stage": config.stage,
            "epoch": epoch,
            "split": "train",
            "pckh": None,
            "mpjpe": None,
            "loss_2d": sums["loss_2d"] / n_batches,
            "loss_dep": sums["loss_dep"] / n_batches,
            "loss_geo": sums["loss_geo"] / n_batches,
            "depth_grad_norm": sums["grad"],
            "lr": lr,
            "wall_seconds": time.perf_counter() - started,
        })

        if val_data is not None and epoch in val_at:
            started = time.perf_counter()
            report = evaluate(net, val_data)
            net.train()
            _emit({
                "stage": config.stage,
                "epoch": epoch,
                "split": "val",
                "pckh": report.pckh_at_05,
                "mpjpe": report.mpjpe_mm,
                "loss_2d": None,
                "loss_dep": None,
                "loss_geo": None,
                "depth_grad_norm": None,
                "lr": lr,
                "wall_seconds": time.perf_counter() - started,
            })

    net.eval()
    last_val = next((e for e in reversed(entries) if e["split"] == "val"), None)
    metrics_at_save = {}
    if last_val is not None:
        metrics_at_save = {"pckh": last_val["pckh"], "mpjpe": last_val["mpjpe"]}
    if checkpoint_path is not None:
        meta = save_checkpoint(
            checkpoint_path, net, stage_completed=config.stage,
            train_config=config, metrics=metrics_at_save,
        )
    else:
        from .model import config_digest

        meta = {
            "format_version": 1,
            "arch": dataclasses.asdict(net.config),
            "arch_digest": config_digest(net.config),
            "stage_completed": config.stage,
            "config_digest": config_digest(config),
            "metrics_at_save": metrics_at_save,
        }
    return meta, entries


def train_pipeline(
    stage_configs: list[TrainingConfig],
    train: DataBundle,
    val: list[HarmonizedSample] | EvalData | None,
    model_config: ModelConfig | None = None,
    out_dir: str | Path | None = None,
) -> tuple[PoseNet, dict, list[dict]]:
    """Chain run_stage over configs in stage order, threading the checkpoint.

    Returns (trained network, final checkpoint metadata, combined metric log).
    """
    if not stage_configs:
        raise ValueError("no stage configs given")
    modes = {c.mode for c in stage_configs}
    if len(modes) > 1:
        raise ValueError("all stages in a pipeline must share one mode")
    expected = ["s1", "s2", "s3"] if "fusion" in modes else ["s2", "s3"]
    stages = [c.stage for c in stage_configs]
    if stages != expected[: len(stages)]:
        raise StageOrderError(
            f"pipeline stages must be {expected} in order, got {stages}"
        )

    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    net = PoseNet(model_config or ModelConfig())
    meta = None
    log: list[dict] = []
    for config in stage_configs:
        ckpt = out / f"{config.stage}.ckpt" if out else None
        log_path = out / "metrics.jsonl" if out else None
        meta, entries = run_stage(
            config, net, train, val,
            resume_meta=meta, checkpoint_path=ckpt, log_path=log_path,
        )
        log.extend(entries)
    return net, meta, log
