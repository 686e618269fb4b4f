"""Two-module network: heatmap estimator plus depth regressor on its latent.

The reference network is a small convolutional encoder-decoder (~1M
parameters at the 64x64 desk configuration), not the full-scale backbone:
downstream modules depend only on the contract — (B, 3, S, S) images in,
(B, 16, H, H) heatmaps and a latent volume out, 16 depth values from the
latent.  GroupNorm keeps evaluation deterministic regardless of batch
composition.

Checkpoints are versioned torch containers carrying the architecture
config, its digest, the completed stage tag, the training-config digest,
and metrics at save time; loading against a different architecture fails
loudly.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .heatmap import DEFAULT_SOFT_TEMPERATURE, decode_heatmap_soft
from .skeleton import NUM_JOINTS, ROOT, CanonicalPose2D, CanonicalPose3D

CHECKPOINT_FORMAT_VERSION = 1


class ArchitectureMismatchError(RuntimeError):
    """Checkpoint architecture digest does not match the expected one."""


@dataclass(frozen=True)
class ModelConfig:
    """Reference-network hyperparameters.

    input_size and heatmap_size must be powers of two at least latent_size;
    the encoder downsamples input -> latent, the decoder upsamples
    latent -> heatmap.  Most parameters sit in the latent-resolution
    bottleneck where compute is cheap.
    """

    input_size: int = 256
    heatmap_size: int = 64
    num_joints: int = NUM_JOINTS
    stem_channels: int = 16
    max_channels: int = 256
    latent_size: int = 8
    depth_hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        for name in ("input_size", "heatmap_size"):
            value = getattr(self, name)
            ratio = value / self.latent_size
            if value < self.latent_size or 2 ** int(math.log2(ratio)) != int(ratio):
                raise ValueError(f"{name} must be latent_size times a power of two, got {value}")


def config_digest(obj) -> str:
    """Stable digest of a config dataclass (or plain dict)."""
    doc = asdict(obj) if hasattr(obj, "__dataclass_fields__") else dict(obj)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.GroupNorm(8, cout),
        nn.ReLU(inplace=True),
    )


def _up_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 2, stride=2),
        nn.GroupNorm(8, cout),
        nn.ReLU(inplace=True),
    )


class PoseNet(nn.Module):
    """Encoder-decoder heatmap head plus pooled-latent depth head."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        torch.manual_seed(self.config.seed)
        cfg = self.config

        n_down = int(math.log2(cfg.input_size // cfg.latent_size))
        n_up = int(math.log2(cfg.heatmap_size // cfg.latent_size))

        channels = [cfg.stem_channels]
        for i in range(n_down):
            channels.append(min(cfg.stem_channels * 2 ** (i + 1), cfg.max_channels))

        encoder = [_conv_block(3, channels[0])]
        for cin, cout in zip(channels, channels[1:]):
            encoder.append(_conv_block(cin, cout, stride=2))
        self.encoder = nn.Sequential(*encoder)
        pre_latent = channels[-1]
        self.latent_channels = cfg.max_channels
        self.bottleneck = nn.Sequential(
            _conv_block(pre_latent, self.latent_channels),
            _conv_block(self.latent_channels, self.latent_channels),
        )

        decoder = []
        c = self.latent_channels
        for i in range(n_up):
            cout = max(c // 4 if i == 0 else c // 2, 16)
            decoder.append(_up_block(c, cout))
            c = cout
        self.decoder = nn.Sequential(*decoder)
        self.head_2d = nn.Conv2d(c, cfg.num_joints, 1)

        self.head_depth = nn.Sequential(
            nn.Linear(self.latent_channels, cfg.depth_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(cfg.depth_hidden, cfg.num_joints),
        )

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def depth_parameters(self):
        return self.head_depth.parameters()

    def forward_2d(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Heatmaps (B, J, H, H) and the latent volume feeding the depth head."""
        if image.ndim != 4 or image.shape[1] != 3 or image.shape[2] != image.shape[3]:
            raise ValueError(f"expected (B, 3, S, S) images, got {tuple(image.shape)}")
        if image.shape[2] != self.config.input_size:
            raise ValueError(
                f"network expects {self.config.input_size}x{self.config.input_size} input, "
                f"got {image.shape[2]}x{image.shape[3]}"
            )
        latent = self.bottleneck(self.encoder(image))
        heatmaps = self.head_2d(self.decoder(latent))
        return heatmaps, latent

    def forward_depth(self, latent: torch.Tensor) -> torch.Tensor:
        """16 image-scaled depth values per sample from the latent volume."""
        if latent.ndim != 4 or latent.shape[1] != self.latent_channels:
            raise ValueError(
                f"expected latent of shape (B, {self.latent_channels}, "
                f"{self.config.latent_size}, {self.config.latent_size}), got {tuple(latent.shape)}"
            )
        pooled = latent.mean(dim=(2, 3))
        return self.head_depth(pooled)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.forward_2d(image)


def _as_image_batch(image, input_size: int) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(image), dtype=torch.float32) if not isinstance(image, torch.Tensor) else image.float()
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ValueError(f"expected an image of shape (3, S, S) or (B, 3, S, S), got {tuple(t.shape)}")
    return t


def decode_batch(
    heatmaps: torch.Tensor, decode: str = "argmax", temperature: float = DEFAULT_SOFT_TEMPERATURE
) -> np.ndarray:
    """Decode (B, J, H, W) heatmaps to (B, J, 2) heatmap-pixel coordinates."""
    if decode == "argmax":
        b, j, h, w = heatmaps.shape
        flat = heatmaps.reshape(b, j, -1).argmax(dim=-1).cpu().numpy()
        return np.stack([flat % w, flat // w], axis=-1).astype(np.float64)
    if decode == "soft":
        out = np.zeros((heatmaps.shape[0], heatmaps.shape[1], 2))
        for bi in range(heatmaps.shape[0]):
            for ji in range(heatmaps.shape[1]):
                x, y = decode_heatmap_soft(heatmaps[bi, ji].detach(), temperature)
                out[bi, ji] = (float(x), float(y))
        return out
    raise ValueError(f"unknown decode mode {decode!r}")


def predict_pose3d(
    net: PoseNet, image, decode: str = "argmax", temperature: float = DEFAULT_SOFT_TEMPERATURE
) -> CanonicalPose3D:
    """Assemble a full image-scaled 3D prediction for one image.

    (x, y) comes from the chosen heatmap decode scaled to image pixels; z is
    the depth head output root-aligned by subtracting the pelvis depth.
    """
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            batch = _as_image_batch(image, net.config.input_size)
            heatmaps, latent = net.forward_2d(batch)
            depth = net.forward_depth(latent)
    finally:
        net.train(was_training)
    scale = net.config.input_size / net.config.heatmap_size
    xy = decode_batch(heatmaps, decode, temperature)[0] * scale
    z = depth[0].cpu().numpy().astype(np.float64)
    z = z - z[ROOT]
    coords = np.concatenate([xy, z[:, None]], axis=1)
    return CanonicalPose3D(coords, frame="image_scaled")


def assemble_geo_pose(gt_pose2d: CanonicalPose2D, pred_depth) -> torch.Tensor:
    """(16, 3) coordinates for the geometric loss on a 2D sample.

    x, y are the ground-truth 2D labels held constant (no gradient path);
    z is the predicted depth, through which all gradients flow.
    """
    z = pred_depth if isinstance(pred_depth, torch.Tensor) else torch.as_tensor(pred_depth, dtype=torch.float64)
    if z.shape != (NUM_JOINTS,):
        raise ValueError(f"expected 16 depth values, got shape {tuple(z.shape)}")
    xy = torch.as_tensor(gt_pose2d.coords, dtype=z.dtype)
    return torch.cat([xy, z.unsqueeze(-1)], dim=-1)


def save_checkpoint(
    path,
    net: PoseNet,
    stage_completed: str = "none",
    train_config=None,
    metrics: dict | None = None,
) -> dict:
    """Write a versioned checkpoint; returns the metadata dict."""
    if stage_completed not in ("none", "s1", "s2", "s3"):
        raise ValueError(f"unknown stage tag {stage_completed!r}")
    arch = asdict(net.config)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": arch,
        "arch_digest": config_digest(net.config),
        "state": net.state_dict(),
        "stage_completed": stage_completed,
        "config_digest": None if train_config is None else config_digest(train_config),
        "metrics_at_save": dict(metrics or {}),
    }
    torch.save(payload, path)
    return {k: payload[k] for k in payload if k != "state"}


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[PoseNet, dict]:
    """Rebuild the network from a checkpoint; round-trips weights bit-exactly."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise RuntimeError(
            f"unsupported checkpoint format {payload.get('format_version')!r}"
        )
    config = ModelConfig(**payload["arch"])
    if config_digest(config) != payload["arch_digest"]:
        raise ArchitectureMismatchError("checkpoint arch digest does not match its stored config")
    if expected_config is not None and config_digest(expected_config) != payload["arch_digest"]:
        raise ArchitectureMismatchError(
            "checkpoint was produced by a different architecture "
            f"({payload['arch_digest'][:12]} != {config_digest(expected_config)[:12]})"
        )
    net = PoseNet(config)
    net.load_state_dict(payload["state"])
    meta = {k: payload[k] for k in payload if k != "state"}
    return net, meta
