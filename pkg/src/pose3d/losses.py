"""The three training losses and their per-sample combination.

All functions are pure and differentiable with respect to their prediction
inputs (they accept torch tensors and preserve autograd); numpy inputs are
converted.  Reductions:

  heatmap loss   per-plane sum over cells, then mean over joints and batch;
                 invisible joints contribute zero
  depth loss     Smooth-L1 per joint, mean over *visible* joints, then batch
  geometric loss sum over groups of the within-group variance of predicted
                 to canonical bone-length ratios, then mean over batch
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .skeleton import NUM_JOINTS, BoneGroup, CanonicalPose3D


class DivergenceError(RuntimeError):
    """A loss evaluated to a non-finite value; training must abort."""


@dataclass(frozen=True)
class LossWeights:
    """Weights of the per-sample depth branches plus the Smooth-L1 knee."""

    lambda_reg: float = 0.1
    lambda_geo: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.lambda_reg < 0 or self.lambda_geo < 0:
            raise ValueError("loss weights must be nonnegative")


def _tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def _batched(x: torch.Tensor, event_dims: int) -> tuple[torch.Tensor, bool]:
    """Add a leading batch axis when the input is a single sample."""
    if x.ndim == event_dims:
        return x.unsqueeze(0), True
    if x.ndim == event_dims + 1:
        return x, False
    raise ValueError(f"expected {event_dims} or {event_dims + 1} dims, got {x.ndim}")


def loss_2d_heatmap(pred, target, visibility) -> torch.Tensor:
    """Squared-difference heatmap loss summed over cells.

    pred and target are (J, H, W) or (B, J, H, W); visibility masks whole
    joint planes.  Each visible plane contributes the sum of per-cell squared
    differences; the result is averaged over the J joint planes and the batch.
    """
    pred = _tensor(pred)
    target = _tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"pred/target shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    pred, _ = _batched(pred, 3)
    target, _ = _batched(target, 3)
    vis = _tensor(visibility).to(pred.dtype)
    vis, _ = _batched(vis, 1)
    if vis.shape[-1] != pred.shape[1]:
        raise ValueError("visibility length must match the joint dimension")
    per_plane = ((pred - target) ** 2).sum(dim=(-2, -1))
    per_sample = (per_plane * vis).sum(dim=-1) / pred.shape[1]
    return per_sample.mean()


def loss_depth_smooth_l1(pred, target, visibility, beta: float = 1.0) -> torch.Tensor:
    """Smooth-L1 depth loss averaged over visible joints.

    Per joint with d = pred - target:

        0.5 d^2 / beta   if |d| < beta
        |d| - 0.5 beta   otherwise

    Value and first derivative are continuous at |d| = beta.  Samples with
    no visible joints contribute zero.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    pred = _tensor(pred)
    target = _tensor(target, like=pred)
    pred, _ = _batched(pred, 1)
    target, _ = _batched(target, 1)
    if pred.shape != target.shape:
        raise ValueError("pred/target shape mismatch")
    vis = _tensor(visibility).to(pred.dtype)
    vis, _ = _batched(vis, 1)
    d = (pred - target).abs()
    elementwise = torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    count = vis.sum(dim=-1)
    per_sample = (elementwise * vis).sum(dim=-1) / count.clamp(min=1.0)
    return per_sample.mean()


def _group_ratio_spread(
    coords: torch.Tensor, group: BoneGroup, vis: torch.Tensor
) -> torch.Tensor:
    """(1/|R|) sum_e (r_e - mean r)^2 for one group; coords is (B, 16, 3).

    Only bones with both endpoints visible count; a group with fewer than
    two usable bones carries no ratio information and contributes zero.
    """
    ratios = []
    masks = []
    for edge in group.bones:
        a, b = edge
        length = torch.linalg.vector_norm(coords[:, a] - coords[:, b], dim=-1)
        ratios.append(length / group.canonical_lengths[edge])
        masks.append(vis[:, a] * vis[:, b])
    r = torch.stack(ratios, dim=-1)
    m = torch.stack(masks, dim=-1)
    count = m.sum(dim=-1)
    usable = count >= 2
    mean = (r * m).sum(dim=-1) / count.clamp(min=1.0)
    spread = (m * (r - mean.unsqueeze(-1)) ** 2).sum(dim=-1) / count.clamp(min=1.0)
    return torch.where(usable, spread, torch.zeros_like(spread))


def geometric_per_sample(coords, groups: list[BoneGroup], visibility=None) -> torch.Tensor:
    """Per-sample geometric loss for a (B, 16, 3) coordinate batch; returns (B,)."""
    coords = _tensor(coords)
    coords, _ = _batched(coords, 2)
    if coords.shape[-2:] != (NUM_JOINTS, 3):
        raise ValueError(f"expected (..., {NUM_JOINTS}, 3) coordinates, got {tuple(coords.shape)}")
    if visibility is None:
        vis = torch.ones(coords.shape[0], NUM_JOINTS, dtype=coords.dtype)
    else:
        vis = _tensor(visibility).to(coords.dtype)
        vis, _ = _batched(vis, 1)
        if vis.shape[0] == 1 and coords.shape[0] > 1:
            vis = vis.expand(coords.shape[0], -1)
    total = torch.zeros(coords.shape[0], dtype=coords.dtype)
    for group in groups:
        total = total + _group_ratio_spread(coords, group, vis)
    return total


def loss_geometric(pred_pose3d, groups: list[BoneGroup], visibility=None) -> torch.Tensor:
    """Bone-ratio consistency loss over a list of bone groups.

    Accepts a CanonicalPose3D (whose visibility mask is honoured) or a
    (16, 3) / (B, 16, 3) coordinate tensor with an optional visibility
    argument.  Zero exactly when, within every group, all predicted-to-
    canonical length ratios are equal; invariant to global translation and
    to uniform scaling applied jointly to the pose and the canonical lengths.
    """
    if isinstance(pred_pose3d, CanonicalPose3D):
        coords = pred_pose3d.coords
        if visibility is None:
            visibility = pred_pose3d.visibility
    else:
        coords = pred_pose3d
    return geometric_per_sample(coords, groups, visibility).mean()


def loss_depth_combined(
    source: str,
    weights: LossWeights,
    dep_3d=None,
    geo=None,
) -> torch.Tensor:
    """Per-sample depth loss: lambda_reg * L_dep3d for 3D samples, lambda_geo * L_geo for 2D.

    Exactly one branch is read per sample; the other argument is ignored.
    """
    if source == "set_3d":
        if dep_3d is None:
            raise ValueError("3D sample requires dep_3d")
        return weights.lambda_reg * _tensor(dep_3d)
    if source == "set_2d":
        if geo is None:
            raise ValueError("2D sample requires geo")
        return weights.lambda_geo * _tensor(geo)
    raise ValueError(f"unknown sample source {source!r}")


def loss_total(l2d, ldep) -> torch.Tensor:
    """Total loss L = L_2D + L_dep, guarding against divergence.

    Non-finite inputs raise DivergenceError instead of silently propagating:
    badly scaled depth labels are a known way to blow up training and should
    stop it loudly.
    """
    l2d = _tensor(l2d)
    ldep = _tensor(ldep, like=l2d)
    if not (torch.isfinite(l2d).all() and torch.isfinite(ldep).all()):
        raise DivergenceError(
            f"non-finite loss (l2d={float(l2d):.6g}, ldep={float(ldep):.6g})"
        )
    return l2d + ldep
