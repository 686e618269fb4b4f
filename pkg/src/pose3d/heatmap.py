"""Gaussian heatmap rendering and decoding.

Ground-truth heatmaps place a peak-normalised Gaussian (sigma in heatmap
pixels, truncated beyond 3 sigma) at each visible joint.  Two decoders are
provided: a hard argmax with deterministic row-major tie-breaking, and a
softmax-expectation decode that is differentiable when given torch tensors.
"""
from __future__ import annotations

import numpy as np
import torch

from .skeleton import NUM_JOINTS, CanonicalPose2D

DEFAULT_RESOLUTION = (64, 64)
DEFAULT_SIGMA = 2.0
TRUNCATION_SIGMAS = 3.0
# Softmax sharpening for the soft decode: peak-normalised planes need a
# temperature well below 1, else the exp(0) background cells dominate the
# expectation and drag it toward the grid centre.
DEFAULT_SOFT_TEMPERATURE = 0.02


def render_gaussian_heatmap(
    joint: tuple[float, float],
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    sigma: float = DEFAULT_SIGMA,
    visible: bool = True,
) -> np.ndarray:
    """Render one joint as an (H, W) Gaussian plane.

    The value at cell (v, u) is exp(-((u-x)^2 + (v-y)^2) / (2 sigma^2)),
    zeroed beyond 3 sigma from the joint.  Invisible joints give an all-zero
    plane; out-of-frame joints render whatever part of the Gaussian falls
    inside the grid.
    """
    h, w = resolution
    if h <= 0 or w <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not visible:
        return np.zeros((h, w), dtype=np.float64)
    x, y = float(joint[0]), float(joint[1])
    us = np.arange(w, dtype=np.float64)
    vs = np.arange(h, dtype=np.float64)
    d2 = (us[None, :] - x) ** 2 + (vs[:, None] - y) ** 2
    plane = np.exp(-d2 / (2.0 * sigma * sigma))
    plane[d2 > (TRUNCATION_SIGMAS * sigma) ** 2] = 0.0
    return plane


def render_pose_heatmaps(
    pose: CanonicalPose2D,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    sigma: float = DEFAULT_SIGMA,
) -> np.ndarray:
    """Render all 16 joints of a heatmap-pixel pose into a (16, H, W) stack."""
    planes = [
        render_gaussian_heatmap(pose.coords[j], resolution, sigma, visible=bool(pose.visibility[j]))
        for j in range(NUM_JOINTS)
    ]
    return np.stack(planes)


def decode_heatmap_argmax(plane) -> tuple[int, int]:
    """(x, y) of the maximum cell; ties break to the smallest row-major index."""
    arr = np.asarray(plane.detach() if isinstance(plane, torch.Tensor) else plane)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a nonempty (H, W) plane")
    flat = int(np.argmax(arr))
    v, u = divmod(flat, arr.shape[1])
    return u, v


def decode_heatmap_soft(plane, temperature: float = DEFAULT_SOFT_TEMPERATURE):
    """Expected (x, y) under softmax(plane / temperature).

    Works on numpy arrays or torch tensors; with tensors the result is
    differentiable with respect to the plane values.  Scaling plane and
    temperature by the same positive constant leaves the result unchanged;
    temperature -> 0 approaches the argmax.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if isinstance(plane, torch.Tensor):
        if plane.ndim != 2 or plane.numel() == 0:
            raise ValueError("expected a nonempty (H, W) plane")
        h, w = plane.shape
        weights = torch.softmax((plane / temperature).reshape(-1), dim=0).reshape(h, w)
        us = torch.arange(w, dtype=weights.dtype, device=weights.device)
        vs = torch.arange(h, dtype=weights.dtype, device=weights.device)
        x = (weights.sum(dim=0) * us).sum()
        y = (weights.sum(dim=1) * vs).sum()
        return x, y
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a nonempty (H, W) plane")
    logits = arr / temperature
    logits = logits - logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    x = float((weights.sum(axis=0) * np.arange(arr.shape[1])).sum())
    y = float((weights.sum(axis=1) * np.arange(arr.shape[0])).sum())
    return x, y
