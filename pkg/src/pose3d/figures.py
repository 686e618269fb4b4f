"""Matplotlib figure emission: overlays, 3D wireframes, curves, per-joint bars.

All figures are written as PNG through the Agg backend with fixed dpi and
stripped metadata, so identical inputs produce identical bytes.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport
from .skeleton import BONE_EDGES, JOINT_NAMES, NUM_JOINTS, CanonicalPose2D, CanonicalPose3D

_DPI = 110


def save_figure(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)


def overlay_figure(image: np.ndarray, pose2d: CanonicalPose2D, gt_pose2d: CanonicalPose2D | None = None):
    """Prediction (and optional ground truth) drawn over the input image."""
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(image)
    for a, b in BONE_EDGES:
        if pose2d.visibility[a] and pose2d.visibility[b]:
            ax.plot(
                [pose2d.coords[a, 0], pose2d.coords[b, 0]],
                [pose2d.coords[a, 1], pose2d.coords[b, 1]],
                color="yellow", linewidth=1.5,
            )
    ax.scatter(pose2d.coords[pose2d.visibility, 0], pose2d.coords[pose2d.visibility, 1],
               s=12, c="red", label="prediction")
    if gt_pose2d is not None:
        ax.scatter(gt_pose2d.coords[gt_pose2d.visibility, 0],
                   gt_pose2d.coords[gt_pose2d.visibility, 1],
                   s=12, marker="x", c="cyan", label="ground truth")
        ax.legend(loc="lower right", fontsize=7)
    ax.set_xlim(0, image.shape[1])
    ax.set_ylim(image.shape[0], 0)
    ax.axis("off")
    fig.tight_layout()
    return fig


def wireframe_figure(pose3d: CanonicalPose3D, title: str = ""):
    """3D wireframe of a pose; y is flipped so the figure is upright."""
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="3d")
    c = pose3d.coords
    for a, b in BONE_EDGES:
        ax.plot([c[a, 0], c[b, 0]], [c[a, 2], c[b, 2]], [-c[a, 1], -c[b, 1]],
                color="tab:blue", linewidth=1.5)
    ax.scatter(c[:, 0], c[:, 2], -c[:, 1], s=10, c="tab:red")
    ax.set_xlabel("x")
    ax.set_ylabel("z (depth)")
    ax.set_zlabel("-y")
    if title:
        ax.set_title(title)
    ax.view_init(elev=15, azim=-70)
    fig.tight_layout()
    return fig


def training_curves_figure(entries: list[dict]):
    """Validation PCKh and MPJPE over epochs, one line per stage."""
    fig, (ax_p, ax_m) = plt.subplots(1, 2, figsize=(9, 3.5))
    stages = sorted({e["stage"] for e in entries})
    offsets = {}
    start = 0
    for stage in ("s1", "s2", "s3"):
        if stage in stages:
            offsets[stage] = start
            start += 1 + max(e["epoch"] for e in entries if e["stage"] == stage)
    for stage in stages:
        val = [e for e in entries if e["stage"] == stage and e["split"] == "val"]
        xs = [offsets[stage] + e["epoch"] for e in val]
        pckh = [e["pckh"] for e in val]
        ax_p.plot(xs, pckh, marker="o", markersize=3, label=f"stage {stage[1]}")
        mp = [(x, e["mpjpe"]) for x, e in zip(xs, val) if e["mpjpe"] is not None]
        if mp:
            ax_m.plot([m[0] for m in mp], [m[1] for m in mp], marker="o", markersize=3,
                      label=f"stage {stage[1]}")
    ax_p.set_xlabel("epoch (stages concatenated)")
    ax_p.set_ylabel("validation PCKh@0.5 [%]")
    ax_p.legend(fontsize=8)
    ax_m.set_xlabel("epoch (stages concatenated)")
    ax_m.set_ylabel("validation MPJPE [mm]")
    if ax_m.lines:
        ax_m.legend(fontsize=8)
    fig.tight_layout()
    return fig


def per_joint_figure(report: EvalReport):
    """Horizontal per-joint MPJPE (or PCKh when no 3D data) bars."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ys = np.arange(NUM_JOINTS)
    values = report.per_joint_mpjpe
    label = "MPJPE [mm]"
    if all(np.isnan(v) for v in values):
        values = report.per_joint_pckh
        label = "PCKh@0.5 [%]"
    ax.barh(ys, [0.0 if np.isnan(v) else v for v in values], color="tab:blue")
    ax.set_yticks(ys)
    ax.set_yticklabels(JOINT_NAMES, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(label)
    fig.tight_layout()
    return fig
