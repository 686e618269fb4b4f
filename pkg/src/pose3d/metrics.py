"""PCKh@0.5 and MPJPE, per-joint breakdowns, and evaluation reports.

MPJPE is the mean Euclidean distance (mm) over visible joints between
root-aligned poses.  PCKh counts a prediction correct when it lies within
threshold_fraction times the ground-truth head segment (head_top to neck)
of the label; the boundary is inclusive.  All reductions use compensated
summation so shard order cannot perturb results.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .harmonize import HarmonizedSample, solve_depth_scale
from .model import PoseNet, decode_batch
from .skeleton import (
    HEAD_TOP,
    JOINT_NAMES,
    NECK,
    NUM_JOINTS,
    ROOT,
    CanonicalPose2D,
    CanonicalPose3D,
)
from .synth import render_pose_image


class MetricsError(ValueError):
    """Metric preconditions violated (frame mismatch, empty input, ...)."""


def mpjpe(pred: CanonicalPose3D, gt: CanonicalPose3D, visibility=None) -> float:
    """Mean per-joint position error over visible joints, in the poses' units."""
    if pred.frame != gt.frame:
        raise MetricsError(f"frame mismatch: {pred.frame!r} vs {gt.frame!r}")
    vis = (pred.visibility & gt.visibility) if visibility is None else np.asarray(visibility, bool)
    if not vis.any():
        raise MetricsError("no visible joints to evaluate")
    dists = np.linalg.norm(pred.coords - gt.coords, axis=1)
    return math.fsum(dists[vis]) / int(vis.sum())


def head_segment_length(gt: CanonicalPose2D) -> float:
    length = float(np.linalg.norm(gt.coords[HEAD_TOP] - gt.coords[NECK]))
    if length <= 0.0:
        raise MetricsError("zero head-segment length; PCKh is undefined for this sample")
    return length


def pckh(
    preds: list[CanonicalPose2D],
    gts: list[CanonicalPose2D],
    threshold_fraction: float = 0.5,
) -> float:
    """Percentage of visible joints within threshold_fraction x head segment."""
    if len(preds) != len(gts):
        raise MetricsError("pred/gt lists must have the same length")
    if not preds:
        raise MetricsError("empty pose lists")
    correct = 0
    total = 0
    for pred, gt in zip(preds, gts):
        threshold = threshold_fraction * head_segment_length(gt)
        dists = np.linalg.norm(pred.coords - gt.coords, axis=1)
        for j in range(NUM_JOINTS):
            if not gt.visibility[j]:
                continue
            total += 1
            if dists[j] <= threshold:
                correct += 1
    if total == 0:
        raise MetricsError("no visible joints to evaluate")
    return 100.0 * correct / total


@dataclass
class EvalReport:
    """Aggregate and per-joint metrics for one dataset evaluation."""

    dataset_id: str
    pckh_at_05: float
    mpjpe_mm: float | None
    per_joint_mpjpe: list[float]
    per_joint_pckh: list[float]
    sample_count: int
    skipped_count: int = 0


class EvalData:
    """Pre-rendered evaluation inputs for a list of harmonized samples."""

    def __init__(self, samples: list[HarmonizedSample], image_size: int, dataset_id: str = "synthetic"):
        self.dataset_id = dataset_id
        self.samples = [s for s in samples if not s.excluded]
        self.skipped = len(samples) - len(self.samples)
        if not self.samples:
            raise MetricsError("no evaluable samples (empty or all excluded)")
        self.image_size = image_size
        images = [
            render_pose_image(s.pose2d, image_size, s.depth) for s in self.samples
        ]
        self.images = np.stack(images).transpose(0, 3, 1, 2).astype(np.float32)


def evaluate(
    net: PoseNet,
    dataset,
    decode: str = "argmax",
    batch_size: int = 64,
) -> EvalReport:
    """Run the network over a dataset and aggregate PCKh/MPJPE.

    Predicted depths are mapped back to mm through each sample's solved
    scale before comparison with the root-aligned ground truth; samples
    flagged excluded are skipped and counted.
    """
    data = dataset if isinstance(dataset, EvalData) else EvalData(dataset, net.config.input_size)
    if data.image_size != net.config.input_size:
        raise MetricsError(
            f"dataset images are {data.image_size}px but the network expects "
            f"{net.config.input_size}px"
        )
    scale = net.config.input_size / net.config.heatmap_size

    was_training = net.training
    net.eval()
    pred_xy = np.zeros((len(data.samples), NUM_JOINTS, 2))
    pred_z = np.zeros((len(data.samples), NUM_JOINTS))
    try:
        with torch.no_grad():
            for start in range(0, len(data.samples), batch_size):
                chunk = torch.as_tensor(data.images[start : start + batch_size])
                heatmaps, latent = net.forward_2d(chunk)
                depth = net.forward_depth(latent).cpu().numpy()
                pred_xy[start : start + len(chunk)] = decode_batch(heatmaps, decode) * scale
                pred_z[start : start + len(chunk)] = depth
    finally:
        net.train(was_training)

    pckh_correct = [0.0] * NUM_JOINTS
    pckh_total = [0] * NUM_JOINTS
    mpjpe_sums = [[] for _ in range(NUM_JOINTS)]
    for i, sample in enumerate(data.samples):
        gt2d = sample.pose2d
        threshold = 0.5 * head_segment_length(gt2d)
        dists2d = np.linalg.norm(pred_xy[i] - gt2d.coords, axis=1)
        for j in range(NUM_JOINTS):
            if gt2d.visibility[j]:
                pckh_total[j] += 1
                if dists2d[j] <= threshold:
                    pckh_correct[j] += 1
        if sample.source == "set_3d" and sample.pose3d is not None:
            s = solve_depth_scale(sample.pose3d, sample.pose2d)
            xy_mm = (pred_xy[i] - pred_xy[i, ROOT]) / s
            z_mm = (pred_z[i] - pred_z[i, ROOT]) / s
            pred_mm = np.concatenate([xy_mm, z_mm[:, None]], axis=1)
            dists3d = np.linalg.norm(pred_mm - sample.pose3d.coords, axis=1)
            for j in range(NUM_JOINTS):
                if sample.pose3d.visibility[j]:
                    mpjpe_sums[j].append(dists3d[j])

    per_joint_pckh = [
        100.0 * pckh_correct[j] / pckh_total[j] if pckh_total[j] else math.nan
        for j in range(NUM_JOINTS)
    ]
    if sum(pckh_total) == 0:
        raise MetricsError("no visible joints in the evaluation set")
    overall_pckh = 100.0 * math.fsum(pckh_correct) / sum(pckh_total)
    per_joint_mpjpe = [
        math.fsum(mpjpe_sums[j]) / len(mpjpe_sums[j]) if mpjpe_sums[j] else math.nan
        for j in range(NUM_JOINTS)
    ]
    n_dists = sum(len(d) for d in mpjpe_sums)
    overall_mpjpe = (
        math.fsum(math.fsum(d) for d in mpjpe_sums) / n_dists if n_dists else None
    )
    return EvalReport(
        dataset_id=data.dataset_id,
        pckh_at_05=overall_pckh,
        mpjpe_mm=overall_mpjpe,
        per_joint_mpjpe=per_joint_mpjpe,
        per_joint_pckh=per_joint_pckh,
        sample_count=len(data.samples),
        skipped_count=data.skipped,
    )


# ---------------------------------------------------------------------------
# report output


def report_to_json(report: EvalReport) -> str:
    doc = {
        "dataset": report.dataset_id,
        "sample_count": report.sample_count,
        "skipped_count": report.skipped_count,
        "pckh_at_05": report.pckh_at_05,
        "mpjpe_mm": report.mpjpe_mm,
        "per_joint": [
            {
                "joint": JOINT_NAMES[j],
                "pckh": None if math.isnan(report.per_joint_pckh[j]) else report.per_joint_pckh[j],
                "mpjpe": None if math.isnan(report.per_joint_mpjpe[j]) else report.per_joint_mpjpe[j],
            }
            for j in range(NUM_JOINTS)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def format_report_table(report: EvalReport, per_joint: bool = False) -> str:
    """Human-readable table: one summary row, optionally one row per joint."""
    mpjpe_text = "--" if report.mpjpe_mm is None else f"{report.mpjpe_mm:.2f}"
    lines = [
        f"{'Dataset':<12} {'Samples':>8} {'Skipped':>8} {'2D PCKh':>9} {'3D MPJPE':>9}",
        f"{report.dataset_id:<12} {report.sample_count:>8} {report.skipped_count:>8} "
        f"{report.pckh_at_05:>8.2f}% {mpjpe_text:>9}",
    ]
    if per_joint:
        lines.append("")
        lines.append(f"{'Joint':<12} {'PCKh':>9} {'MPJPE':>9}")
        for j in range(NUM_JOINTS):
            p = report.per_joint_pckh[j]
            m = report.per_joint_mpjpe[j]
            p_text = "--" if math.isnan(p) else f"{p:.2f}%"
            m_text = "--" if math.isnan(m) else f"{m:.2f}"
            lines.append(f"{JOINT_NAMES[j]:<12} {p_text:>9} {m_text:>9}")
    return "\n".join(lines) + "\n"


def per_joint_csv(report: EvalReport) -> str:
    lines = ["joint,pckh,mpjpe_mm"]
    for j in range(NUM_JOINTS):
        p = report.per_joint_pckh[j]
        m = report.per_joint_mpjpe[j]
        lines.append(
            f"{JOINT_NAMES[j]},{'' if math.isnan(p) else f'{p:.6f}'},{'' if math.isnan(m) else f'{m:.6f}'}"
        )
    return "\n".join(lines) + "\n"
