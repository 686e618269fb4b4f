"""Weakly-supervised 3D human pose estimation via 2D pre-training.

Library layout:

  skeleton   canonical 16-joint skeleton, pose containers, bone groups
  heatmap    Gaussian rendering and argmax/soft decoding
  harmonize  per-dataset converters, root alignment, depth-scale fitting
  losses     heatmap, Smooth-L1 depth, and geometric bone-ratio losses
  model      reference network, checkpoints, 3D prediction assembly
  trainer    three-stage schedules, fusion sampling, the training loop
  metrics    PCKh@0.5, MPJPE, evaluation reports
  synth      synthetic poses, source-format records, raster images
  figures    matplotlib figure emission
  cli        the pose3d command-line tool
"""

from .skeleton import (
    BONES,
    BONE_EDGES,
    DEFAULT_SKELETON,
    JOINT_NAMES,
    NUM_JOINTS,
    BoneGroup,
    CanonicalPose2D,
    CanonicalPose3D,
    CanonicalSkeleton,
    bone_length,
    canonical_joint_index,
    default_bone_groups,
    load_reference_lengths,
    rest_pose,
)
from .heatmap import (
    decode_heatmap_argmax,
    decode_heatmap_soft,
    render_gaussian_heatmap,
    render_pose_heatmaps,
)
from .harmonize import (
    HarmonizedSample,
    RawRecord,
    harmonize_record,
    root_align,
    scale_depth,
    solve_depth_scale,
)
from .losses import (
    DivergenceError,
    LossWeights,
    loss_2d_heatmap,
    loss_depth_combined,
    loss_depth_smooth_l1,
    loss_geometric,
    loss_total,
)
from .model import (
    ModelConfig,
    PoseNet,
    assemble_geo_pose,
    load_checkpoint,
    predict_pose3d,
    save_checkpoint,
)
from .trainer import (
    DataBundle,
    TrainingConfig,
    default_config,
    lr_at,
    plan_fusion_epoch,
    run_stage,
    scale_epochs,
    train_pipeline,
)
from .metrics import EvalReport, evaluate, mpjpe, pckh
from .synth import SynthParams, emit_source_format, generate_pose3d, project_to_2d, render_pose_image

__version__ = "0.1.0"
