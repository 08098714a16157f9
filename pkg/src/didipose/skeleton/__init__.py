from .io import read_dataset, write_dataset
from .metrics import mpjpe, pa_mpjpe, procrustes_align
from .model import (
    Observation, OccluderSpec, Pose, PoseDataset, SkeletonDef, forward_kinematics,
    generate_dataset, generate_pose, h36m_skeleton, occlusion_mask, project_and_occlude,
    sample_rng,
)

__all__ = [
    "Observation", "OccluderSpec", "Pose", "PoseDataset", "SkeletonDef", "forward_kinematics",
    "generate_dataset", "generate_pose", "h36m_skeleton", "mpjpe", "occlusion_mask",
    "pa_mpjpe", "procrustes_align", "project_and_occlude", "read_dataset", "sample_rng",
    "write_dataset",
]
