"""Dense depth from optical flow constrained to epipolar geometry.

Flow matches are relaxed onto epipolar lines and triangulated in closed form;
per pixel, the candidate least sensitive to match error is kept and
candidates far from their epipolar line are pruned.
"""

from .blend import BlendStrategy, blend_depth, sensitivity_gradient
from .estimator import NexusDensifier
from .evalkit import EvalReport, ablation_run, depth_error, reprojection_eval, threshold_sweep
from .flow import FlowField, FlowNoiseSpec, perturb_flow, read_flo, synth_flow, write_flo
from .fuse import DepthMap, PointCloud, Scene, densify_scene, prune, read_pfm, read_ply, write_pfm, write_ply
from .geometry import CameraView, backproject, epipolar_line, epipole, fundamental_matrix, project
from .nexus import DepthCandidate, Status, epipolar_depth, epipolar_residual, perpendicular_foot
from .synth import STANDARD_NOISE, SceneBundle, add_flow_noise, generate_scene, perturb_poses

__version__ = "0.1.0"

__all__ = [
    "BlendStrategy", "blend_depth", "sensitivity_gradient", "NexusDensifier", "EvalReport", "ablation_run",
    "depth_error", "reprojection_eval", "threshold_sweep", "FlowField", "FlowNoiseSpec", "perturb_flow",
    "read_flo", "synth_flow", "write_flo", "DepthMap", "PointCloud", "Scene", "densify_scene", "prune",
    "read_pfm", "read_ply", "write_pfm", "write_ply", "CameraView", "backproject", "epipolar_line", "epipole",
    "fundamental_matrix", "project", "DepthCandidate", "Status", "epipolar_depth", "epipolar_residual",
    "perpendicular_foot", "STANDARD_NOISE", "SceneBundle", "add_flow_noise", "generate_scene", "perturb_poses",
]
