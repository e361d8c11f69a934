"""Event-camera motion processing.

Slices raw event streams into 3-channel maps, computes rigid-motion flow
fields from depth and pose, performs motion-compensating inverse warping,
estimates camera egomotion and per-object velocities by direct minimization
of the warping losses, synthesizes ground-truth depth and motion masks from
tracked point clouds, and evaluates results (AEE, RRE, IoU, depth metrics).
"""

__version__ = "0.1.0"

from .events import (Event, EventArray, EventSlice, SliceMap, load_events,
                     project_slice, save_events, slice_stream, subdivide)
from .geometry import (CameraIntrinsics, DepthMap, FlowField,
                       MixturePoseField, Pose6, denormalize_coords, flow_at,
                       flow_field, flow_operator, load_intrinsics,
                       normalize_coords, normalize_depth, pixel_pose)
from .warping import (LossWeights, WarpDiagnostics, coarse_loss, depth_loss,
                      fine_loss, mask_loss, warp_and_project, warp_slice)
from .estimation import (EstimateResult, EstimatorConfig, ObjectEstimate,
                         WarpObjective, estimate_egomotion,
                         estimate_object_velocity, objective)
from .groundtruth import (EMPTY_ID, GtFrame, PointCloud, RigidTransform,
                          Scene, Trajectory, camera_velocity, finite_velocity,
                          generate_frames, interpolate_pose, load_scene,
                          project_cloud, write_frames)
from .metrics import (DepthMetrics, MotionMetrics, aee, depth_metrics, iou,
                      rre)

__all__ = [
    "Event", "EventArray", "EventSlice", "SliceMap", "load_events",
    "save_events", "slice_stream", "subdivide", "project_slice",
    "CameraIntrinsics", "Pose6", "DepthMap", "MixturePoseField", "FlowField",
    "load_intrinsics", "normalize_coords", "denormalize_coords", "flow_at",
    "flow_operator", "pixel_pose", "flow_field", "normalize_depth",
    "WarpDiagnostics", "LossWeights", "warp_slice", "warp_and_project",
    "coarse_loss", "fine_loss", "mask_loss", "depth_loss",
    "EstimatorConfig", "EstimateResult", "ObjectEstimate", "WarpObjective",
    "objective", "estimate_egomotion", "estimate_object_velocity",
    "EMPTY_ID", "RigidTransform", "Trajectory", "PointCloud", "Scene",
    "GtFrame", "interpolate_pose", "project_cloud", "generate_frames",
    "finite_velocity", "camera_velocity", "load_scene", "write_frames",
    "DepthMetrics", "MotionMetrics", "aee", "rre", "iou", "depth_metrics",
]
