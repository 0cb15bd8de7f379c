"""Worksite physical-distancing and face-mask compliance engine."""

from .compliance import (
    ComplianceConfig,
    DistancePair,
    FrameAssessment,
    MaskState,
    MaskStatus,
    PersonRecord,
    ViolationEvent,
    anchor_point,
    assess_frame,
    associate_faces,
    mask_status,
    pairwise_distances,
    risk_groups,
)
from .detection import (
    BoundingBox,
    ClassLabel,
    Detection,
    FrameDetections,
    GroundTruth,
    ReplaySource,
    filter_by_confidence,
    parse_voc_annotation,
)
from .evaluation import EvalConfig, MatchResult, accuracy, confusion_matrix, iou, match_detections
from .geometry import (
    CalibrationProfile,
    GroundPlaneTransformer,
    Homography,
    ImagePoint,
    PlanePoint,
    calibration_to_homography,
    invert_homography,
    solve_homography,
    transform_point,
    transform_points,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CalibrationProfile",
    "ClassLabel",
    "ComplianceConfig",
    "Detection",
    "DistancePair",
    "EvalConfig",
    "FrameAssessment",
    "FrameDetections",
    "GroundPlaneTransformer",
    "GroundTruth",
    "Homography",
    "ImagePoint",
    "MaskState",
    "MaskStatus",
    "MatchResult",
    "PersonRecord",
    "PlanePoint",
    "ReplaySource",
    "ViolationEvent",
    "accuracy",
    "anchor_point",
    "assess_frame",
    "associate_faces",
    "calibration_to_homography",
    "confusion_matrix",
    "filter_by_confidence",
    "invert_homography",
    "iou",
    "mask_status",
    "match_detections",
    "pairwise_distances",
    "parse_voc_annotation",
    "risk_groups",
    "solve_homography",
    "transform_point",
    "transform_points",
    "__version__",
]
