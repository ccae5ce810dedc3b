"""Video instance mask tracking: centroid-sampled embeddings, forward/reverse
affinity, Kalman gating and a mask-IOU fallback, with HOTA evaluation."""

from vistrack.assignment import AssignmentResult, solve_assignment
from vistrack.masks import BinaryMask, BoundingBox, Centroid, centroid, mask_iou
from vistrack.metrics import LabeledSequence, MetricsReport, evaluate, evaluate_many
from vistrack.tracker import Detection, FrameReport, Tracker, TrackerConfig, track_sequence

__version__ = "0.1.0"

__all__ = [
    "AssignmentResult",
    "BinaryMask",
    "BoundingBox",
    "Centroid",
    "Detection",
    "FrameReport",
    "LabeledSequence",
    "MetricsReport",
    "Tracker",
    "TrackerConfig",
    "centroid",
    "evaluate",
    "evaluate_many",
    "mask_iou",
    "solve_assignment",
    "track_sequence",
]
