"""Offline pseudo-label refinement for event-camera object detection.

Turns raw event streams plus noisy detector outputs into certainty-tagged
pseudo labels and per-anchor training targets: TTA ensembling over flipped
event streams, bidirectional tracking-based cleaning, dual-threshold
filtering, soft anchor assignment with a masked detection loss, labeled-
subset protocols, and evaluation/stopping machinery.
"""

from .assign import (
    AnchorAssignment,
    AnchorGrid,
    AnchorPrediction,
    LossBreakdown,
    LossGradient,
    assign,
    detection_loss,
    loss_gradient,
)
from .errors import (
    EmptyResultError,
    InvalidConfigError,
    InvalidInputError,
    InvalidThresholdsError,
    LeodError,
    UndefinedMetricError,
)
from .evaluate import EvalFilter, PrPoint, match_boxes, mean_ap, pseudo_label_pr, stopping_decision
from .evrep import Event, EventStream, Histogram, build_histograms, hflip_stream, time_flip_stream
from .geometry import DetBox, box_score, clamp_box, iou, nms, pairwise_iou
from .pipeline import (
    Certainty,
    Provenance,
    PseudoLabel,
    PseudoLabelSet,
    ThresholdConfig,
    derive_thresholds,
    forge,
    hard_filter,
    run_round,
    soft_uncertain,
)
from .protocol import LabelSplit, ssod_split, wsod_split
from .tracker import Track, TrackedBox, Tracker, TrackerParams, inpaint, predict, track_sequence
from .tta import TtaVariant, tta_merge, unflip_boxes

__version__ = "0.1.0"
