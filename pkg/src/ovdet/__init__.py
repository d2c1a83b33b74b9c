"""Desk-scale open-vocabulary object detection.

Prompt-guided transformer decoding with a constant number of object queries,
RoI-based masked attention for single-pass CLIP scoring, RoI pruning, and a
base/novel probability ensemble, trained end to end on a synthetic
shape-composition dataset.
"""

from .clip import ClipConfig, ClipModel, build_roi_masks, clip_probs
from .decoder import Decoder, DecoderConfig, DetectionOutput, PromptSet, project_prompts
from .encoder import Encoder, EncoderConfig, ImageSample, PatchGrid
from .geometry import giou_cxcywh, giou_xyxy, iou_xyxy
from .losses import GroundTruthSet, LossWeights, focal_loss, total_loss
from .matching import MatchAssignment, hungarian
from .metrics import EvalReport, average_precision, evaluate
from .pipeline import (
    Detection,
    EnsembleConfig,
    OpenVocabDetector,
    PipelineModels,
    Vocabulary,
    detect,
    ensemble_probs,
    prune_rois,
)

__all__ = [
    "ClipConfig",
    "ClipModel",
    "Decoder",
    "DecoderConfig",
    "Detection",
    "DetectionOutput",
    "Encoder",
    "EncoderConfig",
    "EnsembleConfig",
    "EvalReport",
    "GroundTruthSet",
    "ImageSample",
    "LossWeights",
    "MatchAssignment",
    "OpenVocabDetector",
    "PatchGrid",
    "PipelineModels",
    "PromptSet",
    "Vocabulary",
    "average_precision",
    "build_roi_masks",
    "clip_probs",
    "detect",
    "ensemble_probs",
    "evaluate",
    "focal_loss",
    "giou_cxcywh",
    "giou_xyxy",
    "hungarian",
    "iou_xyxy",
    "project_prompts",
    "prune_rois",
    "total_loss",
]
