"""Weakly supervised hemorrhage localization from attention maps."""
from .bayesopt import (
    DEFAULT_SPACE,
    Dimension,
    SearchSpace,
    TrialRecord,
    expected_improvement,
    gp_fit,
    gp_predict,
    grid_search,
    latin_hypercube,
    optimize_detector,
)
from .core import (
    BoundingBox,
    DegenerateDatasetError,
    Detection,
    DetectorParams,
    EvalCounts,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
    as_matrix,
)
from .io import read_boxes, read_detections, read_matrix, write_boxes, write_detections, write_matrix
from .metrics import MetricsReport, aggregate, evaluate_slices, match_slice, report
from .mil import (
    AttentionParams,
    ClassifierHead,
    EmbeddingBag,
    TrainConfig,
    activation_map_from_features,
    attention_map_from_weights,
    attention_pool,
    gated_attention_weights,
    max_pool_score,
    train_mil_head,
)
from .morphology import Footprint, detect_peaks, gray_dilate, h_maxima, local_maxima, morph_reconstruct_dilation
from .synth import BagConfig, SceneConfig, generate_bags, generate_scene
from .windowing import BRAIN_WINDOW, SUBDURAL_WINDOW, StandardizationStats, WindowSpec, apply_window, standardize

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "BRAIN_WINDOW", "BagConfig", "BoundingBox", "ClassifierHead", "DEFAULT_SPACE",
    "DegenerateDatasetError", "Detection", "DetectorParams", "Dimension", "EmbeddingBag", "EvalCounts",
    "Footprint", "FormatError", "MetricsReport", "NumericalError", "ParameterError", "SUBDURAL_WINDOW",
    "SceneConfig", "SearchSpace", "ShapeError", "StandardizationStats", "TrainConfig", "TrialRecord",
    "WindowSpec", "activation_map_from_features", "aggregate", "apply_window", "as_matrix",
    "attention_map_from_weights", "attention_pool", "detect_peaks", "evaluate_slices",
    "expected_improvement", "gated_attention_weights", "generate_bags", "generate_scene", "gp_fit",
    "gp_predict", "gray_dilate", "grid_search", "h_maxima", "latin_hypercube", "local_maxima",
    "match_slice", "max_pool_score", "morph_reconstruct_dilation", "optimize_detector", "read_boxes",
    "read_detections", "read_matrix", "report", "standardize", "train_mil_head", "write_boxes",
    "write_detections", "write_matrix",
]
