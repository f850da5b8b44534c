"""Detection of artificially overlaid text in room-interior photos.

The pipeline runs: score-map computation, the region-score annotation
gate, crowd-vote aggregation, train/val splitting, classifier training
(mask-attention model plus two baselines), evaluation, and an HTTP vetting
service for reviewing ambiguous examples.
"""

from .annotation import (
    AggregationConfig,
    DatasetStats,
    InsufficientVotesError,
    aggregate_manifest,
    aggregate_votes,
    binarize_label,
    dataset_stats,
    filter_votes_by_time,
    split_dataset,
)
from .datamodel import (
    AggregatedLabel,
    BinaryClass,
    DatasetManifest,
    LabelSource,
    ManifestError,
    ManifestRecord,
    ScoreMap,
    Split,
    TensorFormatError,
    TextLabel,
    VoteRecord,
    check_image,
)
from .estimator import OverlayTextClassifier
from .metrics import (
    MetricsReport,
    best_f1_threshold,
    compute_report,
    confusion_counts,
    format_metrics_table,
    roc_auc,
)
from .nets import (
    AttentionMixer,
    AttentionParams,
    ModelVariant,
    OverlayTextNet,
    attention_mask,
    binarized_features,
    gaussian_kernel,
    load_model,
    save_model,
    upsample2x,
)
from .scoremaps import (
    Character,
    CharacterLayout,
    CharKind,
    ProviderConfig,
    ProviderMode,
    ScoreMapProvider,
    compute_score_maps,
    oracle_render,
)
from .selection import GateConfig, region_gate_score, select_candidates
from .service import (
    DecisionAction,
    ReviewDecision,
    VersionConflictError,
    apply_decision,
    candidate_boxes,
    create_app,
    replay_audit,
)
from .synth import SyntheticExample, SyntheticSpec, generate_corpus, generate_example
from .training import (
    TrainConfig,
    TrainExample,
    TrainResult,
    TrainState,
    plateau_step,
    resize_and_pad,
    train_classifier,
)

__all__ = [
    "AggregatedLabel",
    "AggregationConfig",
    "AttentionMixer",
    "AttentionParams",
    "BinaryClass",
    "Character",
    "CharacterLayout",
    "CharKind",
    "DatasetManifest",
    "DatasetStats",
    "DecisionAction",
    "GateConfig",
    "InsufficientVotesError",
    "LabelSource",
    "ManifestError",
    "ManifestRecord",
    "MetricsReport",
    "ModelVariant",
    "OverlayTextClassifier",
    "OverlayTextNet",
    "ProviderConfig",
    "ProviderMode",
    "ReviewDecision",
    "ScoreMap",
    "ScoreMapProvider",
    "Split",
    "SyntheticExample",
    "SyntheticSpec",
    "TensorFormatError",
    "TextLabel",
    "TrainConfig",
    "TrainExample",
    "TrainResult",
    "TrainState",
    "VersionConflictError",
    "VoteRecord",
    "aggregate_manifest",
    "aggregate_votes",
    "apply_decision",
    "attention_mask",
    "best_f1_threshold",
    "binarize_label",
    "binarized_features",
    "candidate_boxes",
    "check_image",
    "compute_report",
    "compute_score_maps",
    "confusion_counts",
    "create_app",
    "dataset_stats",
    "filter_votes_by_time",
    "format_metrics_table",
    "gaussian_kernel",
    "generate_corpus",
    "generate_example",
    "load_model",
    "oracle_render",
    "plateau_step",
    "region_gate_score",
    "replay_audit",
    "resize_and_pad",
    "roc_auc",
    "save_model",
    "select_candidates",
    "split_dataset",
    "train_classifier",
    "upsample2x",
]
