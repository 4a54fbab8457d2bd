"""Fusion of paired image/text embeddings with metric training and kNN evaluation."""

from .errors import (
    BlobSizeError,
    CardfuseError,
    ContractError,
    DataError,
    ManifestError,
    MiningError,
    NormalizationError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .estimator import GatedResidualFusion
from .fusion import (
    FusionParams,
    embed_dataset,
    fusion_backward,
    fusion_forward,
    init_fusion_params,
    load_checkpoint,
    save_checkpoint,
)
from .knn import (
    BruteKNeighborsClassifier,
    EvalReport,
    compare_modes,
    evaluate,
    evaluate_head,
    knn_classify,
    render_report_table,
)
from .store import (
    Dataset,
    EmbeddingRecord,
    SplitConfig,
    load_dataset,
    normalize_concat,
    save_dataset,
    stratified_split,
    synth_generate,
)
from .train import (
    ClassifierHead,
    TrainConfig,
    TrainResult,
    TripletBatch,
    cross_entropy_loss,
    mine_semi_hard,
    mine_triplets,
    train,
    triplet_loss,
)

__version__ = "0.1.0"

__all__ = [
    "BlobSizeError",
    "BruteKNeighborsClassifier",
    "CardfuseError",
    "ClassifierHead",
    "ContractError",
    "DataError",
    "Dataset",
    "EmbeddingRecord",
    "EvalReport",
    "FusionParams",
    "GatedResidualFusion",
    "ManifestError",
    "MiningError",
    "NormalizationError",
    "ParameterError",
    "ShapeError",
    "SplitConfig",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TripletBatch",
    "compare_modes",
    "cross_entropy_loss",
    "embed_dataset",
    "evaluate",
    "evaluate_head",
    "fusion_backward",
    "fusion_forward",
    "init_fusion_params",
    "knn_classify",
    "load_checkpoint",
    "load_dataset",
    "mine_semi_hard",
    "mine_triplets",
    "normalize_concat",
    "render_report_table",
    "save_checkpoint",
    "save_dataset",
    "stratified_split",
    "synth_generate",
    "train",
    "triplet_loss",
]
