"""Object-centric video anomaly detection.

Per-object appearance and motion patches feed three convolutional
auto-encoders; their latent codes concatenate into a feature vector that a
cluster-based one-vs-rest normality model scores. Frame scores are the
per-frame maxima, temporally smoothed and min-max normalized, and are
evaluated with frame-level ROC AUC.
"""

from .autoencoder import (
    ConvAutoencoder,
    TrainingSchedule,
    cae_forward,
    cae_train,
    extract_feature,
    extract_features_batch,
    load_model,
    save_model,
)
from .cluster import MinEnergyKMeans
from .evaluation import RocResult, aggregate_auc, frame_auc
from .normality import NormalityModel
from .scoring import (
    FrameScoreSeries,
    build_map,
    frame_score,
    minmax_normalize,
    temporal_smooth,
)
from .svm import LinearHingeSVM, train_hinge_svm
from .synth import SceneConfig, SpriteSpec, generate_scene, render_scene

__version__ = "0.1.0"

__all__ = [
    "ConvAutoencoder",
    "TrainingSchedule",
    "cae_forward",
    "cae_train",
    "extract_feature",
    "extract_features_batch",
    "load_model",
    "save_model",
    "MinEnergyKMeans",
    "RocResult",
    "aggregate_auc",
    "frame_auc",
    "NormalityModel",
    "FrameScoreSeries",
    "build_map",
    "frame_score",
    "minmax_normalize",
    "temporal_smooth",
    "LinearHingeSVM",
    "train_hinge_svm",
    "SceneConfig",
    "SpriteSpec",
    "generate_scene",
    "render_scene",
    "__version__",
]
