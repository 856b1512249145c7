"""Few-shot metric learning for CSI gesture recognition on multichannel time series."""

__version__ = "0.1.0"

from .csi_core import (
    CsiRecord,
    GestureDataset,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_labels,
)
from .curriculum import (
    CurriculumStage,
    add_noise,
    augment_query,
    build_schedule,
    snr_db,
    stage_for_epoch,
)
from .episodes import Episode, EpisodeConfig, episode_stream, sample_episode
from .backbone import BackboneConfig, Conv4Embedding, EmbeddingVector, embed, embed_batch
from .preprocess import DwtConfig, HampelConfig, dwt_denoise, hampel_filter, preprocess_record
from .protometric import (
    AttentionScores,
    ClassPrototype,
    EpisodeLogits,
    FeatureAttention,
    attended_distance,
    attention_scores,
    classify,
    compute_prototypes,
    episode_loss,
    uniform_attention,
)
from .trainer import RunReport, TrainConfig, TrainedModel, evaluate, run_ablation, train

__all__ = [
    "CsiRecord",
    "GestureDataset",
    "SyntheticConfig",
    "generate_synthetic",
    "load_dataset",
    "save_dataset",
    "split_labels",
    "HampelConfig",
    "DwtConfig",
    "hampel_filter",
    "dwt_denoise",
    "preprocess_record",
    "Episode",
    "EpisodeConfig",
    "sample_episode",
    "episode_stream",
    "BackboneConfig",
    "Conv4Embedding",
    "EmbeddingVector",
    "embed",
    "embed_batch",
    "ClassPrototype",
    "AttentionScores",
    "EpisodeLogits",
    "FeatureAttention",
    "compute_prototypes",
    "attention_scores",
    "attended_distance",
    "classify",
    "episode_loss",
    "uniform_attention",
    "CurriculumStage",
    "build_schedule",
    "stage_for_epoch",
    "add_noise",
    "snr_db",
    "augment_query",
    "TrainConfig",
    "TrainedModel",
    "RunReport",
    "train",
    "evaluate",
    "run_ablation",
]
