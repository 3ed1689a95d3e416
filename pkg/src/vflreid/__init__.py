"""Vehicle re-identification with variational features and an LSTM viewpoint encoder.

Everything runs on a small float64 autodiff core (:mod:`vflreid.tensor`); the
image backbone is a pluggable stand-in (identity or a two-layer MLP), so the
package works on precomputed features or on its own synthetic images.
"""

from .data import (
    FeatureRecord,
    SequenceBatch,
    SyntheticSpec,
    VehicleImage,
    augment,
    build_query_sequence,
    build_train_sequence,
    generate_synthetic,
    load_feature_file,
    split_query_gallery,
    write_feature_file,
)
from .evaluation import EmbeddingSet, cmc_top_k, distance, evaluate, mean_average_precision, rank_query
from .layers import DenseLayer, GaussianParams, LstmLayer, dense_forward, lstm_forward, sequence_feature, vfl_forward
from .losses import LossValue, LossWeights, combined_loss, kl_to_standard_normal, softmax_cross_entropy
from .optim import Adam, AdamState, LrSchedule, adam_step, lr_at_epoch
from .pipeline import (
    ModelConfig,
    PipelineModel,
    Stage,
    TrainPlan,
    embed_items,
    forward_embed,
    infer_feature,
    run_train_plan,
    train_stage,
)
from .tensor import Tensor, backward

__version__ = "0.1.0"
