"""Composition-aware image aesthetics scoring.

A from-scratch pipeline: densely connected dilated encoder at output stride
8, cascaded atrous multi-scale context, region-graph reasoning by stacked
graph convolutions, and a log-sum-exp aggregated scoring head, trained
end-to-end on a reverse-mode autodiff tensor engine.
"""

from .aspp import AsppConfig, DenseAspp
from .encoder import Encoder, EncoderConfig, build_encoder, feature_side
from .graph import (NodeFeatures, RegionGraph, RegionGraphReasoner,
                    export_similarity, graph_reason, normalize, similarity)
from .head import ScoringHead, classify, image_probabilities, lse_aggregate
from .model import Model, ModelConfig, VARIANTS, build_model
from .tensor import (NumericError, ShapeError, Tensor, backward, no_grad,
                     precision, set_default_dtype)
from .train import (AdamState, Metrics, TrainConfig, TrainState, adam_step,
                    augment, average_precision, bce_loss, evaluate, lr_at,
                    mse_loss, spearman_rho, train)

__version__ = "0.1.0"
