"""Set aggregation networks: trainable permutation-invariant pooling on a small autodiff core."""
from .aggregation import (
    FeatureSet,
    SanLayer,
    attach_positions,
    flatten,
    conv1x1,
    pool,
    power_max_approx,
    san_aggregate,
)
from .models import Model, ModelConfig, build_model, image_to_set, model_forward
from .tensor import Tensor, apply_primitive, backward
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"
