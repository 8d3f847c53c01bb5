from .losses import squared_error_loss, uncert_loss
from .model import (
    GaussianPrediction,
    Model,
    build_from_arch,
    forward,
    load_model,
    predict_batch,
    predict_gaussian,
    save_model,
)
from .tensor import Tensor
from .train import SGD, TrainConfig, TrainingDiverged, cosine_lr, train
