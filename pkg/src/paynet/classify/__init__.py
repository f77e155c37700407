"""Missing-rating prediction from network-only features."""

from .features import FeaturePipeline, build_features
from .learners import (
    LearnerError,
    MLPModel,
    SoftmaxModel,
    TreeModel,
    mlp_loss_grad,
    predict_mlp,
    predict_softmax,
    predict_tree,
    smote,
    softmax_loss_grad,
    train_mlp,
    train_softmax,
    train_tree,
)
from .twostep import (
    ORDER,
    P_ACC,
    P_PR,
    P_REC,
    TwoStepModel,
    confusion_matrix,
    evaluate,
    grid_search,
    median_vote,
    predict_two_step,
    random_baseline,
    stratified_split,
    train_one_step,
    train_two_step,
    predict_one_step,
)

__all__ = [
    "ORDER",
    "FeaturePipeline", "build_features",
    "LearnerError", "SoftmaxModel", "TreeModel", "MLPModel",
    "smote", "train_softmax", "predict_softmax", "softmax_loss_grad",
    "train_tree", "predict_tree", "train_mlp", "predict_mlp", "mlp_loss_grad",
    "TwoStepModel", "train_two_step", "predict_two_step", "median_vote",
    "train_one_step", "predict_one_step",
    "confusion_matrix", "evaluate", "random_baseline", "grid_search",
    "stratified_split", "P_ACC", "P_REC", "P_PR",
]
