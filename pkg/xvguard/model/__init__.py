from .checkpoint import load_checkpoint, save_checkpoint
from .gradients import AttackTarget, Objective, cw_margin, grad_input, loss_and_grad, make_objective
from .losses import aam_softmax_loss
from .training import TrainConfig, adversarial_train, fine_tune_gaussian, train_classifier
from .xvector import StatsPooling, XVectorClassifier, XVectorConfig, build_classifier, predict

__all__ = (
    "AttackTarget",
    "Objective",
    "StatsPooling",
    "TrainConfig",
    "XVectorClassifier",
    "XVectorConfig",
    "aam_softmax_loss",
    "adversarial_train",
    "build_classifier",
    "cw_margin",
    "fine_tune_gaussian",
    "grad_input",
    "load_checkpoint",
    "loss_and_grad",
    "make_objective",
    "predict",
    "save_checkpoint",
    "train_classifier",
)
