"""From-scratch classifiers, the one-class autoencoder detector and evaluation metrics."""

from .metrics import (EvalReport, RocCurve, confusion_matrix, evaluate, evaluate_predictions, gradient_check,
                      one_class_report, pca_project, rates, roc_curve)
from .nets import ImageClassifier, LinearModel, RawIQClassifier, SparseAutoencoder, softmax
from .training import (AutoencoderConfig, ClassifierConfig, ConvStage, DivergenceError, RawIQConfig, ThresholdModel,
                       TrainedModel, interleave, load_model, one_class_decide, predict, reconstruction_mse, save_model,
                       split_indices, train_autoencoder, train_classifier, train_rawiq_classifier)

__all__ = [
    "AutoencoderConfig", "ClassifierConfig", "ConvStage", "DivergenceError", "EvalReport", "ImageClassifier",
    "LinearModel", "RawIQClassifier", "RawIQConfig", "RocCurve", "SparseAutoencoder", "ThresholdModel",
    "TrainedModel", "confusion_matrix", "evaluate", "evaluate_predictions", "gradient_check", "interleave",
    "load_model", "one_class_decide", "one_class_report", "pca_project", "predict", "rates",
    "reconstruction_mse", "roc_curve", "save_model", "softmax", "split_indices", "train_autoencoder",
    "train_classifier", "train_rawiq_classifier",
]
