"""Binary and one-vs-rest shallow classifiers: SVM (SMO), ADT, random forest."""

from .adt import AdtHyper, AdtModel, predict_adt, train_adt
from .forest import RfHyper, RfModel, predict_rf, train_rf
from .multiclass import OvrModel, predict_multiclass, train_binary, train_multiclass
from .svm import SvmHyper, SvmModel, predict_svm, train_svm

__all__ = [
    "AdtHyper", "AdtModel", "OvrModel", "RfHyper", "RfModel", "SvmHyper", "SvmModel",
    "predict_adt", "predict_multiclass", "predict_rf", "predict_svm",
    "train_adt", "train_binary", "train_multiclass", "train_rf", "train_svm",
]
