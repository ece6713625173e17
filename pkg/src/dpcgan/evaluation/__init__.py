"""Fidelity, utility and privacy-attack evaluation of synthetic tables."""

from .attacks import (
    AttackReport,
    attribute_inference_attack,
    best_threshold_accuracy,
    membership_inference_attack,
    reident_attack,
)
from .classifiers import Classifier, feature_matrix, fit_classifier
from .fidelity import FidelityReport, emd_1d, mixed_distance
from .reporting import attack_table, fidelity_table, utility_table
from .utility import UtilityRow, classification_metrics, majority_rate, tstr

__all__ = [
    "AttackReport", "Classifier", "FidelityReport", "UtilityRow",
    "attack_table", "attribute_inference_attack", "best_threshold_accuracy", "classification_metrics",
    "emd_1d", "feature_matrix", "fidelity_table", "fit_classifier", "majority_rate",
    "membership_inference_attack", "mixed_distance", "reident_attack", "tstr", "utility_table",
]
