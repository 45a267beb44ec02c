"""Ring-pooled multi-map binary patch descriptors with learned group weights."""

from .bit_selection import SelectionResult, prefilter, select_bits
from .dataset_io import load_pair_list, load_patch_source, sample_training_pairs
from .descriptor import Descriptor, DescriptorModel, GroupLayout, extract_descriptor, extract_descriptors
from .errors import ConfigError, CorruptDatasetError, DataError, ResourceCapError, RMGDError
from .feature_maps import MAP_NAMES, compute_feature_stack
from .group_optimizer import train_l1_rda, train_l2, weighted_distance
from .match_eval import ScoredPairs, WeightedHamming, fpr_at_recall, nn_match, roc
from .pipeline import evaluate, random_model, train_bits, train_weights
from .ring_geometry import build_circle_integral, build_geometry, region_sum

__version__ = "0.1.0"

__all__ = [
    "MAP_NAMES", "ConfigError", "CorruptDatasetError", "DataError", "Descriptor", "DescriptorModel",
    "GroupLayout", "RMGDError", "ResourceCapError", "ScoredPairs", "SelectionResult", "WeightedHamming",
    "build_circle_integral", "build_geometry", "compute_feature_stack", "evaluate", "extract_descriptor",
    "extract_descriptors", "fpr_at_recall", "load_pair_list", "load_patch_source", "nn_match", "prefilter", "random_model", "region_sum", "roc",
    "sample_training_pairs", "select_bits", "train_bits", "train_l1_rda", "train_l2", "train_weights",
    "weighted_distance",
]
