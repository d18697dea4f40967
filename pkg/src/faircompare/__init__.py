"""Fair causal comparisons of many treatments under positivity violations."""

from .core import Dataset, EstimationConfig, FoldAssignment, split_folds, validate_dataset
from .estimator import Contrast, EstimateSet, contrast, eif_matrix, one_step, plugin
from .families import ShiftFamily, SmoothingKernel, eval_f, eval_s, parse_family
from .interventions import interventional_propensity, rho, smooth_trim_score
from .nuisance import NuisanceFits, crossfit_nuisances, oracle_nuisances

__all__ = [
    "Contrast",
    "Dataset",
    "EstimateSet",
    "EstimationConfig",
    "FoldAssignment",
    "NuisanceFits",
    "ShiftFamily",
    "SmoothingKernel",
    "contrast",
    "crossfit_nuisances",
    "eif_matrix",
    "eval_f",
    "eval_s",
    "interventional_propensity",
    "one_step",
    "oracle_nuisances",
    "parse_family",
    "plugin",
    "rho",
    "smooth_trim_score",
    "split_folds",
    "validate_dataset",
]

__version__ = "0.1.0"
