"""pollenstack: 3D pollen z-stack classification pipeline.

Ingests z-stack image trees, selects focal layers by Canny edge
strength, extracts clamped layer windows, canonicalizes to 224x224
tensors with mean-gray padding, splits deterministically (10% test +
10-fold CV), packages bit-exact binary datasets, and scores prediction
files into plain-text report tables. A logistic-regression baseline
makes the whole pipeline end-to-end runnable without a deep-learning
framework.
"""

__version__ = "0.1.0"

from .canonicalize import AugmentConfig, CanonicalSample, augment, flip, pad_to_canonical
from .dataset_kit import SplitPlan, fold_roles, make_split, pack, read_packed
from .eval_kit import EvalReport, PredictionSet, aggregate_cv, render_table, score
from .focus_select import CannyParams, FocusProfile, canny_edges, extract_window, \
    select_focal, sharpness
from .stack_core import CLASS_LABELS, ClassLabel, DatasetManifest, ZStack, \
    ingest_directory, load_stack

__all__ = [
    "AugmentConfig", "CanonicalSample", "augment", "flip", "pad_to_canonical",
    "SplitPlan", "fold_roles", "make_split", "pack", "read_packed",
    "EvalReport", "PredictionSet", "aggregate_cv", "render_table", "score",
    "CannyParams", "FocusProfile", "canny_edges", "extract_window",
    "select_focal", "sharpness",
    "CLASS_LABELS", "ClassLabel", "DatasetManifest", "ZStack",
    "ingest_directory", "load_stack",
]
