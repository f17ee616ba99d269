"""Binary classification of multi-map brain volumes.

From-scratch 3D CNNs (sequential, inception, inception-residual), a
per-map PCA + SVM baseline, stratified nested cross-validation with
repeat averaging and ensemble voting, NIfTI-1 volume I/O, a seeded
phantom-cohort generator, and a versioned model container — all behind
one CLI (``volclass gen-synth | crossval | test | predict``).
"""

from .architectures import ArchSpec, FAMILY_NAMES, build_named, build_network
from .data import (
    MAP_KINDS,
    Manifest,
    Subject,
    Volume,
    VolumeDataset,
    downsample,
    load_manifest,
    read_nifti,
    write_manifest,
    write_nifti,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    ConvergenceError,
    DivergenceError,
    ManifestError,
    MetricError,
    ModelFormatError,
    NiftiError,
    ShapeError,
    StateError,
    TrainingDataError,
    VolclassError,
)
from .evaluation import (
    Ensemble,
    Metrics,
    MetricSummary,
    RepeatResult,
    ensemble_vote,
    independent_test,
    nested_cv,
    repeat_and_average,
    roc_auc,
    stratified_kfold,
)
from .families import (
    FAMILY_CHOICES,
    CnnFamily,
    ConstantFamily,
    SvmFamily,
    family_from_name,
)
from .pca import PcaModel, pca_fit, pca_reconstruct, pca_transform
from .serialize import load_model, save_model
from .svm import SvmModel, grid_search, svm_decision, svm_fit, svm_predict
from .synth import synth_generate
from .training import TrainConfig, TrainedModel, fit, predict, predict_proba

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
