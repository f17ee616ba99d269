"""Model families pluggable into the evaluation protocol.

Each family implements the three-method contract documented in
:mod:`volclass.evaluation`:

* ``select(view, indices, inner_folds, seed)`` picks hyperparameters using
  only the given training rows,
* ``fit(view, indices, params, seed)`` trains a model on those rows,
* ``predict(model, block)`` labels a ``(volumes, labels)`` block, ignoring
  the labels, and returns ``(predicted labels in {0,1}, scores)``.

Conventions: single-channel networks read the gray-matter map (channel 0)
and ignore the rest; multi-channel networks and the PCA+SVM baseline use
all three maps. The SVM baseline reduces each map separately and
concatenates the projections into one feature vector.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .architectures import FAMILY_NAMES, ArchSpec, build_network
from .errors import ConfigError
from .evaluation import fold_complement, stratified_kfold
from .layers import init_parameters
from .pca import pca_fit, pca_transform
from .svm import (
    DEFAULT_C_GRID,
    DEFAULT_GAMMA_GRID,
    SvmModel,
    grid_search,
    svm_decision,
    svm_fit,
)
from .training import TrainConfig, fit as train_network, predict_proba

_GM_CHANNEL = 0


def _child_seed(*entropy):
    """A derived integer seed, stable in the entropy values."""
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# CNN family


@dataclass(frozen=True)
class CnnFamily:
    """A named 3-D CNN architecture trained with mini-batch BCE.

    ``lr_grid`` with two or more entries turns on inner-loop selection of the
    learning rate by mean inner-fold accuracy (ties prefer the smaller rate).
    A single-entry or empty grid skips the inner loop and uses the lone rate
    (or the config default), which keeps small runs inside their time budget.
    """

    arch: ArchSpec
    config: TrainConfig = TrainConfig()
    lr_grid: tuple = ()

    @property
    def name(self):
        suffix = "-multi" if self.arch.multi_channel else ""
        return self.arch.name + suffix

    def _channels(self, volumes):
        if self.arch.multi_channel:
            return volumes
        return volumes[:, _GM_CHANNEL : _GM_CHANNEL + 1]

    def _sized(self, volumes):
        extent = tuple(int(e) for e in volumes.shape[2:])
        if extent == self.arch.input_extent:
            return self.arch
        return dataclasses.replace(self.arch, input_extent=extent)

    def _train(self, volumes, labels, learning_rate, seed):
        x = self._channels(volumes)
        spec = self._sized(volumes)
        init_seed, shuffle_seed = (_child_seed(seed, i) for i in (0, 1))
        network = build_network(spec)
        init_parameters(network, init_seed)
        config = dataclasses.replace(
            self.config, learning_rate=float(learning_rate), seed=shuffle_seed,
            log_path=None,
        )
        return train_network(network, (x, labels), config, arch=spec)

    def select(self, view, indices, inner_folds, seed):
        grid = tuple(float(lr) for lr in self.lr_grid)
        if not grid:
            grid = (self.config.learning_rate,)
        if len(grid) == 1:
            return {"learning_rate": grid[0]}

        indices = np.asarray(indices)
        labels = view.labels_for(indices)
        folds = stratified_kfold(labels, inner_folds, seed)
        mean_accuracy = []
        for rate_index, rate in enumerate(sorted(grid)):
            fold_accuracy = []
            for f in range(inner_folds):
                train_pos = fold_complement(folds, f)
                x_tr, y_tr = view.take(indices[train_pos])
                x_va, y_va = view.take(indices[folds[f]])
                model = self._train(
                    x_tr, y_tr, rate, seed=_child_seed(seed, rate_index, f)
                )
                probs = predict_proba(model, self._channels(x_va))
                fold_accuracy.append(np.mean((probs >= 0.5) == (y_va == 1)))
            mean_accuracy.append(np.mean(fold_accuracy))
        best = int(np.argmax(mean_accuracy))  # ties resolve to the smaller rate
        return {"learning_rate": sorted(grid)[best]}

    def fit(self, view, indices, params, seed):
        volumes, labels = view.take(np.asarray(indices))
        return self._train(volumes, labels, params["learning_rate"], seed)

    def predict(self, model, block):
        volumes, _ = block
        probs = predict_proba(model, self._channels(np.asarray(volumes)))
        probs = np.atleast_1d(np.asarray(probs, dtype=np.float64))
        return (probs >= 0.5).astype(int), probs


# ---------------------------------------------------------------------------
# PCA + SVM baseline


@dataclass(frozen=True)
class SvmFamilyModel:
    """Per-map PCA reducers plus the SVM trained on their concatenation."""

    pcas: tuple  # one PcaModel per map, in channel order
    svm: SvmModel


@dataclass(frozen=True)
class SvmFamily:
    """Flatten each map, reduce with PCA, classify the concatenated vector.

    Hyperparameters (C, and γ for the RBF kernel) come from an inner-loop
    grid search run on features reduced with PCA fitted to the full outer
    training split; the reducers are refitted on the same rows at fit time,
    which reproduces them exactly since PCA is deterministic.
    """

    kernel: str = "rbf"
    variance_target: float = 0.95
    c_grid: tuple = DEFAULT_C_GRID
    gamma_grid: tuple = DEFAULT_GAMMA_GRID

    def __post_init__(self):
        if self.kernel not in ("linear", "rbf"):
            raise ConfigError(f"kernel must be linear or rbf, got {self.kernel!r}")
        if not 0.0 < self.variance_target <= 1.0:
            raise ConfigError(
                f"variance target must be in (0, 1], got {self.variance_target}"
            )

    @property
    def name(self):
        return f"svm-{self.kernel}"

    def _fit_reducers(self, volumes):
        n = volumes.shape[0]
        return tuple(
            pca_fit(volumes[:, m].reshape(n, -1), self.variance_target)
            for m in range(volumes.shape[1])
        )

    @staticmethod
    def _features(pcas, volumes):
        n = volumes.shape[0]
        parts = [
            pca_transform(pca, volumes[:, m].reshape(n, -1))
            for m, pca in enumerate(pcas)
        ]
        return np.concatenate(parts, axis=1)

    def select(self, view, indices, inner_folds, seed):
        volumes, labels = view.take(np.asarray(indices))
        pcas = self._fit_reducers(volumes)
        features = self._features(pcas, volumes)
        gamma_grid = self.gamma_grid if self.kernel == "rbf" else ()
        c, gamma = grid_search(
            features,
            2.0 * labels - 1.0,
            kernel=self.kernel,
            c_grid=self.c_grid,
            gamma_grid=gamma_grid,
            inner_folds=inner_folds,
            seed=seed,
        )
        return {"C": c, "gamma": gamma}

    def fit(self, view, indices, params, seed):
        volumes, labels = view.take(np.asarray(indices))
        pcas = self._fit_reducers(volumes)
        features = self._features(pcas, volumes)
        svm = svm_fit(
            features,
            2.0 * labels - 1.0,
            kernel=self.kernel,
            C=params["C"],
            gamma=params["gamma"],
        )
        return SvmFamilyModel(pcas=pcas, svm=svm)

    def predict(self, model, block):
        volumes, _ = block
        features = self._features(model.pcas, np.asarray(volumes))
        scores = np.atleast_1d(svm_decision(model.svm, features))
        return (scores >= 0.0).astype(int), scores


# ---------------------------------------------------------------------------
# Constant debug family


#: The (only) model the constant family ever produces.
CONSTANT_MODEL = "always-positive"


@dataclass(frozen=True)
class ConstantFamily:
    """Always predicts the positive class; a degenerate protocol oracle."""

    name = "constant"

    def select(self, view, indices, inner_folds, seed):
        return {}

    def fit(self, view, indices, params, seed):
        return CONSTANT_MODEL

    def predict(self, model, block):
        volumes, _ = block
        n = np.asarray(volumes).shape[0]
        return np.ones(n, dtype=int), np.ones(n, dtype=np.float64)


# ---------------------------------------------------------------------------
# Name registry (shared by the CLI and the test drivers)

SVM_FAMILY_NAMES = ("svm-linear", "svm-rbf")

FAMILY_CHOICES = (
    FAMILY_NAMES
    + tuple(f"{name}-multi" for name in FAMILY_NAMES)
    + SVM_FAMILY_NAMES
    + ("constant",)
)


def family_from_name(name, *, train_config=None, lr_grid=(), arch_overrides=None,
                     variance_target=0.95, c_grid=None, gamma_grid=None):
    """Build a family by its registry name (``seq1`` ... ``constant``).

    ``train_config``/``lr_grid``/``arch_overrides`` apply to CNN names, the
    grid and variance arguments to the SVM names; options for the wrong
    family kind are rejected rather than ignored. ``arch_overrides`` may
    adjust the architecture knobs the name leaves open (``input_extent``,
    ``filters``, ``pool_window``, ``pool_stride``) but not the identity
    fields the name itself pins down.
    """
    cnn_options = train_config is not None or lr_grid or arch_overrides
    svm_options = c_grid is not None or gamma_grid is not None

    if name == "constant":
        if cnn_options or svm_options:
            raise ConfigError("the constant family takes no options")
        return ConstantFamily()

    if name in SVM_FAMILY_NAMES:
        if cnn_options:
            raise ConfigError(f"{name} does not take CNN training options")
        kwargs = {"kernel": name.split("-", 1)[1], "variance_target": variance_target}
        if c_grid is not None:
            kwargs["c_grid"] = tuple(c_grid)
        if gamma_grid is not None:
            kwargs["gamma_grid"] = tuple(gamma_grid)
        return SvmFamily(**kwargs)

    base, _, suffix = name.partition("-")
    if base in FAMILY_NAMES and suffix in ("", "multi"):
        if svm_options:
            raise ConfigError(f"{name} does not take SVM grid options")
        overrides = dict(arch_overrides or {})
        allowed = {"input_extent", "filters", "pool_window", "pool_stride"}
        if not set(overrides) <= allowed:
            raise ConfigError(
                f"architecture overrides may only set {sorted(allowed)}, "
                f"got {sorted(set(overrides) - allowed)}"
            )
        overrides = {
            key: tuple(value) if isinstance(value, list) else value
            for key, value in overrides.items()
        }
        arch = ArchSpec.named(base, multi_channel=(suffix == "multi"), **overrides)
        return CnnFamily(
            arch=arch,
            config=train_config if train_config is not None else TrainConfig(),
            lr_grid=tuple(lr_grid),
        )

    raise ConfigError(
        f"unknown model family {name!r}; expected one of {', '.join(FAMILY_CHOICES)}"
    )
