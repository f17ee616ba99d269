"""Cross-validation protocol: stratified folds, metrics, nested CV, ensembles.

This module owns everything about *how* models are judged rather than
how they are trained: fold construction, the nested selection loop,
repeat averaging, majority voting, and the summary statistics.  It
knows nothing about any concrete model class — estimators come in as
"model family" objects with three methods:

    select(view, indices, inner_folds, seed) -> params
        choose hyperparameters using only the given training indices
        (any inner splitting happens in here);
    fit(view, indices, params, seed) -> model
        train a model on exactly those indices;
    predict(model, block) -> (labels in {0,1}, scores)
        score a data block previously produced by ``view.take``.

``view`` is an :class:`AuditedDataset`; every data access made through
it is recorded in an :class:`AccessLog`, so a finished run can prove
that no outer-test sample ever influenced selection or fitting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    MetricError,
    ShapeError,
    TrainingDataError,
    VolclassError,
)


def stratified_kfold(labels, n_folds, seed):
    """Split ``range(len(labels))`` into ``n_folds`` stratified folds.

    Each class is shuffled independently (seeded) and dealt round-robin,
    continuing the deal across classes so fold sizes stay within one
    sample of each other and every class is spread as evenly as its
    count allows.  Every class must have at least ``n_folds`` members.

    Returns a list of sorted index arrays, one per fold.  The folds are
    disjoint and cover every index exactly once.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ConfigError(f"labels must be one-dimensional, got shape {labels.shape}")
    n = labels.shape[0]
    n_folds = int(n_folds)
    if n_folds < 2:
        raise ConfigError(f"need at least 2 folds, got {n_folds}")
    if n_folds > n:
        raise ConfigError(f"cannot split {n} samples into {n_folds} folds")

    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    dealt = 0
    for value in np.unique(labels):
        members = np.flatnonzero(labels == value)
        if members.shape[0] < n_folds:
            raise ConfigError(
                f"class {value!r} has {members.shape[0]} samples, "
                f"fewer than {n_folds} folds"
            )
        rng.shuffle(members)
        for offset, idx in enumerate(members):
            folds[(dealt + offset) % n_folds].append(int(idx))
        dealt += members.shape[0]
    return [np.array(sorted(fold), dtype=int) for fold in folds]


def fold_complement(folds, held_out):
    """Indices of every fold except ``held_out``, sorted (the training split)."""
    if not 0 <= held_out < len(folds):
        raise ConfigError(f"fold index {held_out} out of range for {len(folds)} folds")
    rest = [folds[i] for i in range(len(folds)) if i != held_out]
    return np.sort(np.concatenate(rest))


# --- metrics -----------------------------------------------------------------


def roc_auc(scores, labels):
    """Mann-Whitney AUC with midranks: P(score+ > score-), ties count half.

    Labels may be 0/1 or -1/+1; class 1 is positive either way.  Raises
    MetricError when only one class is present (the statistic is
    undefined without both).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ShapeError(
            "scores and labels must be equal-length vectors",
            expected=labels.shape,
            actual=scores.shape,
        )
    positive = labels == 1
    n_pos = int(np.sum(positive))
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when only one class is present")

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0])
    i = 0
    while i < scores.shape[0]:
        j = i
        while j < scores.shape[0] and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average of ranks i+1..j
        i = j
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class Metrics:
    """Confusion counts plus AUC for one evaluation; class 1 is positive."""

    tp: int
    tn: int
    fp: int
    fn: int
    auc: float

    @property
    def accuracy(self):
        return (self.tp + self.tn) / (self.tp + self.tn + self.fp + self.fn)

    @property
    def sensitivity(self):
        return self.tp / (self.tp + self.fn)

    @property
    def specificity(self):
        return self.tn / (self.tn + self.fp)


@dataclass(frozen=True)
class MetricSummary:
    """Per-metric means over folds or repeats."""

    accuracy: float
    sensitivity: float
    specificity: float
    auc: float


def compute_metrics(labels, predictions, scores):
    """Confusion counts and AUC for hard predictions plus ranking scores."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ShapeError(
            "labels and predictions must be equal-length vectors",
            expected=labels.shape,
            actual=predictions.shape,
        )
    if not np.all(np.isin(labels, (0, 1))) or not np.all(np.isin(predictions, (0, 1))):
        raise MetricError("labels and predictions must be 0/1")
    auc = roc_auc(scores, labels)
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    return Metrics(tp=tp, tn=tn, fp=fp, fn=fn, auc=auc)


def summarize(metrics_list):
    """Mean accuracy/sensitivity/specificity/AUC over a list of Metrics."""
    if not metrics_list:
        raise ConfigError("cannot summarize an empty metrics list")
    return MetricSummary(
        accuracy=float(np.mean([m.accuracy for m in metrics_list])),
        sensitivity=float(np.mean([m.sensitivity for m in metrics_list])),
        specificity=float(np.mean([m.specificity for m in metrics_list])),
        auc=float(np.mean([m.auc for m in metrics_list])),
    )


# --- data-access auditing ------------------------------------------------------


class AccessLog:
    """Record of every sample index handed out during a protocol run."""

    def __init__(self):
        self.events = []  # (phase, fold, indices as tuple)

    def record(self, phase, fold, indices):
        self.events.append((phase, fold, tuple(int(i) for i in indices)))

    def touched_during_fitting(self, fold):
        """All indices accessed while selecting or fitting for ``fold``."""
        touched = set()
        for phase, f, indices in self.events:
            if f == fold and phase in ("select", "fit"):
                touched.update(indices)
        return touched

    def violations(self, folds):
        """Map fold -> outer-test indices that leaked into its fitting, if any."""
        leaks = {}
        for f, members in enumerate(folds):
            leaked = self.touched_during_fitting(f) & set(int(i) for i in members)
            if leaked:
                leaks[f] = sorted(leaked)
        return leaks


class AuditedDataset:
    """Proxy that logs which samples a model family touches, and when."""

    def __init__(self, dataset, log, fold):
        self._dataset = dataset
        self._log = log
        self._fold = fold
        self.phase = "select"

    def __len__(self):
        return len(self._dataset)

    def labels_for(self, indices):
        indices = np.asarray(indices, dtype=int)
        self._log.record(self.phase, self._fold, indices)
        return np.asarray(self._dataset.labels)[indices]

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        self._log.record(self.phase, self._fold, indices)
        return self._dataset.take(indices)


# --- nested cross-validation ----------------------------------------------------


@dataclass
class CrossValResult:
    """One complete outer cross-validation pass."""

    folds: list
    fold_metrics: list
    models: list
    mean: MetricSummary
    pooled: Metrics
    access_log: AccessLog


@dataclass
class Ensemble:
    """Per-fold models from one repeat, voting as a committee.

    ``training_ids`` records which subjects contributed to any member's
    training split (under k-fold rotation that is the whole dataset), so a
    later independent test can warn about overlap.
    """

    models: list
    repeat_index: int
    family: object
    training_ids: tuple = ()


@dataclass
class RepeatResult:
    """Repeated nested cross-validation plus the best repeat's ensemble."""

    repeats: list
    repeat_accuracies: np.ndarray
    mean: MetricSummary
    best_repeat: int
    ensemble: Ensemble


def _seed_int(seed_seq):
    return int(seed_seq.generate_state(1)[0])


def nested_cv(dataset, family, seed, n_folds=5, inner_folds=4):
    """Outer k-fold evaluation with per-fold inner hyperparameter selection.

    For each outer fold: hyperparameters are chosen by the family using
    only the outer-training portion, the model is refit on that whole
    portion, and the held-out fold is scored exactly once.  All data
    access goes through an audited view so the returned ``access_log``
    can prove the held-out fold never leaked into fitting.
    """
    labels = np.asarray(dataset.labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise TrainingDataError("dataset labels must be 0/1")
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise TrainingDataError("dataset must contain both classes")

    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    fold_seq, *per_fold_seqs = seq.spawn(1 + n_folds)
    folds = stratified_kfold(labels, n_folds, fold_seq)

    log = AccessLog()
    fold_metrics = []
    models = []
    pooled_labels = []
    pooled_preds = []
    pooled_scores = []
    for f in range(n_folds):
        train_idx = fold_complement(folds, f)
        select_seq, fit_seq = per_fold_seqs[f].spawn(2)
        view = AuditedDataset(dataset, log, fold=f)
        try:
            view.phase = "select"
            params = family.select(
                view, train_idx, inner_folds=inner_folds, seed=_seed_int(select_seq)
            )
            view.phase = "fit"
            model = family.fit(view, train_idx, params, seed=_seed_int(fit_seq))
        except VolclassError as exc:
            detail = exc.args[0] if exc.args else ""
            exc.args = (f"outer fold {f}: {detail}",) + exc.args[1:]
            raise
        view.phase = "evaluate"
        block = view.take(folds[f])
        predictions, scores = family.predict(model, block)
        metrics = compute_metrics(labels[folds[f]], predictions, scores)
        fold_metrics.append(metrics)
        models.append(model)
        pooled_labels.append(labels[folds[f]])
        pooled_preds.append(np.asarray(predictions))
        pooled_scores.append(np.asarray(scores, dtype=float))

    pooled = compute_metrics(
        np.concatenate(pooled_labels),
        np.concatenate(pooled_preds),
        np.concatenate(pooled_scores),
    )
    return CrossValResult(
        folds=folds,
        fold_metrics=fold_metrics,
        models=models,
        mean=summarize(fold_metrics),
        pooled=pooled,
        access_log=log,
    )


def repeat_and_average(dataset, family, n_repeats=10, base_seed=0, n_folds=5,
                       inner_folds=4):
    """Run ``nested_cv`` under derived seeds and keep the best repeat's models.

    Returns per-metric means over repeats plus the ensemble from the
    repeat with the highest mean accuracy (ties go to the lowest repeat
    index, which is what ``argmax`` yields on a first-match basis).
    """
    if n_repeats < 1:
        raise ConfigError(f"need at least one repeat, got {n_repeats}")
    if base_seed < 0:
        raise ConfigError(f"base seed must be non-negative, got {base_seed}")
    repeats = [
        nested_cv(
            dataset,
            family,
            np.random.SeedSequence([int(base_seed), r]),
            n_folds=n_folds,
            inner_folds=inner_folds,
        )
        for r in range(n_repeats)
    ]
    accuracies = np.array([rep.mean.accuracy for rep in repeats])
    best = int(np.argmax(accuracies))
    mean = MetricSummary(
        accuracy=float(np.mean([rep.mean.accuracy for rep in repeats])),
        sensitivity=float(np.mean([rep.mean.sensitivity for rep in repeats])),
        specificity=float(np.mean([rep.mean.specificity for rep in repeats])),
        auc=float(np.mean([rep.mean.auc for rep in repeats])),
    )
    ensemble = Ensemble(models=list(repeats[best].models), repeat_index=best,
                        family=family,
                        training_ids=tuple(getattr(dataset, "ids", ()) or ()))
    return RepeatResult(
        repeats=repeats,
        repeat_accuracies=accuracies,
        mean=mean,
        best_repeat=best,
        ensemble=ensemble,
    )


def ensemble_vote(ensemble, sample_block):
    """Majority vote of the committee on a single-sample block.

    Returns (class, vote fraction for the winning class).  The member
    count must be odd so a binary vote cannot tie.
    """
    k = len(ensemble.models)
    if k == 0 or k % 2 == 0:
        raise ConfigError(f"voting needs an odd number of models, got {k}")
    votes = []
    for model in ensemble.models:
        predictions, _ = ensemble.family.predict(model, sample_block)
        predictions = np.asarray(predictions)
        if predictions.shape != (1,):
            raise ShapeError(
                "ensemble_vote expects a single-sample block",
                expected=(1,),
                actual=predictions.shape,
            )
        votes.append(int(predictions[0]))
    ones = sum(votes)
    winner = 1 if ones * 2 > k else 0
    fraction = (ones if winner == 1 else k - ones) / k
    return winner, fraction


def independent_test(ensemble, dataset):
    """Score an ensemble on a held-out dataset, one voted sample at a time.

    AUC uses the fraction of member votes for class 1 as the ranking
    score.  The caller is responsible for the dataset being disjoint
    from anything the ensemble was trained on.
    """
    labels = np.asarray(dataset.labels)
    k = len(ensemble.models)
    predictions = np.empty(len(dataset), dtype=int)
    vote_scores = np.empty(len(dataset))
    for i in range(len(dataset)):
        block = dataset.take(np.array([i]))
        winner, fraction = ensemble_vote(ensemble, block)
        predictions[i] = winner
        vote_scores[i] = fraction if winner == 1 else 1.0 - fraction
    return compute_metrics(labels, predictions, vote_scores)


# --- reporting -------------------------------------------------------------------


_CSV_HEADER = ("repeat", "fold", "accuracy", "sensitivity", "specificity", "auc",
               "tp", "tn", "fp", "fn")


def metrics_csv_rows(result):
    """Flatten a RepeatResult into rows of ``_CSV_HEADER`` cells."""
    rows = [list(_CSV_HEADER)]
    for r, repeat in enumerate(result.repeats):
        for f, m in enumerate(repeat.fold_metrics):
            rows.append([r, f, m.accuracy, m.sensitivity, m.specificity, m.auc,
                         m.tp, m.tn, m.fp, m.fn])
        s = repeat.mean
        rows.append([r, "mean", s.accuracy, s.sensitivity, s.specificity, s.auc,
                     "", "", "", ""])
    s = result.mean
    rows.append(["all", "mean", s.accuracy, s.sensitivity, s.specificity, s.auc,
                 "", "", "", ""])
    return rows


def write_metrics_csv(path, result):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        csv.writer(handle).writerows(metrics_csv_rows(result))


def format_report(result, title="nested cross-validation"):
    """Plain-text per-fold table plus repeat means and the best repeat."""
    lines = [title, ""]
    lines.append(f"{'repeat':>6} {'fold':>4} {'acc':>7} {'sp':>7} {'se':>7} {'auc':>7}")
    for r, repeat in enumerate(result.repeats):
        for f, m in enumerate(repeat.fold_metrics):
            lines.append(
                f"{r:>6} {f:>4} {m.accuracy:>7.4f} {m.specificity:>7.4f} "
                f"{m.sensitivity:>7.4f} {m.auc:>7.4f}"
            )
        s = repeat.mean
        lines.append(
            f"{r:>6} {'mean':>4} {s.accuracy:>7.4f} {s.specificity:>7.4f} "
            f"{s.sensitivity:>7.4f} {s.auc:>7.4f}"
        )
    s = result.mean
    lines.append("")
    lines.append(
        f"{'all':>6} {'mean':>4} {s.accuracy:>7.4f} {s.specificity:>7.4f} "
        f"{s.sensitivity:>7.4f} {s.auc:>7.4f}"
    )
    lines.append(f"best repeat: {result.best_repeat} "
                 f"(accuracy {result.repeat_accuracies[result.best_repeat]:.4f})")
    return "\n".join(lines) + "\n"
