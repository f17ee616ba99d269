"""Batch command-line front end.

Four subcommands: ``gen-synth`` writes a phantom cohort, ``crossval`` runs
repeated nested cross-validation for one model family and saves the best
repeat's ensemble, ``test`` scores a saved ensemble on an independent
manifest, and ``predict`` labels a single subject with a saved model.

Exit codes are a stable scripting contract: 0 success, 1 runtime failure
(bad data files, training divergence, IO), 2 usage or configuration error.
All randomness flows from explicit seeds, so rerunning a command with the
same inputs reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MAP_KINDS, VolumeDataset, load_manifest, read_nifti
from .errors import ConfigError, ShapeError, VolclassError
from .evaluation import (
    Ensemble,
    ensemble_vote,
    format_report,
    independent_test,
    repeat_and_average,
    write_metrics_csv,
)
from .families import FAMILY_CHOICES, SvmFamilyModel, family_from_name
from .serialize import load_model, save_model
from .synth import synth_generate
from .training import TrainConfig, TrainedModel, predict_proba

_SVM_FAMILIES = ("svm-linear", "svm-rbf")


# ---------------------------------------------------------------------------
# run configuration (crossval)


@dataclass(frozen=True)
class RunConfig:
    """Everything a crossval run needs; every field checked up front."""

    manifest: str
    family: str
    out: str
    folds: int = 5
    inner_folds: int = 4
    repeats: int = 10
    seed: int = 0
    train: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    lr_grid: tuple = ()
    variance_target: float = 0.95
    c_grid: tuple | None = None
    gamma_grid: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILY_CHOICES:
            raise ConfigError(
                f"unknown model family {self.family!r}; "
                f"expected one of {', '.join(FAMILY_CHOICES)}"
            )
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.inner_folds < 2:
            raise ConfigError(f"inner_folds must be >= 2, got {self.inner_folds}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}
_FLAG_OVERRIDES = ("manifest", "family", "out", "folds", "inner_folds",
                   "repeats", "seed")


def _load_run_config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError("config file must hold one JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in _FLAG_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    missing = [k for k in ("manifest", "family", "out") if k not in data]
    if missing:
        raise ConfigError(
            f"missing required settings: {', '.join(missing)} "
            f"(give them in --config or as flags)"
        )
    for key in ("lr_grid", "c_grid", "gamma_grid"):
        if data.get(key) is not None:
            data[key] = tuple(data[key])
    return RunConfig(**data)


def _build_family(cfg: RunConfig):
    if cfg.family in _SVM_FAMILIES:
        return family_from_name(
            cfg.family,
            variance_target=cfg.variance_target,
            c_grid=cfg.c_grid,
            gamma_grid=cfg.gamma_grid,
        )
    if cfg.variance_target != 0.95 or cfg.c_grid is not None \
            or cfg.gamma_grid is not None:
        raise ConfigError(f"{cfg.family} does not take SVM grid options")
    kwargs = {}
    if cfg.train:
        kwargs["train_config"] = TrainConfig.from_dict(cfg.train)
    if cfg.arch:
        kwargs["arch_overrides"] = cfg.arch
    return family_from_name(cfg.family, lr_grid=cfg.lr_grid, **kwargs)


# ---------------------------------------------------------------------------
# subcommands


def _parse_extents(text):
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"extents must look like 16x16x16, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"extents need three axes, got {text!r}")
    return parts


def cmd_gen_synth(args) -> int:
    manifest = synth_generate(
        args.n,
        args.extents,
        args.delta,
        args.sigma,
        seed=args.seed,
        out_dir=args.out,
        nuisance_amp=args.nuisance_amp,
        nuisance_scale=args.nuisance_scale,
    )
    print(manifest.path)
    return 0


def cmd_crossval(args) -> int:
    cfg = _load_run_config(args)
    family = _build_family(cfg)
    dataset = VolumeDataset.from_subjects(load_manifest(cfg.manifest))
    result = repeat_and_average(
        dataset,
        family,
        n_repeats=cfg.repeats,
        base_seed=cfg.seed,
        n_folds=cfg.folds,
        inner_folds=cfg.inner_folds,
    )

    header = (
        f"family: {family.name}\n"
        f"manifest: {cfg.manifest}\n"
        f"subjects: {len(dataset)}  folds: {cfg.folds}  "
        f"inner folds: {cfg.inner_folds}  repeats: {cfg.repeats}  seed: {cfg.seed}\n"
    )
    report = header + format_report(result, title="nested cross-validation")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report, encoding="utf-8")
    write_metrics_csv(out / "folds.csv", result)
    save_model(result.ensemble, out / "ensemble.vclf")
    print(report, end="")
    return 0


def _metrics_table(metrics) -> str:
    return (
        f"{'acc':>7} {'sp':>7} {'se':>7} {'auc':>7}\n"
        f"{metrics.accuracy:>7.4f} {metrics.specificity:>7.4f} "
        f"{metrics.sensitivity:>7.4f} {metrics.auc:>7.4f}\n"
    )


def cmd_test(args) -> int:
    ensemble = load_model(args.ensemble)
    if not isinstance(ensemble, Ensemble):
        raise ConfigError(f"{args.ensemble} does not hold an ensemble")
    dataset = VolumeDataset.from_subjects(load_manifest(args.manifest))

    overlap = sorted(set(dataset.ids) & set(ensemble.training_ids))
    if overlap:
        shown = ", ".join(overlap[:5]) + ("..." if len(overlap) > 5 else "")
        print(
            f"warning: {len(overlap)} test subject(s) were part of the "
            f"ensemble's training data ({shown}); metrics below are "
            f"optimistically biased",
            file=sys.stderr,
        )

    metrics = independent_test(ensemble, dataset)
    lines = ["id,label,vote_fraction,predicted"]
    for i, sid in enumerate(dataset.ids):
        winner, fraction = ensemble_vote(ensemble, dataset.take([i]))
        for_positive = fraction if winner == 1 else 1.0 - fraction
        lines.append(f"{sid},{dataset.labels[i]},{for_positive:g},{winner}")

    report = (
        f"independent test ({len(ensemble.models)}-model ensemble, "
        f"family {ensemble.family.name})\n"
        f"manifest: {args.manifest}\n"
        f"subjects: {len(dataset)}\n\n" + _metrics_table(metrics)
    )
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "test_report.txt").write_text(report, encoding="utf-8")
        (out / "subjects.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(report, end="")
    return 0


def _load_subject_volumes(args):
    maps = []
    extents = None
    for kind, path in zip(MAP_KINDS, (args.gm, args.wm, args.csf)):
        volume = read_nifti(path, kind=kind)
        if extents is None:
            extents = volume.extents
        elif volume.extents != extents:
            raise ShapeError(
                f"{kind} map extents {volume.extents} do not match "
                f"gm extents {extents}"
            )
        maps.append(volume.voxels)
    return np.stack(maps)[None]  # [1, 3, x, y, z]


def cmd_predict(args) -> int:
    model = load_model(args.model)
    volumes = _load_subject_volumes(args)

    if isinstance(model, Ensemble):
        winner, fraction = ensemble_vote(model, (volumes, None))
        print(f"{args.id},{fraction:g},{winner}")
        return 0
    if isinstance(model, TrainedModel):
        if model.arch is not None and not model.arch.multi_channel:
            volumes = volumes[:, :1]
        proba = float(predict_proba(model, volumes)[0])
        print(f"{args.id},{proba:.6f},{int(proba >= 0.5)}")
        return 0
    if isinstance(model, SvmFamilyModel):
        from .families import SvmFamily

        _, scores = SvmFamily(kernel=model.svm.kernel).predict(model, (volumes, None))
        score = float(scores[0])
        print(f"{args.id},{score:.6f},{int(score >= 0.0)}")
        return 0
    raise ConfigError(
        f"{args.model} holds a {type(model).__name__}, which cannot label subjects"
    )


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volclass",
        description="Volumetric binary classification: phantom generation, "
                    "nested cross-validation, ensemble testing, prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synth", help="write a synthetic labelled cohort")
    gen.add_argument("--n", type=int, required=True,
                     help="subjects per class")
    gen.add_argument("--extents", type=_parse_extents, default=(16, 16, 16),
                     help="voxel grid, e.g. 16x16x16")
    gen.add_argument("--delta", type=float, default=0.4,
                     help="class effect size at the blob loci")
    gen.add_argument("--sigma", type=float, default=0.05,
                     help="voxelwise noise level")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--nuisance-amp", type=float, default=0.1,
                     help="per-subject smooth variability amplitude")
    gen.add_argument("--nuisance-scale", type=int, default=4,
                     help="lattice points per axis of the variability field")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(handler=cmd_gen_synth)

    cv = sub.add_parser("crossval",
                        help="repeated nested cross-validation for one family")
    cv.add_argument("--config", help="JSON file with RunConfig settings")
    cv.add_argument("--manifest", help="dataset manifest CSV")
    cv.add_argument("--family", help=f"one of: {', '.join(FAMILY_CHOICES)}")
    cv.add_argument("--out", help="directory for report.txt, folds.csv, "
                                  "ensemble.vclf")
    cv.add_argument("--folds", type=int)
    cv.add_argument("--inner-folds", dest="inner_folds", type=int)
    cv.add_argument("--repeats", type=int)
    cv.add_argument("--seed", type=int)
    cv.set_defaults(handler=cmd_crossval)

    test = sub.add_parser("test", help="score a saved ensemble on a manifest")
    test.add_argument("--ensemble", required=True, help="saved ensemble container")
    test.add_argument("--manifest", required=True, help="test manifest CSV")
    test.add_argument("--out", help="directory for test_report.txt, subjects.csv")
    test.set_defaults(handler=cmd_test)

    predict = sub.add_parser("predict", help="label one subject")
    predict.add_argument("--model", required=True,
                         help="saved model or ensemble container")
    predict.add_argument("--gm", required=True, help="gray-matter map (.nii)")
    predict.add_argument("--wm", required=True, help="white-matter map (.nii)")
    predict.add_argument("--csf", required=True, help="CSF map (.nii)")
    predict.add_argument("--id", default="subject", help="subject id to print")
    predict.set_defaults(handler=cmd_predict)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VolclassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
