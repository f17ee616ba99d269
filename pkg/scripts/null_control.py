"""Chance-level sanity check: every family should score ~0.5 on null data.

Generates a cohort with zero class effect (delta=0) and runs nested
cross-validation for each requested family at a miniature training budget.
Accuracies outside [0.40, 0.60] usually mean a leakage bug somewhere in the
fold plumbing, which is the whole point of running this.

    python3 scripts/null_control.py --out /tmp/volclass-null
"""

import argparse
import sys
from pathlib import Path

from volclass.data import VolumeDataset, load_manifest
from volclass.evaluation import nested_cv
from volclass.families import FAMILY_CHOICES, family_from_name
from volclass.synth import synth_generate
from volclass.training import TrainConfig

DEFAULT_FAMILIES = (
    "seq1", "seq2", "seq3", "incep1", "incep2", "incepres1", "incepres2",
    "svm-linear", "svm-rbf",
)


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, required=True, help="work directory")
    p.add_argument("--families", nargs="+", default=list(DEFAULT_FAMILIES),
                   choices=FAMILY_CHOICES, metavar="FAMILY")
    p.add_argument("--n", type=int, default=50, help="subjects per class")
    p.add_argument("--extents", type=int, nargs=3, default=(12, 12, 12))
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    manifest = synth_generate(
        args.n, tuple(args.extents), 0.0, args.sigma, seed=args.seed,
        out_dir=args.out,
    )
    dataset = VolumeDataset.from_subjects(load_manifest(manifest.path))

    tiny = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=2, optimizer="adam")
    flagged = []
    for name in args.families:
        options = {}
        if name not in ("svm-linear", "svm-rbf", "constant"):
            options["train_config"] = tiny
        family = family_from_name(name, **options)
        result = nested_cv(dataset, family, seed=args.seed, n_folds=5,
                           inner_folds=4)
        acc = result.mean.accuracy
        marker = ""
        if not 0.40 <= acc <= 0.60:
            marker = "  <-- outside [0.40, 0.60]"
            flagged.append(name)
        print(f"{name:>12}  mean acc {acc:.3f}{marker}", flush=True)

    if flagged:
        print(f"families off chance level: {', '.join(flagged)}")
        return 1
    print("all families at chance level")
    return 0


if __name__ == "__main__":
    sys.exit(main())
