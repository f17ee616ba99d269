"""Synthetic three-map volumes with a controllable group difference.

Each subject gets gray-matter, white-matter, and CSF probability maps built
from the same recipe:

* a smooth pseudo-anatomy per map, shared by every subject (a low-resolution
  uniform lattice upsampled to the target extents),
* a per-subject smooth nuisance field per map (anatomical variability; without
  it the class difference is a constant offset that any linear probe separates
  perfectly, which makes the data useless for comparing model families),
* class-1 subjects only: Gaussian dips of amplitude ``-effect_size`` in the
  gray-matter map at fixed loci, mimicking localized atrophy,
* voxelwise Gaussian noise, then a clip to [0, 1].

Controls are generated before patients and the dip term is deterministic, so
``effect_size=0`` makes the two classes draws from the same distribution.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import MAP_KINDS, Manifest, resample_trilinear, write_manifest
from .errors import ConfigError
from .nifti import write_array

#: Fractional blob positions, scaled to the voxel grid by :func:`blob_centers`.
#: Eight loci on a cube plus one central locus keep the dips well separated
#: (pairwise distance >= 0.38 of the smallest extent) while spreading the
#: atrophy pattern through the volume the way diffuse disease effects are.
BLOB_FRACTIONS = tuple(
    (x, y, z) for x in (0.28, 0.72) for y in (0.28, 0.72) for z in (0.28, 0.72)
) + ((0.50, 0.50, 0.50),)

# Value ranges for the shared anatomy fields. Gray matter sits high enough
# that a dip of 0.5 rarely clips at zero once nuisance and noise are added.
_BASE_RANGES = {"gm": (0.60, 0.80), "wm": (0.30, 0.50), "csf": (0.10, 0.25)}

_ANATOMY_LATTICE = 4
_MIN_EXTENT = 4


def blob_centers(extents):
    """Integer voxel coordinates of the atrophy loci for the given extents."""
    return tuple(
        tuple(int(round(f * (e - 1))) for f, e in zip(frac, extents))
        for frac in BLOB_FRACTIONS
    )


def _smooth_field(rng, extents, lattice):
    """Uniform(0, 1) values on a coarse lattice, upsampled to ``extents``."""
    coarse = rng.uniform(0.0, 1.0, size=(lattice,) * 3)
    return resample_trilinear(coarse, extents)


def _dip_field(extents):
    """Sum of unit-height Gaussians at the blob centers, capped at 1."""
    radius = max(1.5, min(extents) / 10.0)
    grids = np.meshgrid(*(np.arange(e, dtype=np.float64) for e in extents),
                        indexing="ij")
    total = np.zeros(extents, dtype=np.float64)
    for center in blob_centers(extents):
        d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
        total += np.exp(-d2 / (2.0 * radius**2))
    # Overlapping tails must not deepen the dip beyond the requested effect.
    return np.minimum(total, 1.0)


def _validate(n_per_class, extents, effect_size, noise, nuisance_amp,
              nuisance_scale):
    if n_per_class < 1:
        raise ConfigError(f"need at least 1 subject per class, got {n_per_class}")
    if effect_size < 0.0:
        raise ConfigError(f"effect size must be >= 0, got {effect_size}")
    if noise < 0.0:
        raise ConfigError(f"noise level must be >= 0, got {noise}")
    if nuisance_amp < 0.0:
        raise ConfigError(f"nuisance amplitude must be >= 0, got {nuisance_amp}")
    if nuisance_scale < 2:
        raise ConfigError(
            f"nuisance lattice needs >= 2 points per axis, got {nuisance_scale}"
        )
    extents = tuple(int(e) for e in extents)
    if len(extents) != 3 or min(extents) < _MIN_EXTENT:
        raise ConfigError(
            f"extents must be 3 axes of at least {_MIN_EXTENT}, got {extents}"
        )
    return extents


def synth_generate(n_per_class, extents, effect_size, noise, seed, out_dir, *,
                   nuisance_amp=0.1, nuisance_scale=4):
    """Write a labelled phantom cohort under ``out_dir``; return its manifest.

    Subject ids are ``c000, c001, ...`` for class 0 and ``p000, ...`` for
    class 1; each subject stores one float32 ``<id>_<kind>.nii`` per map.
    The same ``seed`` reproduces the files byte for byte.
    """
    extents = _validate(n_per_class, extents, effect_size, noise,
                        nuisance_amp, nuisance_scale)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    base = {
        kind: lo + (hi - lo) * _smooth_field(rng, extents, _ANATOMY_LATTICE)
        for kind, (lo, hi) in _BASE_RANGES.items()
    }
    dip = effect_size * _dip_field(extents)

    rows = []
    for label in (0, 1):
        for index in range(n_per_class):
            sid = f"{'cp'[label]}{index:03d}"
            names = {}
            for kind in MAP_KINDS:
                values = base[kind].copy()
                if label == 1 and kind == "gm":
                    values -= dip
                nuisance = _smooth_field(rng, extents, nuisance_scale)
                values += nuisance_amp * (2.0 * nuisance - 1.0)
                values += rng.normal(0.0, noise, size=extents)
                np.clip(values, 0.0, 1.0, out=values)
                names[kind] = f"{sid}_{kind}.nii"
                write_array(out / names[kind], values, dtype="float32")
            rows.append((sid, names["gm"], names["wm"], names["csf"], str(label)))

    manifest_path = out / "manifest.csv"
    write_manifest(manifest_path, rows)
    return Manifest(path=manifest_path, rows=tuple(rows))
