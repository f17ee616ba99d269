"""Volumes, subjects, manifests, resampling, and the dataset adapter.

A Subject bundles one GM, WM and CSF probability map under a 0/1 label.
Manifests are plain CSV (``id,gm,wm,csf,label``) with volume paths
resolved relative to the manifest file, so a dataset directory can be
moved wholesale.  ``VolumeDataset`` stacks everything into the
(samples, maps, x, y, z) array the model families consume and exposes
the ``labels``/``take`` interface the evaluation protocol expects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ManifestError, ShapeError
from .nifti import read_array, write_array

MAP_KINDS = ("gm", "wm", "csf")
MANIFEST_HEADER = ("id", "gm", "wm", "csf", "label")


@dataclass(frozen=True)
class Manifest:
    """Where a generated dataset lives: the CSV path plus its rows."""

    path: Path
    rows: tuple


@dataclass(frozen=True)
class Volume:
    """A single probability map on a 3-D voxel grid, values in [0, 1]."""

    voxels: np.ndarray
    kind: str | None = None

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=np.float64)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise ShapeError("volume must be a non-empty 3-D grid", actual=voxels.shape)
        if float(voxels.min()) < 0.0 or float(voxels.max()) > 1.0:
            raise ConfigError("volume values must lie in [0,1]")
        if self.kind is not None and self.kind not in MAP_KINDS:
            raise ConfigError(f"unknown map kind {self.kind!r}, expected one of {MAP_KINDS}")
        object.__setattr__(self, "voxels", voxels)

    @property
    def extents(self):
        return self.voxels.shape


@dataclass(frozen=True)
class Subject:
    """One GM + WM + CSF triple with a diagnosis label (1 = positive class)."""

    id: str
    volumes: dict
    label: int

    def __post_init__(self):
        if set(self.volumes) != set(MAP_KINDS):
            raise ManifestError(
                f"subject {self.id!r} needs exactly the maps {MAP_KINDS}, "
                f"got {tuple(sorted(self.volumes))}"
            )
        extents = {self.volumes[k].extents for k in MAP_KINDS}
        if len(extents) != 1:
            raise ManifestError(
                f"subject {self.id!r} has mismatched map extents: "
                + ", ".join(f"{k}={self.volumes[k].extents}" for k in MAP_KINDS)
            )
        if self.label not in (0, 1):
            raise ManifestError(f"subject {self.id!r} label must be 0 or 1, got {self.label}")

    @property
    def extents(self):
        return self.volumes["gm"].extents


def read_nifti(path, kind=None):
    """Load a .nii probability map as a Volume."""
    return Volume(voxels=read_array(path), kind=kind)


def write_nifti(volume, path, dtype="float32", byteorder="<"):
    write_array(path, volume.voxels, dtype=dtype, byteorder=byteorder)


# --- resampling ------------------------------------------------------------------


def resample_trilinear(values, target_extents):
    """Trilinear resampling at target voxel centers.

    Target center t maps to source coordinate (t + 0.5) * S / T - 0.5,
    clamped to the grid; interpolation runs axis by axis.  Outputs are
    convex combinations of inputs, so [0,1] data stays in [0,1] and
    affine fields are reproduced exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ShapeError("resampling expects a 3-D grid", actual=values.shape)
    target = tuple(int(t) for t in target_extents)
    if len(target) != 3 or min(target) < 1:
        raise ConfigError(f"target extents must be three positive integers, got {target_extents}")
    for axis in range(3):
        source = values.shape[axis]
        coords = (np.arange(target[axis]) + 0.5) * source / target[axis] - 0.5
        coords = np.clip(coords, 0.0, source - 1.0)
        below = np.floor(coords).astype(int)
        above = np.minimum(below + 1, source - 1)
        frac = coords - below
        shape = [1, 1, 1]
        shape[axis] = target[axis]
        weight = frac.reshape(shape)
        values = (
            np.take(values, below, axis=axis) * (1.0 - weight)
            + np.take(values, above, axis=axis) * weight
        )
    return values


def _box2_axis(values, axis):
    """Mean over non-overlapping pairs along one axis (odd tail kept as-is)."""
    n = values.shape[axis]
    even = np.take(values, np.arange(0, n - 1, 2), axis=axis)
    odd = np.take(values, np.arange(1, n, 2), axis=axis)
    merged = 0.5 * (even + odd)
    if n % 2:
        tail = np.take(values, [n - 1], axis=axis)
        merged = np.concatenate([merged, tail], axis=axis)
    return merged


def downsample(volume, target_extents, method="trilinear"):
    """Reduce a Volume to smaller extents; values remain in [0, 1].

    ``trilinear`` is the default; ``box2`` averages non-overlapping 2^3
    blocks and therefore requires every target extent to equal
    ceil(source / 2).
    """
    target = tuple(int(t) for t in target_extents)
    if len(target) != 3 or min(target) < 1:
        raise ConfigError(f"target extents must be three positive integers, got {target_extents}")
    source = volume.extents
    if any(t > s for t, s in zip(target, source)):
        raise ConfigError(f"cannot downsample {source} to larger extents {target}")
    if method == "trilinear":
        voxels = resample_trilinear(volume.voxels, target)
    elif method == "box2":
        expected = tuple(-(-s // 2) for s in source)
        if target != expected:
            raise ConfigError(
                f"box2 halves each axis: {source} downsamples to {expected}, not {target}"
            )
        voxels = volume.voxels
        for axis in range(3):
            voxels = _box2_axis(voxels, axis)
    else:
        raise ConfigError(f"unknown downsampling method {method!r}")
    return Volume(voxels=np.clip(voxels, 0.0, 1.0), kind=volume.kind)


# --- manifests ------------------------------------------------------------------


def write_manifest(path, rows):
    """Write ``id,gm,wm,csf,label`` rows as UTF-8 CSV with LF endings."""
    path = Path(path)
    with open(path, "w", newline="\n", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return path


def load_manifest(path):
    """Load every subject listed in a manifest, fully validated."""
    path = Path(path)
    base = path.parent
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise ManifestError(
            f"{path}: first row must be the header {','.join(MANIFEST_HEADER)}"
        )

    subjects = []
    seen = {}
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"{path} row {number}: expected 5 fields, got {len(row)}")
        subject_id, *map_paths, label_text = row
        if subject_id in seen:
            raise ManifestError(
                f"{path} row {number}: duplicate id {subject_id!r} "
                f"(first used on row {seen[subject_id]})"
            )
        seen[subject_id] = number
        if label_text not in ("0", "1"):
            raise ManifestError(f"{path} row {number}: label must be 0 or 1, got {label_text!r}")
        volumes = {}
        for kind, rel in zip(MAP_KINDS, map_paths):
            volume_path = base / rel
            if not volume_path.is_file():
                raise ManifestError(f"{path} row {number}: missing file {volume_path}")
            volumes[kind] = read_nifti(volume_path, kind=kind)
        subjects.append(Subject(id=subject_id, volumes=volumes, label=int(label_text)))
    return subjects


# --- dataset adapter --------------------------------------------------------------


class VolumeDataset:
    """Stacked subject maps: data[i] is (gm, wm, csf) for subject i.

    Provides the ``labels`` / ``take(indices)`` access pattern the
    evaluation protocol audits; ``take`` returns (volumes, labels) with
    volumes shaped [n, 3, x, y, z].
    """

    def __init__(self, volumes, labels, ids=None):
        volumes = np.asarray(volumes, dtype=np.float64)
        labels = np.asarray(labels, dtype=int)
        if volumes.ndim != 5 or volumes.shape[1] != len(MAP_KINDS):
            raise ShapeError(
                "dataset volumes must be [n, 3, x, y, z]", actual=volumes.shape
            )
        if labels.shape != (volumes.shape[0],):
            raise ShapeError(
                "one label per subject", expected=(volumes.shape[0],), actual=labels.shape
            )
        self.volumes = volumes
        self.labels = labels
        self.ids = list(ids) if ids is not None else [str(i) for i in range(len(labels))]
        if len(self.ids) != len(labels):
            raise ShapeError("one id per subject", expected=len(labels), actual=len(self.ids))

    @classmethod
    def from_subjects(cls, subjects):
        if not subjects:
            raise ManifestError("cannot build a dataset from zero subjects")
        extents = subjects[0].extents
        for subject in subjects:
            if subject.extents != extents:
                raise ManifestError(
                    f"subject {subject.id!r} extents {subject.extents} "
                    f"differ from {subjects[0].id!r} extents {extents}"
                )
        stacked = np.stack(
            [
                np.stack([s.volumes[k].voxels for k in MAP_KINDS])
                for s in subjects
            ]
        )
        return cls(
            stacked,
            np.array([s.label for s in subjects], dtype=int),
            ids=[s.id for s in subjects],
        )

    def __len__(self):
        return self.labels.shape[0]

    @property
    def extents(self):
        return tuple(self.volumes.shape[2:])

    def take(self, indices):
        indices = np.asarray(indices, dtype=int)
        return self.volumes[indices], self.labels[indices]

    def labels_for(self, indices):
        return self.labels[np.asarray(indices, dtype=int)]
