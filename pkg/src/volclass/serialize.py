"""Versioned binary container for trained models.

Byte layout (all integers little-endian):

====== ======= ========================================================
offset size    field
====== ======= ========================================================
0      4       magic ``b"VCLF"``
4      4       format version, uint32 (currently 1)
8      8       total container size in bytes, uint64
16     8       metadata length M, uint64
24     M       metadata, one UTF-8 JSON object (always has a "kind" key)
24+M   ...     tensor block (below)
end-32 32      SHA-256 digest of every preceding byte
====== ======= ========================================================

Tensor block::

    uint32  tensor count
    per tensor:
        uint16   name length, then the UTF-8 name
        uint8    rank
        uint64   extent per axis
        float64  values, C order, little-endian

``save_model``/``load_model`` round-trip four kinds of object, tagged in the
metadata: "cnn" (a :class:`~volclass.training.TrainedModel`), "pca", "svm",
"svm-bundle" (per-map reducers plus their SVM), and "ensemble" (a voting
committee along with the family that trained it and the subject ids it saw).
Loading verifies the checksum and the version and reports failures with a
:class:`~volclass.errors.ModelFormatError` whose ``reason`` attribute
distinguishes magic/version/truncation/checksum/content problems.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .architectures import ArchSpec, build_network
from .errors import ConfigError, ModelFormatError
from .evaluation import Ensemble
from .families import CONSTANT_MODEL, CnnFamily, ConstantFamily, SvmFamily, \
    SvmFamilyModel, family_from_name
from .pca import PcaModel
from .svm import SvmModel
from .training import TrainConfig, TrainedModel

MAGIC = b"VCLF"
FORMAT_VERSION = 1
_DIGEST_SIZE = 32


# ---------------------------------------------------------------------------
# encoding: model object -> (meta dict, {name: float64 array})


def _prefix(tensors, tag):
    return {f"{tag}/{name}": value for name, value in tensors.items()}


def _encode_cnn(model: TrainedModel):
    if model.arch is None:
        raise ConfigError("cannot save a network without its ArchSpec")
    meta = {
        "kind": "cnn",
        "arch": model.arch.to_dict(),
        "config": model.config.to_dict(),
        "final_loss": model.final_loss,
        "loss_history": list(model.loss_history),
    }
    tensors = {name: p for name, p in model.network.named_parameters()}
    return meta, tensors


def _encode_pca(model: PcaModel):
    meta = {"kind": "pca", "k": int(model.k)}
    tensors = {
        "mean": model.mean,
        "components": model.components,
        "eigenvalues": model.eigenvalues,
    }
    return meta, tensors


def _encode_svm(model: SvmModel):
    meta = {
        "kind": "svm",
        "kernel": model.kernel,
        "gamma": None if model.gamma is None else float(model.gamma),
        "C": float(model.C),
        "bias": float(model.bias),
        "kkt_residual": float(model.kkt_residual),
        "n_iter": int(model.n_iter),
    }
    tensors = {
        "support_vectors": model.support_vectors,
        "dual_coef": model.dual_coef,
        "support_indices": np.asarray(model.support_indices, dtype=np.float64),
        "objective_history": np.asarray(model.objective_history, dtype=np.float64),
    }
    return meta, tensors


def _encode_bundle(model: SvmFamilyModel):
    metas = []
    tensors = {}
    for m, pca in enumerate(model.pcas):
        sub_meta, sub_tensors = _encode_pca(pca)
        metas.append(sub_meta)
        tensors.update(_prefix(sub_tensors, f"pca{m}"))
    svm_meta, svm_tensors = _encode_svm(model.svm)
    tensors.update(_prefix(svm_tensors, "svm"))
    return {"kind": "svm-bundle", "pcas": metas, "svm": svm_meta}, tensors


def family_descriptor(family) -> dict:
    """A JSON-safe recipe that :func:`family_from_descriptor` can rebuild."""
    if isinstance(family, CnnFamily):
        return {
            "name": family.name,
            "arch": family.arch.to_dict(),
            "train_config": family.config.to_dict(),
            "lr_grid": list(family.lr_grid),
        }
    if isinstance(family, SvmFamily):
        return {
            "name": family.name,
            "variance_target": family.variance_target,
            "c_grid": list(family.c_grid),
            "gamma_grid": list(family.gamma_grid),
        }
    if isinstance(family, ConstantFamily):
        return {"name": family.name}
    raise ConfigError(f"cannot describe family of type {type(family).__name__}")


def family_from_descriptor(desc: dict):
    desc = dict(desc)
    name = desc.pop("name")
    if "arch" in desc:  # CNN: the stored spec carries every knob verbatim
        return CnnFamily(
            arch=ArchSpec.from_dict(desc["arch"]),
            config=TrainConfig.from_dict(desc["train_config"]),
            lr_grid=tuple(desc["lr_grid"]),
        )
    for grid in ("c_grid", "gamma_grid"):
        if grid in desc:
            desc[grid] = tuple(desc[grid])
    return family_from_name(name, **desc)


def _encode_ensemble(model: Ensemble):
    metas = []
    tensors = {}
    for i, member in enumerate(model.models):
        sub_meta, sub_tensors = _encode(member)
        metas.append(sub_meta)
        tensors.update(_prefix(sub_tensors, f"member{i}"))
    meta = {
        "kind": "ensemble",
        "repeat_index": int(model.repeat_index),
        "family": family_descriptor(model.family),
        "training_ids": [str(s) for s in model.training_ids],
        "members": metas,
    }
    return meta, tensors


_ENCODERS = (
    (TrainedModel, _encode_cnn),
    (SvmFamilyModel, _encode_bundle),
    (SvmModel, _encode_svm),
    (PcaModel, _encode_pca),
    (Ensemble, _encode_ensemble),
)


def _encode(model):
    if isinstance(model, str) and model == CONSTANT_MODEL:
        return {"kind": "constant-vote"}, {}
    for cls, encoder in _ENCODERS:
        if isinstance(model, cls):
            return encoder(model)
    raise ConfigError(f"cannot serialize objects of type {type(model).__name__}")


# ---------------------------------------------------------------------------
# decoding: (meta, tensors) -> model object


def _require(tensors, name):
    if name not in tensors:
        raise ModelFormatError(f"container is missing tensor {name!r}")
    return tensors[name]


def _subset(tensors, tag):
    prefix = f"{tag}/"
    return {
        name[len(prefix):]: value
        for name, value in tensors.items()
        if name.startswith(prefix)
    }


def _decode_cnn(meta, tensors):
    arch = ArchSpec.from_dict(meta["arch"])
    config = TrainConfig.from_dict(meta["config"])
    network = build_network(arch)
    expected = dict(network.named_parameters())
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ModelFormatError(
            f"parameter names do not match the architecture "
            f"(missing {missing}, unexpected {extra})"
        )
    for name, parameter in expected.items():
        stored = tensors[name]
        if stored.shape != parameter.shape:
            raise ModelFormatError(
                f"tensor {name!r} has shape {stored.shape}, "
                f"architecture needs {parameter.shape}"
            )
        parameter[...] = stored
        parameter.setflags(write=False)
    return TrainedModel(
        network=network,
        config=config,
        final_loss=float(meta["final_loss"]),
        loss_history=tuple(meta["loss_history"]),
        arch=arch,
    )


def _decode_pca(meta, tensors):
    return PcaModel(
        mean=_require(tensors, "mean"),
        components=_require(tensors, "components"),
        eigenvalues=_require(tensors, "eigenvalues"),
        k=int(meta["k"]),
    )


def _decode_svm(meta, tensors):
    return SvmModel(
        kernel=meta["kernel"],
        gamma=meta["gamma"],
        C=float(meta["C"]),
        support_vectors=_require(tensors, "support_vectors"),
        dual_coef=_require(tensors, "dual_coef"),
        bias=float(meta["bias"]),
        support_indices=_require(tensors, "support_indices").astype(int),
        kkt_residual=float(meta["kkt_residual"]),
        objective_history=tuple(_require(tensors, "objective_history")),
        n_iter=int(meta["n_iter"]),
    )


def _decode_bundle(meta, tensors):
    pcas = tuple(
        _decode_pca(sub_meta, _subset(tensors, f"pca{m}"))
        for m, sub_meta in enumerate(meta["pcas"])
    )
    svm = _decode_svm(meta["svm"], _subset(tensors, "svm"))
    return SvmFamilyModel(pcas=pcas, svm=svm)


def _decode_ensemble(meta, tensors):
    members = [
        _decode(sub_meta, _subset(tensors, f"member{i}"))
        for i, sub_meta in enumerate(meta["members"])
    ]
    return Ensemble(
        models=members,
        repeat_index=int(meta["repeat_index"]),
        family=family_from_descriptor(meta["family"]),
        training_ids=tuple(meta["training_ids"]),
    )


_DECODERS = {
    "cnn": _decode_cnn,
    "pca": _decode_pca,
    "svm": _decode_svm,
    "svm-bundle": _decode_bundle,
    "ensemble": _decode_ensemble,
    "constant-vote": lambda meta, tensors: CONSTANT_MODEL,
}


def _decode(meta, tensors):
    kind = meta.get("kind")
    if kind not in _DECODERS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    return _DECODERS[kind](meta, tensors)


# ---------------------------------------------------------------------------
# byte packing


def _pack(meta, tensors) -> bytes:
    parts = []
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<Q", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        encoded = name.encode("utf-8")
        value = np.ascontiguousarray(tensors[name], dtype=np.float64)
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.astype("<f8").tobytes(order="C"))
    payload = b"".join(parts)
    total = len(MAGIC) + 4 + 8 + len(payload) + _DIGEST_SIZE
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, total) + payload
    return body + hashlib.sha256(body).digest()


class _Cursor:
    """Sequential reader that turns overruns into truncation errors."""

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def read(self, size):
        end = self.offset + size
        if end > len(self.data):
            raise ModelFormatError(
                f"container ends early ({len(self.data)} bytes, "
                f"needed {end})",
                reason="truncated",
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def _unpack(data: bytes):
    header = len(MAGIC) + 4 + 8
    if len(data) < header + _DIGEST_SIZE:
        raise ModelFormatError(
            f"container too short ({len(data)} bytes)", reason="truncated"
        )
    if data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model container (bad magic)", reason="magic")
    version, total = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported container version {version}", reason="version"
        )
    if len(data) < total:
        raise ModelFormatError(
            f"container ends early ({len(data)} of {total} bytes)",
            reason="truncated",
        )
    if len(data) > total:
        raise ModelFormatError(
            f"{len(data) - total} bytes beyond the declared container size"
        )
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("checksum mismatch", reason="checksum")

    cursor = _Cursor(body)
    cursor.read(header)
    (meta_len,) = cursor.unpack("<Q")
    try:
        meta = json.loads(cursor.read(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"metadata is not valid JSON: {exc}") from None

    (count,) = cursor.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = cursor.unpack("<H")
        name = cursor.read(name_len).decode("utf-8")
        (rank,) = cursor.unpack("<B")
        shape = cursor.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = cursor.read(8 * size)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if cursor.offset != len(body):
        raise ModelFormatError(
            f"{len(body) - cursor.offset} unexplained trailing bytes"
        )
    return meta, tensors


# ---------------------------------------------------------------------------
# public API


def save_model(model, path):
    """Write any supported model object; returns the path."""
    meta, tensors = _encode(model)
    path = Path(path)
    path.write_bytes(_pack(meta, tensors))
    return path


def load_model(path):
    """Read back a container written by :func:`save_model`."""
    meta, tensors = _unpack(Path(path).read_bytes())
    return _decode(meta, tensors)
