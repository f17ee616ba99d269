"""Named builders for the seven model families and their multi-channel variants.

Sequential nets: depth x (conv + relu + pool) feeding a Dense(128) -> Dense(1)
-> Sigmoid head. Inception and inception-residual nets: conv stem, depth x
(block + pool), then a 1x1x1 conv collapsing to one channel, global average
pooling, and the sigmoid — no fully connected layer.

Multi-channel variants run one untied copy of the feature extractor per input
map (three maps) and merge by channel concatenation ahead of the shared head.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    ConcatBranches,
    Conv3D,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool3D,
    Network,
    ReLU,
    Sequence,
    Sigmoid,
    inception_block,
    inception_resnet_block,
)

_FAMILIES = ("sequential", "inception", "inception_resnet")
_DEPTH_RANGE = {"sequential": (1, 3), "inception": (1, 2), "inception_resnet": (1, 2)}

# filters[0] is the first conv's channel count; later entries are the later
# convs' counts (sequential) or the block channel totals (inception families)
_DEFAULT_FILTERS = {
    "sequential": (16, 32, 64),
    "inception": (16, 32, 64),
    "inception_resnet": (16, 32, 64),
}

FAMILY_NAMES = ("seq1", "seq2", "seq3", "incep1", "incep2", "incepres1", "incepres2")

_NAMED = {
    "seq1": ("sequential", 1),
    "seq2": ("sequential", 2),
    "seq3": ("sequential", 3),
    "incep1": ("inception", 1),
    "incep2": ("inception", 2),
    "incepres1": ("inception_resnet", 1),
    "incepres2": ("inception_resnet", 2),
}

N_INPUT_MAPS = 3  # GM, WM, CSF


@dataclass(frozen=True)
class ArchSpec:
    """Complete architectural configuration for one classifier."""

    family: str
    depth: int
    multi_channel: bool = False
    input_extent: tuple = (61, 73, 61)
    filters: tuple = ()
    pool_window: tuple = (2, 2, 2)
    pool_stride: tuple = (2, 2, 2)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(
                f"unknown family {self.family!r}; expected one of {_FAMILIES}"
            )
        lo, hi = _DEPTH_RANGE[self.family]
        if not lo <= self.depth <= hi:
            raise ConfigError(
                f"{self.family} depth must be in [{lo}, {hi}], got {self.depth}"
            )
        object.__setattr__(self, "input_extent", tuple(int(v) for v in self.input_extent))
        object.__setattr__(self, "pool_window", tuple(int(v) for v in self.pool_window))
        object.__setattr__(self, "pool_stride", tuple(int(v) for v in self.pool_stride))
        if len(self.input_extent) != 3 or any(v < 1 for v in self.input_extent):
            raise ConfigError(f"bad input extent {self.input_extent}")
        filters = tuple(int(f) for f in self.filters)
        if not filters:
            stages = self.depth if self.family == "sequential" else self.depth + 1
            filters = _DEFAULT_FILTERS[self.family][:stages]
        expected = self.depth if self.family == "sequential" else self.depth + 1
        if len(filters) != expected:
            raise ConfigError(
                f"{self.family} depth {self.depth} needs {expected} filter counts, "
                f"got {filters}"
            )
        if any(f < 1 for f in filters):
            raise ConfigError(f"filter counts must be positive, got {filters}")
        object.__setattr__(self, "filters", filters)

    @property
    def head(self) -> str:
        return "FC128" if self.family == "sequential" else "ConvHead"

    @property
    def name(self) -> str:
        short = {"sequential": "seq", "inception": "incep", "inception_resnet": "incepres"}
        return f"{short[self.family]}{self.depth}"

    @classmethod
    def named(cls, name, **overrides) -> "ArchSpec":
        if name not in _NAMED:
            raise ConfigError(f"unknown model name {name!r}; expected one of {FAMILY_NAMES}")
        family, depth = _NAMED[name]
        return cls(family=family, depth=depth, **overrides)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "depth": self.depth,
            "multi_channel": self.multi_channel,
            "input_extent": list(self.input_extent),
            "filters": list(self.filters),
            "pool_window": list(self.pool_window),
            "pool_stride": list(self.pool_stride),
        }

    @classmethod
    def from_dict(cls, d) -> "ArchSpec":
        known = {
            "family", "depth", "multi_channel", "input_extent",
            "filters", "pool_window", "pool_stride",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ArchSpec keys: {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})

    @property
    def in_channels(self) -> int:
        return N_INPUT_MAPS if self.multi_channel else 1


def _pool(spec):
    return MaxPool3D(window=spec.pool_window, stride=spec.pool_stride)


def _sequential_feature(spec) -> list:
    layers = []
    channels = 1
    for f in spec.filters:
        layers += [
            Conv3D(channels, f, kernel=(3, 3, 3), padding="same"),
            ReLU(),
            _pool(spec),
        ]
        channels = f
    return layers


def _inception_feature(spec) -> list:
    stem_channels, *block_totals = spec.filters
    make_block = (
        inception_resnet_block if spec.family == "inception_resnet" else inception_block
    )
    layers = [
        Conv3D(1, stem_channels, kernel=(3, 3, 3), padding="same"),
        ReLU(),
        _pool(spec),
    ]
    channels = stem_channels
    for total in block_totals:
        layers += [make_block(channels, total), _pool(spec)]
        channels = total
    return layers


def _feature_layers(spec) -> list:
    if spec.family == "sequential":
        return _sequential_feature(spec)
    return _inception_feature(spec)


def _feature_shape(layers, spec):
    """Propagate the per-sample shape law; fold geometry failures into ConfigError."""
    shape = (1,) + spec.input_extent
    try:
        for layer in layers:
            shape = layer.output_shape(shape)
    except ShapeError as e:
        raise ConfigError(
            f"input extent {spec.input_extent} is too small for {spec.name}: {e}"
        ) from e
    return shape


def _head_layers(spec, feature_shape) -> list:
    if spec.head == "FC128":
        flat = int(np.prod(feature_shape))
        return [Flatten(), Dense(flat, 128), ReLU(), Dense(128, 1), Sigmoid()]
    return [Conv3D(feature_shape[0], 1, kernel=(1, 1, 1)), GlobalAvgPool(), Sigmoid()]


def build_sequential(depth, spec=None) -> Network:
    spec = spec or ArchSpec(family="sequential", depth=depth)
    if spec.family != "sequential" or spec.depth != depth:
        raise ConfigError(f"spec {spec.name} does not describe sequential depth {depth}")
    return build_network(spec)


def build_inception(depth, spec=None) -> Network:
    spec = spec or ArchSpec(family="inception", depth=depth)
    if spec.family != "inception" or spec.depth != depth:
        raise ConfigError(f"spec {spec.name} does not describe inception depth {depth}")
    return build_network(spec)


def build_inception_resnet(depth, spec=None) -> Network:
    spec = spec or ArchSpec(family="inception_resnet", depth=depth)
    if spec.family != "inception_resnet" or spec.depth != depth:
        raise ConfigError(
            f"spec {spec.name} does not describe inception_resnet depth {depth}"
        )
    return build_network(spec)


def build_multichannel(spec) -> Network:
    """Three untied feature-extractor copies, channel-concatenated, shared head."""
    if not spec.multi_channel:
        spec = replace(spec, multi_channel=True)
    branches = [Sequence(_feature_layers(spec)) for _ in range(N_INPUT_MAPS)]
    per_branch_shape = _feature_shape(branches[0].layers, spec)
    merged_shape = (N_INPUT_MAPS * per_branch_shape[0],) + per_branch_shape[1:]
    merge = ConcatBranches(branches, input_mode="split")
    return Network([merge] + _head_layers(spec, merged_shape))


def build_network(spec) -> Network:
    """Dispatch on (family, multi_channel); the one entry point used end to end."""
    if spec.multi_channel:
        return build_multichannel(spec)
    feature = _feature_layers(spec)
    shape = _feature_shape(feature, spec)
    return Network(feature + _head_layers(spec, shape))


def build_named(name, seed=None, **overrides) -> Network:
    """Build (and optionally initialize) a model family by its short name."""
    from .layers import init_parameters

    net = build_network(ArchSpec.named(name, **overrides))
    if seed is not None:
        init_parameters(net, seed)
    return net
