"""Binary cross-entropy loss, SGD/Adam, and the mini-batch training loop.

The loss pairs with the networks' sigmoid output: the training loop reads
per-sample losses off the retained logits (numerically stable at any
magnitude) and starts backpropagation from d(loss)/d(logit) = p - y,
skipping the sigmoid's own derivative entirely.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DivergenceError,
    ShapeError,
    StateError,
    TrainingDataError,
)

_OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    log_path: str | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in _OPTIMIZERS:
            raise ConfigError(
                f"optimizer must be one of {_OPTIMIZERS}, got {self.optimizer!r}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must be in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def bce_loss(prob, label):
    """Per-sample cross-entropy from probabilities, and d(loss)/d(logit).

    Probabilities are expected from the clamped sigmoid, strictly inside
    (0,1), so the logs stay finite.
    """
    p = np.asarray(prob, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return loss, p - y


def bce_loss_from_logits(logit, label):
    """Cross-entropy in the logit form: softplus(z) - y*z, exact on both tails."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    loss = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    prob = np.empty_like(z)
    pos = z >= 0
    prob[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    prob[~pos] = ez / (1.0 + ez)
    return loss, prob - y


class SGDMomentum:
    """Classical momentum: v <- mu*v + g ; p <- p - lr*v."""

    def __init__(self, learning_rate, momentum=0.9):
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.velocity = {}

    def step(self, network):
        grads = dict(network.named_gradients())
        for name, p in network.named_parameters():
            g = grads[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p -= self.learning_rate * v


class Adam:
    """Adam with bias correction (Kingma & Ba defaults)."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, network):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        grads = dict(network.named_gradients())
        for name, p in network.named_parameters():
            g = grads[name]
            m = self.m.get(name, 0.0) * b1 + (1.0 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGDMomentum(config.learning_rate, config.momentum)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)


@dataclass
class TrainedModel:
    """A frozen network plus the provenance needed to rebuild and rerun it."""

    network: object
    config: TrainConfig
    final_loss: float
    loss_history: tuple
    arch: object = None  # ArchSpec when built by the architecture module

    def predict_proba(self, sample):
        return predict_proba(self, sample)

    def predict(self, sample, threshold=0.5):
        return predict(self, sample, threshold)


def _check_dataset(network, dataset):
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise TrainingDataError(
            f"need matching sample/label counts, got {x.shape[0]} vs {y.shape}"
        )
    if x.shape[0] == 0:
        raise TrainingDataError("empty training set")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise TrainingDataError("labels must be 0 or 1")
    return x, y


def _standardize(x):
    """Zero-mean/unit-variance each sample's channels independently.

    Raw intensity maps sit entirely in [0, 1], so an uncentered input hands
    every first-layer filter a near-constant positive field; filters whose
    weights sum negative then rectify to zero everywhere and never recover.
    Per-sample statistics keep the transform batch-invariant and free of any
    training-set state.
    """
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    mean = flat.mean(axis=2)[..., None]
    std = flat.std(axis=2)[..., None]
    flat = (flat - mean) / np.where(std > 0.0, std, 1.0)
    return flat.reshape(x.shape)


def fit(network, dataset, config: TrainConfig, arch=None) -> TrainedModel:
    """Mini-batch training on mean BCE; returns the frozen model.

    Volumetric input ([N, C, D, H, W]) is intensity-standardized per sample
    and channel before training; dense input passes through unchanged.
    Bit-deterministic for fixed (network parameters, config.seed, dataset
    order). Non-finite batch loss aborts with the failing step index.
    """
    x, y = _check_dataset(network, dataset)
    if x.ndim == 5:
        x = _standardize(x)
    n = x.shape[0]
    if config.batch_size > n:
        raise ConfigError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    for name, p in network.named_parameters():
        if not p.flags.writeable:
            raise StateError(f"network is frozen (parameter {name} is read-only)")

    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
    optimizer = make_optimizer(config)
    history = []
    log_lines = ["epoch,mean_loss"]
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            probs = network.forward(x[idx])
            losses, _ = bce_loss_from_logits(network.logits, y[idx])
            batch_loss = float(np.mean(losses))
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    f"non-finite training loss at step {step} (epoch {epoch})",
                    step=step,
                )
            network.backward_from_logits((probs - y[idx]) / idx.size)
            optimizer.step(network)
            loss_sum += float(np.sum(losses))
            step += 1
        history.append(loss_sum / n)
        log_lines.append(f"{epoch},{history[-1]:.10g}")
    if config.log_path is not None:
        with open(config.log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    for _, p in network.named_parameters():
        p.setflags(write=False)
    return TrainedModel(
        network=network,
        config=config,
        final_loss=history[-1],
        loss_history=tuple(history),
        arch=arch,
    )


def _batchify(model, sample):
    sample = np.asarray(sample, dtype=np.float64)
    lead = getattr(model.network.layers[0], "kind", "")
    # networks consume [B, C, D, H, W]; a bare [C, D, H, W] sample is wrapped
    if sample.ndim == 4:
        return sample[None], True
    if sample.ndim == 5:
        return sample, False
    if sample.ndim == 1:  # dense toy networks: [features]
        return sample[None], True
    if sample.ndim == 2 and lead == "Dense":
        return sample, False
    raise ShapeError("sample rank not understood", actual=sample.shape)


def predict_proba(model, sample):
    """Probability of class 1; scalar for a single sample, vector for a batch.

    Volumetric input is standardized exactly as during training.
    """
    batch, single = _batchify(model, sample)
    if batch.ndim == 5:
        batch = _standardize(batch)
    probs = model.network.forward(batch)
    return float(probs[0]) if single else probs


def predict(model, sample, threshold=0.5):
    """Hard label at the given threshold; probability == threshold goes to 1."""
    p = predict_proba(model, sample)
    if np.isscalar(p):
        return int(p >= threshold)
    return (p >= threshold).astype(int)
