"""Semi-online gradient descent with full BPTT and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import checkpoint
from ..errors import ConfigError, FormatError, TrainingError
from .network import COSTS, SequenceNetwork

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    max_epochs: int = 50
    batch_sequences: int = 10
    input_noise_std: float = 0.1
    early_stop_patience: int = 10
    rng_seed: int = 0
    momentum: float = 0.0
    clip_norm: float | None = 10.0
    cost: str = "sse"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.input_noise_std < 0:
            raise ConfigError("input_noise_std must be nonnegative")
        if self.batch_sequences < 1:
            raise ConfigError("batch_sequences must be at least 1")
        if self.cost not in COSTS:
            raise ConfigError(f"cost must be one of {COSTS}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    net: SequenceNetwork
    train_costs: list[float] = field(default_factory=list)
    # valid_costs[0] is the cost before any update
    valid_costs: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_costs)


def _noisy(x, std, rng):
    x = np.asarray(x)
    if std == 0 or np.issubdtype(x.dtype, np.integer):
        return x
    return x + rng.normal(0.0, std, x.shape)


def sgd_step(net: SequenceNetwork, inputs, targets, cfg: TrainConfig, velocity=None):
    """One parameter update from a batch; returns the batch cost before the update."""
    with np.errstate(over="ignore", invalid="ignore"):
        grad, value = net.gradients(inputs, targets, cfg.cost)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite cost or gradient")
    if cfg.clip_norm is not None:
        norm = np.linalg.norm(grad)
        if norm > cfg.clip_norm:
            grad *= cfg.clip_norm / norm
    if cfg.momentum:
        velocity *= cfg.momentum
        velocity -= cfg.learning_rate * grad
        net.theta += velocity
    else:
        net.theta -= cfg.learning_rate * grad
    return value


def train(net: SequenceNetwork, train_set, valid_set, cfg: TrainConfig,
          progress=None) -> TrainResult:
    """Train on ``(input, target)`` sequence pairs.

    Sequences are shuffled each epoch and grouped into batches of
    ``cfg.batch_sequences``; the weights are updated after every batch.
    Gaussian noise is added to the (dense) inputs at every presentation.
    Training stops after ``early_stop_patience`` epochs without a validation
    improvement and the best-validation parameters are returned. An empty
    validation set falls back to the noise-free training cost.
    """
    train_set = list(train_set)
    if not train_set:
        raise ConfigError("training set is empty")
    valid_set = list(valid_set) or train_set
    rng = np.random.default_rng(cfg.rng_seed)
    net = net.copy()
    velocity = np.zeros_like(net.theta)

    def valid_cost():
        with np.errstate(over="ignore", invalid="ignore"):
            return net.cost([v[0] for v in valid_set], [v[1] for v in valid_set], cfg.cost)

    best = valid_cost()
    if not np.isfinite(best):
        raise TrainingError("initial validation cost is not finite", epoch=0)
    result = TrainResult(net, [], [best], 0)
    best_theta = net.theta.copy()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_sequences):
            idx = order[start:start + cfg.batch_sequences]
            inputs = [_noisy(train_set[k][0], cfg.input_noise_std, rng) for k in idx]
            targets = [train_set[k][1] for k in idx]
            try:
                total += sgd_step(net, inputs, targets, cfg, velocity)
            except TrainingError as exc:
                raise TrainingError(f"training diverged in epoch {epoch}: {exc}", epoch) from exc
        v = valid_cost()
        if not np.isfinite(v):
            raise TrainingError(f"validation cost diverged in epoch {epoch}", epoch)
        result.train_costs.append(total)
        result.valid_costs.append(v)
        log.debug("epoch %d train %.6g valid %.6g", epoch, total, v)
        if progress is not None:
            progress(epoch, total, v)
        if v < best:
            best, best_theta, stale = v, net.theta.copy(), 0
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    net.theta = best_theta
    return result


def save_network(net: SequenceNetwork, path, metadata: dict | None = None):
    header = {"format": "speechfront-network", "network": net.config(), "metadata": metadata or {}}
    checkpoint.save(path, header, {"theta": net.theta})


def load_network(path) -> tuple[SequenceNetwork, dict]:
    header, arrays = checkpoint.load(path)
    if header.get("format") != "speechfront-network":
        raise FormatError(f"{path}: not a network checkpoint")
    return SequenceNetwork.from_config(header["network"], arrays["theta"]), header["metadata"]
