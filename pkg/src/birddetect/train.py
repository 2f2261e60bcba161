"""Model training: Adam updates on MSE loss with early stopping.

Epochs are 1-indexed. After every epoch the model is scored on the
validation set in inference mode; training stops once the number of
epochs since the best score reaches the patience, or at ``max_epochs``,
and the parameters from the best epoch are restored before returning.

All randomness (shuffling, dropout) derives from ``TrainConfig.seed``
through independent spawned generators, so runs are reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .augment import LabeledSample, stack_features
from .metrics import roc_auc
from .model import CbrnnModel

__all__ = [
    "AdamConfig",
    "TrainConfig",
    "TrainHistory",
    "AdamState",
    "adam_step",
    "mse_loss",
    "train",
    "score_samples",
]


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    patience: int = 50
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm needs pairs)")


@dataclass
class TrainHistory:
    """Per-epoch training record. Lists are indexed by epoch - 1."""

    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("-inf")

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_auc"])
            for i, (loss, auc) in enumerate(zip(self.train_loss, self.val_auc), 1):
                writer.writerow([i, repr(loss), repr(auc)])


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: predictions {pred.shape}, targets {target.shape}")
    if pred.size == 0:
        raise ValueError("cannot compute a loss over an empty batch")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: AdamConfig) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def score_samples(model: CbrnnModel, samples, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities for a sequence of samples."""
    if not samples:
        return np.zeros(0)
    mbe, domfreq, _ = stack_features(samples)
    scores = np.empty(len(samples))
    for start in range(0, len(samples), batch_size):
        stop = start + batch_size
        scores[start:stop] = model.forward(mbe[start:stop], domfreq[start:stop],
                                           train=False)
    return scores


def _epoch_batches(n: int, batch_size: int, shuffle: bool,
                   rng: np.random.Generator):
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        batch = order[start : start + batch_size]
        if batch.size < 2:
            break
        yield batch


def train(model: CbrnnModel, train_samples: list[LabeledSample],
          val_samples: list[LabeledSample] | None, cfg: TrainConfig | None = None,
          val_metric=None) -> tuple[CbrnnModel, TrainHistory]:
    """Fit ``model`` and return it with its training history.

    ``val_metric``, when given, replaces the AUC computation: it is
    called as ``val_metric(model, epoch)`` after each epoch and its
    float return value drives early stopping instead.
    """
    cfg = cfg or TrainConfig()
    if not train_samples:
        raise ValueError("training set is empty")
    if any(s.label is None for s in train_samples):
        raise ValueError("training requires labeled samples")
    if val_metric is None:
        if not val_samples:
            raise ValueError("validation set is empty")
        val_labels = np.array([s.label for s in val_samples], dtype=np.float64)
        if len(np.unique(val_labels)) < 2:
            raise ValueError(
                "validation set must contain both present and absent clips"
            )

    mbe, domfreq, labels = stack_features(train_samples)
    n = len(train_samples)

    root = np.random.SeedSequence(cfg.seed)
    shuffle_seq, dropout_seq = root.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    params = model.parameters()
    adam = AdamState(params)
    history = TrainHistory()
    best_state = None

    for epoch in range(1, cfg.max_epochs + 1):
        loss_sum = 0.0
        seen = 0
        for batch in _epoch_batches(n, cfg.batch_size, cfg.shuffle, shuffle_rng):
            probs = model.forward(mbe[batch], domfreq[batch], train=True,
                                  rng=dropout_rng)
            loss, dprob = mse_loss(probs, labels[batch])
            model.zero_grads()
            model.backward(dprob)
            adam_step(params, model.gradients(), adam, cfg.adam)
            loss_sum += loss * batch.size
            seen += batch.size
        if seen == 0:
            raise ValueError(
                f"no usable batches: {n} samples with batch size {cfg.batch_size}"
            )
        history.train_loss.append(loss_sum / seen)

        if val_metric is not None:
            auc = float(val_metric(model, epoch))
        else:
            val_scores = score_samples(model, val_samples)
            auc = roc_auc(val_scores, val_labels)
        history.val_auc.append(auc)

        if auc > history.best_val_auc:
            history.best_val_auc = auc
            history.best_epoch = epoch
            best_state = model.state_dict()
        elif epoch - history.best_epoch >= cfg.patience:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history
