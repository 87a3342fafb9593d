"""Multinomial logistic regression trained with stochastic average gradient.

Weights are (C, D+1); the last column multiplies an implicit constant-1
feature (the bias). Labels are 0-based here; the 1..C external convention
is mapped at the dataset-io boundary. SAG keeps a per-sample softmax
residual (p - onehot) instead of full per-sample gradients: the per-sample
gradient is the rank-1 outer product residual x [features; 1], so the
aggregate can be maintained exactly with rank-1 updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "MlrModel",
    "SagState",
    "TrainConfig",
    "EpochStats",
    "init_model",
    "logits",
    "posterior",
    "cross_entropy",
    "gradient",
    "new_sag_state",
    "sag_epoch",
    "train",
    "train_with_split",
]

PROB_FLOOR = 1e-12


@dataclass
class MlrModel:
    weights: np.ndarray  # (C, D+1)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[1] < 2:
            raise ValueError("weights must be (C, D+1) with D >= 1")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1] - 1


def init_model(feature_dim: int, num_classes: int) -> MlrModel:
    """All-zero model: uniform posterior, perplexity C."""
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    return MlrModel(np.zeros((num_classes, feature_dim + 1)))


def _check_features(model: MlrModel, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.feature_dim:
        raise ValueError(
            f"features have width {features.shape[1]} but model expects {model.feature_dim}"
        )
    return features


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-d array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def logits(model: MlrModel, features: np.ndarray) -> np.ndarray:
    features = _check_features(model, features)
    return features @ model.weights[:, :-1].T + model.weights[:, -1]


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def posterior(model: MlrModel, features: np.ndarray) -> np.ndarray:
    return softmax(logits(model, features))


def cross_entropy(model: MlrModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class (log floored at 1e-12)."""
    features = _check_features(model, features)
    labels = _check_labels(labels, model.num_classes)
    p = posterior(model, features)
    true_p = p[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(true_p, PROB_FLOOR))))


def gradient(model: MlrModel, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Full-batch gradient of the mean negative log-likelihood, shape (C, D+1)."""
    features = _check_features(model, features)
    labels = _check_labels(labels, model.num_classes)
    n = features.shape[0]
    resid = posterior(model, features)
    resid[np.arange(n), labels] -= 1.0
    grad = np.empty_like(model.weights)
    grad[:, :-1] = resid.T @ features / n
    grad[:, -1] = resid.mean(axis=0)
    return grad


@dataclass
class SagState:
    residuals: np.ndarray  # (N, C), p_i - onehot(y_i) at last visit
    aggregate_grad: np.ndarray  # (C, D+1), sum of per-sample gradients
    seen: np.ndarray  # (N,) bool
    seen_count: int
    epoch: int
    rng: np.random.Generator

    def recompute_aggregate(self, features: np.ndarray) -> np.ndarray:
        """Reference recomputation of the aggregate from stored residuals."""
        agg = np.zeros_like(self.aggregate_grad)
        agg[:, :-1] = self.residuals.T @ features
        agg[:, -1] = self.residuals.sum(axis=0)
        return agg


def new_sag_state(num_samples: int, num_classes: int, feature_dim: int, seed: int) -> SagState:
    return SagState(
        residuals=np.zeros((num_samples, num_classes)),
        aggregate_grad=np.zeros((num_classes, feature_dim + 1)),
        seen=np.zeros(num_samples, dtype=bool),
        seen_count=0,
        epoch=0,
        rng=stream(seed, "sag-order"),
    )


def sag_epoch(
    model: MlrModel,
    state: SagState,
    features: np.ndarray,
    labels: np.ndarray,
    step_size: float,
    minibatch: int = 1,
    l2: float = 0.0,
) -> tuple[MlrModel, SagState]:
    """One pass over the data in a fresh random permutation.

    Each visit refreshes the visited samples' residuals, applies the rank-1
    (or rank-minibatch) correction to the aggregate gradient, and steps
    against the running average over samples seen so far.
    """
    features = _check_features(model, features)
    labels = _check_labels(labels, model.num_classes)
    n = features.shape[0]
    if state.residuals.shape != (n, model.num_classes):
        raise ValueError(
            f"state tracks {state.residuals.shape} residuals but data is "
            f"({n}, {model.num_classes})"
        )
    if state.aggregate_grad.shape != model.weights.shape:
        raise ValueError("state aggregate shape does not match model weights")
    if minibatch < 1:
        raise ValueError("minibatch must be >= 1")

    w = model.weights
    agg = state.aggregate_grad
    perm = state.rng.permutation(n)
    for start in range(0, n, minibatch):
        idx = perm[start : start + minibatch]
        fb = features[idx]
        scores = fb @ w[:, :-1].T + w[:, -1]
        resid = softmax(scores)
        resid[np.arange(len(idx)), labels[idx]] -= 1.0
        delta = resid - state.residuals[idx]
        agg[:, :-1] += delta.T @ fb
        agg[:, -1] += delta.sum(axis=0)
        state.residuals[idx] = resid
        newly = ~state.seen[idx]
        if newly.any():
            state.seen[idx] = True
            state.seen_count += int(newly.sum())
        w -= step_size * (agg / state.seen_count)
        if l2 > 0.0:
            w[:, :-1] -= step_size * l2 * w[:, :-1]
    state.epoch += 1
    return model, state


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    heldout_perplexity: float
    heldout_accuracy: float


@dataclass
class TrainConfig:
    step_size: float
    max_epochs: int = 30
    minibatch: int = 1
    early_stop_patience: int = 5
    heldout_fraction: float = 0.1
    l2: float = 0.0
    seed: int = 0
    num_classes: int | None = None

    def __post_init__(self):
        if not (self.step_size > 0):
            raise ValueError("step_size must be positive")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if not (0.0 < self.heldout_fraction < 1.0):
            raise ValueError("heldout_fraction must lie in (0, 1)")


def _heldout_stats(model, features, labels):
    from .metrics import accuracy, perplexity

    p = posterior(model, features)
    return perplexity(p, labels), accuracy(p, labels)


def train(
    config: TrainConfig,
    features: np.ndarray,
    labels: np.ndarray,
    heldout_features: np.ndarray,
    heldout_labels: np.ndarray,
    refresh=None,
) -> tuple[MlrModel, list[EpochStats]]:
    """SAG training with early stopping on held-out perplexity.

    Returns the best-held-out-perplexity snapshot and the epoch history;
    the history starts with an epoch-0 row for the zero-initialized model.
    refresh(epoch) may supply a fresh (augmented) training feature matrix
    for each epoch.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] == 0:
        raise ValueError("training set is empty")
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = config.num_classes
    if num_classes is None:
        num_classes = int(max(labels.max(), np.asarray(heldout_labels).max())) + 1
    model = init_model(features.shape[1], num_classes)
    if config.max_epochs == 0:
        return model, []

    history: list[EpochStats] = []
    perp, acc = _heldout_stats(model, heldout_features, heldout_labels)
    history.append(EpochStats(0, cross_entropy(model, features, labels), perp, acc))
    best_weights = model.weights.copy()
    best_perp = perp
    stale = 0
    state = new_sag_state(features.shape[0], num_classes, features.shape[1], config.seed)
    for epoch in range(1, config.max_epochs + 1):
        if refresh is not None:
            features = refresh(epoch)
        model, state = sag_epoch(
            model, state, features, labels, config.step_size,
            minibatch=config.minibatch, l2=config.l2,
        )
        perp, acc = _heldout_stats(model, heldout_features, heldout_labels)
        history.append(EpochStats(epoch, cross_entropy(model, features, labels), perp, acc))
        if perp < best_perp:
            best_perp = perp
            best_weights = model.weights.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    return MlrModel(best_weights), history


def train_with_split(config: TrainConfig, features: np.ndarray, labels: np.ndarray):
    """Split off a held-out fraction (seeded) and train on the rest."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = features.shape[0]
    n_held = int(np.ceil(n * config.heldout_fraction))
    if n_held == 0 or n_held == n:
        raise ValueError("held-out split would leave an empty part")
    perm = stream(config.seed, "train-split").permutation(n)
    held, rest = perm[:n_held], perm[n_held:]
    return train(config, features[rest], labels[rest], features[held], labels[held])
