"""Block-parallel training and model combination.

A large feature budget D is split into B blocks, each with its own
projection bank and independently trained classifier; the ensemble's
posterior is the softmax of the per-block logit average, i.e. the
geometric mean of the per-block posteriors. Heterogeneous models are fused
by a weighted sum of their logits, with weights either supplied, grid
scanned, or learned by convex likelihood maximization.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

from .combinators import ProductSpec, multiplicative_bank
from .features import KernelSpec, ProjectionBank, featurize, make_projection_bank
from .mlr import MlrModel, TrainConfig, softmax, train
from .rng import derive_seed, stream

__all__ = [
    "BlockEnsemble",
    "CombinationWeights",
    "partition",
    "build_bank",
    "train_blocks",
    "assemble_logits",
    "learn_combination_weights",
    "combine_logits",
]


@dataclass
class BlockEnsemble:
    blocks: list[tuple[ProjectionBank, MlrModel]]
    num_classes: int

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("ensemble needs at least one block")
        d = self.blocks[0][0].input_dim
        for bank, model in self.blocks:
            if bank.input_dim != d:
                raise ValueError("all blocks must share the input dimension")
            if model.num_classes != self.num_classes:
                raise ValueError("all blocks must share the class count")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_features(self) -> int:
        return sum(bank.num_features for bank, _ in self.blocks)

    def predict_logits(self, X: np.ndarray) -> np.ndarray:
        return assemble_logits(self, X)


@dataclass
class CombinationWeights:
    """Learned per-model logit scalings (sqrt of the kernel-sum coefficients)."""

    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if not np.all(np.isfinite(self.betas)):
            raise ValueError("combination weights must be finite")


@dataclass
class CombinedModel:
    """Weighted logit-sum fusion of several trained ensembles."""

    models: list[BlockEnsemble]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.models) != self.weights.shape[0]:
            raise ValueError("one weight per member model is required")
        if not self.models:
            raise ValueError("combined model needs at least one member")

    @property
    def num_classes(self) -> int:
        return self.models[0].num_classes

    def predict_logits(self, X: np.ndarray) -> np.ndarray:
        return combine_logits([m.predict_logits(X) for m in self.models], self.weights)


def partition(total_features: int, block_size: int, seed: int) -> list[tuple[int, int, int]]:
    """Split a feature budget into ceil(D/D0) blocks with derived seeds.

    Returns (block_index, block_feature_count, derived_seed) triples; all
    blocks have block_size features except possibly the last.
    """
    if total_features < 1 or block_size < 1:
        raise ValueError("feature counts must be positive")
    out = []
    start = 0
    index = 0
    while start < total_features:
        count = min(block_size, total_features - start)
        out.append((index, count, derive_seed(seed, "block", index)))
        start += count
        index += 1
    return out


def build_bank(spec, input_dim: int, num_features: int, seed: int) -> ProjectionBank:
    """Dispatch bank construction on the kernel descriptor type."""
    if isinstance(spec, KernelSpec):
        return make_projection_bank(spec, input_dim, num_features, seed)
    if isinstance(spec, ProductSpec):
        return multiplicative_bank(spec, input_dim, num_features, seed)
    raise ValueError(f"cannot build a bank for {type(spec).__name__}")


def _train_one_block(config, spec, train_X, train_y, held_X, held_y, count, block_seed, augment):
    bank = build_bank(spec, train_X.shape[1], count, block_seed)
    held_features = featurize(held_X, bank)
    block_config = replace(config, seed=block_seed)
    if augment is None:
        features = featurize(train_X, bank)
        refresh = None
    else:
        features = featurize(train_X, bank)

        def refresh(epoch):
            rng = stream(block_seed, "augment", epoch)
            return featurize(augment(train_X, rng), bank)

    model, history = train(block_config, features, train_y, held_features, held_y,
                           refresh=refresh)
    return bank, model, history


def train_blocks(
    config: TrainConfig,
    kernel_spec,
    train_X: np.ndarray,
    train_y: np.ndarray,
    held_X: np.ndarray,
    held_y: np.ndarray,
    total_features: int,
    block_size: int,
    workers: int = 1,
    augment=None,
):
    """Train one classifier per feature block; blocks are independent.

    augment, if given, is a callable (X, rng) -> corrupted X applied afresh
    to the raw inputs for every training epoch (never to held-out data).
    Returns (BlockEnsemble, per-block histories) in partition order.
    """
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    plan = partition(total_features, block_size, config.seed)
    results = Parallel(n_jobs=workers)(
        delayed(_train_one_block)(
            config, kernel_spec, train_X, train_y, held_X, held_y, count, block_seed, augment
        )
        for _, count, block_seed in plan
    )
    num_classes = results[0][1].num_classes
    ensemble = BlockEnsemble(
        blocks=[(bank, model) for bank, model, _ in results],
        num_classes=num_classes,
    )
    histories = [history for _, _, history in results]
    return ensemble, histories


def assemble_logits(ensemble: BlockEnsemble, X: np.ndarray) -> np.ndarray:
    """Average per-block logits: the geometric-mean posterior before softmax."""
    from .mlr import logits

    total = None
    for bank, model in ensemble.blocks:
        block_logits = logits(model, featurize(X, bank))
        total = block_logits if total is None else total + block_logits
    return total / ensemble.num_blocks


def combine_logits(logit_sets: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Weighted sum of pre-softmax activation matrices."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(logit_sets) != weights.shape[0]:
        raise ValueError(f"{len(logit_sets)} logit sets but {weights.shape[0]} weights")
    shape = np.asarray(logit_sets[0]).shape
    for s in logit_sets:
        if np.asarray(s).shape != shape:
            raise ValueError("all logit sets must share one shape")
    out = np.zeros(shape)
    for w, s in zip(weights, logit_sets):
        out += w * np.asarray(s, dtype=np.float64)
    return out


def _combination_nll_grad(betas, logit_sets, labels):
    n = logit_sets[0].shape[0]
    scores = combine_logits(logit_sets, betas)
    nll = float(np.mean(logsumexp(scores, axis=1) - scores[np.arange(n), labels]))
    resid = softmax(scores)
    resid[np.arange(n), labels] -= 1.0
    grad = np.array([np.sum(resid * s) / n for s in logit_sets])
    return nll, grad


def learn_combination_weights(
    logit_sets: list[np.ndarray],
    labels: np.ndarray,
    step_size: float = 1.0,
    max_iters: int = 500,
    grad_tol: float = 1e-6,
) -> CombinationWeights:
    """Fit per-model logit scalings by maximizing the multinomial likelihood.

    The logits are frozen, so the objective is convex in the scalings.
    Full-batch gradient descent with backtracking line search from the
    symmetric start beta_i = 1/L; stops at gradient norm < grad_tol.
    """
    if not logit_sets:
        raise ValueError("need at least one logit set")
    logit_sets = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in logit_sets]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logit_sets[0].shape[0],):
        raise ValueError("label count must match logit rows")
    L = len(logit_sets)
    betas = np.full(L, 1.0 / L)
    nll, grad = _combination_nll_grad(betas, logit_sets, labels)
    for _ in range(max_iters):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) < grad_tol:
            break
        t = step_size
        while True:
            cand = betas - t * grad
            cand_nll, cand_grad = _combination_nll_grad(cand, logit_sets, labels)
            if cand_nll <= nll - 0.5 * t * gnorm2 or t < 1e-12:
                break
            t *= 0.5
        if cand_nll > nll:
            break
        betas, nll, grad = cand, cand_nll, cand_grad
    return CombinationWeights(betas=betas)
