"""Kernel combination: products, nonnegative sums, and two-stage composition.

A product of shift-invariant kernels has a spectrum equal to the convolution
of the factor spectra, so its bank is sampled by summing per-factor frequency
draws. A nonnegative sum is realized by concatenating sqrt(alpha)-scaled
feature blocks. Composition chains two feature maps through a linear
PCA bottleneck (on stage-1 features or on stage-1 log-posteriors).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (
    KernelSpec,
    ProjectionBank,
    featurize,
    make_projection_bank,
    median_bandwidth,
    sample_bank,
)
from .rng import derive_seed

__all__ = [
    "ProductSpec",
    "AdditiveSpec",
    "BottleneckProjection",
    "CompositeMap",
    "multiplicative_bank",
    "additive_featurize",
    "fit_bottleneck",
    "apply_bottleneck",
    "compose_pipeline",
]

BOTTLENECK_MODES = ("pca_features", "pca_logposteriors")


@dataclass(frozen=True)
class ProductSpec:
    """Product of base kernels, approximated at full feature count per row."""

    factors: tuple[KernelSpec, ...]

    def __post_init__(self):
        if len(self.factors) < 1:
            raise ValueError("product needs at least one factor")


@dataclass(frozen=True)
class AdditiveSpec:
    """Nonnegative combination sum_i alpha_i * k_i with per-term feature counts."""

    terms: tuple[tuple[KernelSpec, float, int], ...]  # (kernel, alpha, D_i)

    def __post_init__(self):
        if len(self.terms) < 1:
            raise ValueError("additive combination needs at least one term")
        alphas = [a for _, a, _ in self.terms]
        if any(a < 0 for a in alphas):
            raise ValueError("combination coefficients must be nonnegative")
        if not any(a > 0 for a in alphas):
            raise ValueError("at least one combination coefficient must be positive")
        if any(d < 1 for _, _, d in self.terms):
            raise ValueError("per-term feature counts must be positive")

    @property
    def total_features(self) -> int:
        return sum(d for _, _, d in self.terms)


def multiplicative_bank(spec: ProductSpec, input_dim: int, num_features: int, seed: int) -> ProjectionBank:
    """Sample a bank for a product kernel: omega rows are sums of factor draws."""
    return sample_bank(list(spec.factors), input_dim, num_features, seed, spec)


def additive_featurize(spec: AdditiveSpec, banks: list[ProjectionBank], X: np.ndarray) -> np.ndarray:
    """Concatenate sqrt(alpha_i)-scaled per-term feature blocks."""
    if len(banks) != len(spec.terms):
        raise ValueError(f"{len(spec.terms)} terms but {len(banks)} banks")
    blocks = []
    for (kernel, alpha, d_i), bank in zip(spec.terms, banks):
        if bank.num_features != d_i:
            raise ValueError(
                f"bank has {bank.num_features} features but term declares {d_i}"
            )
        blocks.append(np.sqrt(alpha) * featurize(X, bank))
    return np.hstack(blocks)


@dataclass(frozen=True)
class BottleneckProjection:
    """Centered linear projection onto the top principal directions."""

    mode: str
    basis: np.ndarray  # (r, m), orthonormal rows
    mean: np.ndarray  # (m,)

    def __post_init__(self):
        if self.mode not in BOTTLENECK_MODES:
            raise ValueError(f"unknown bottleneck mode {self.mode!r}")
        if self.basis.ndim != 2 or self.mean.shape != (self.basis.shape[1],):
            raise ValueError("basis/mean shapes inconsistent")

    @property
    def target_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def source_dim(self) -> int:
        return self.basis.shape[1]


def fit_bottleneck(mode: str, Z: np.ndarray, target_dim: int) -> BottleneckProjection:
    """PCA of Z: column mean plus top-r eigenvectors of the sample covariance."""
    if mode not in BOTTLENECK_MODES:
        raise ValueError(f"unknown bottleneck mode {mode!r}")
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n, m = Z.shape
    if not (1 <= target_dim <= m):
        raise ValueError(f"target_dim must be in [1, {m}], got {target_dim}")
    if m > n:
        raise ValueError(f"need at least as many rows as columns ({n} rows, {m} columns)")
    mean = Z.mean(axis=0)
    centered = Z - mean
    cov = centered.T @ centered / n
    cov = (cov + cov.T) / 2.0
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:target_dim]
    basis = evecs[:, order].T
    # deterministic sign: first entry of magnitude > 1e-12 made positive
    for row in basis:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return BottleneckProjection(mode=mode, basis=basis, mean=mean)


def apply_bottleneck(proj: BottleneckProjection, Z: np.ndarray) -> np.ndarray:
    """Project rows of Z: (Z - mean) @ basis.T."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != proj.source_dim:
        raise ValueError(
            f"input has {Z.shape[1]} columns but bottleneck expects {proj.source_dim}"
        )
    return (Z - proj.mean) @ proj.basis.T


@dataclass(frozen=True)
class CompositeMap:
    """Two-stage random feature map: featurize2(bottleneck(featurize1(x))).

    In pca_logposteriors mode the bottleneck input is the floored
    log-posterior of a stage-1 classifier rather than the raw stage-1
    features, so the classifier travels with the map.
    """

    stage1: ProjectionBank
    bottleneck: BottleneckProjection
    stage2: ProjectionBank
    stage1_classifier: object | None = None

    def __post_init__(self):
        if self.stage2.input_dim != self.bottleneck.target_dim:
            raise ValueError("stage-2 input dimension must equal bottleneck target dim")
        if self.bottleneck.mode == "pca_logposteriors" and self.stage1_classifier is None:
            raise ValueError("pca_logposteriors composite needs its stage-1 classifier")

    def transform(self, X: np.ndarray) -> np.ndarray:
        z1 = featurize(X, self.stage1)
        if self.bottleneck.mode == "pca_logposteriors":
            from . import mlr

            post = mlr.posterior(self.stage1_classifier, z1)
            z1 = np.log(np.maximum(post, 1e-12))
        return featurize(apply_bottleneck(self.bottleneck, z1), self.stage2)


def compose_pipeline(
    stage1_spec: KernelSpec,
    stage1_features: int,
    bottleneck_mode: str,
    target_dim: int,
    stage2_kind: str,
    stage2_features: int,
    X: np.ndarray,
    seed: int,
    y: np.ndarray | None = None,
    train_config=None,
    stage2_bandwidth: float | None = None,
) -> CompositeMap:
    """Build and fit a two-stage composite feature map on training data.

    Stage-2 bandwidth defaults to the median pairwise distance on the
    bottleneck outputs. For mode pca_logposteriors a stage-1 classifier is
    trained on the stage-1 features (y and train_config required) and the
    bottleneck is fit on its floored log-posteriors; the returned map's
    stage-1 output is then routed through that classifier, so the composite
    is only usable via the pipeline object returned here.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    bank1 = make_projection_bank(stage1_spec, X.shape[1], stage1_features, derive_seed(seed, "stage1"))
    z1 = featurize(X, bank1)
    stage1_classifier = None
    if bottleneck_mode == "pca_logposteriors":
        if y is None or train_config is None:
            raise ValueError("pca_logposteriors needs labels and a train config")
        from . import mlr

        stage1_classifier, _ = mlr.train_with_split(train_config, z1, y)
        post = mlr.posterior(stage1_classifier, z1)
        z_in = np.log(np.maximum(post, 1e-12))
    else:
        z_in = z1
    bottleneck = fit_bottleneck(bottleneck_mode, z_in, target_dim)
    reduced = apply_bottleneck(bottleneck, z_in)
    if stage2_bandwidth is None:
        metric = "l2" if stage2_kind == "rbf" else "l1"
        stage2_bandwidth = median_bandwidth(reduced, metric=metric, seed=derive_seed(seed, "stage2-median"))
    spec2 = KernelSpec(stage2_kind, stage2_bandwidth)
    bank2 = make_projection_bank(spec2, target_dim, stage2_features, derive_seed(seed, "stage2"))
    return CompositeMap(
        stage1=bank1,
        bottleneck=bottleneck,
        stage2=bank2,
        stage1_classifier=stage1_classifier,
    )
