"""Random cosine feature maps for shift-invariant kernels.

Samples the spectral distribution of an RBF or Laplacian kernel (Gaussian
and Cauchy respectively), and maps inputs x to sqrt(2/D) * cos(omega @ x + b)
so that inner products of feature vectors approximate the kernel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

__all__ = [
    "KernelSpec",
    "ProjectionBank",
    "make_projection_bank",
    "featurize",
    "approx_kernel",
    "exact_kernel",
    "median_bandwidth",
]

KERNEL_KINDS = ("rbf", "laplacian")


@dataclass(frozen=True)
class KernelSpec:
    """A base shift-invariant kernel: kind plus bandwidth.

    The bandwidth is in units of the input space's distance metric,
    L2 for rbf and L1 for laplacian.
    """

    kind: str
    bandwidth: float

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if not (self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def metric(self) -> str:
        return "l2" if self.kind == "rbf" else "l1"


@dataclass(frozen=True)
class ProjectionBank:
    """A realized sample of D spectral frequencies plus uniform phases.

    omega has shape (D, d); rows are the frequency draws. Immutable and
    regenerable bit-identically from (spec, d, D, seed).
    """

    omega: np.ndarray
    phases: np.ndarray
    seed: int
    spec: object  # KernelSpec or a combination descriptor

    def __post_init__(self):
        if self.omega.ndim != 2:
            raise ValueError("omega must be a 2-d array")
        if self.phases.shape != (self.omega.shape[0],):
            raise ValueError("phases length must match omega row count")

    @property
    def num_features(self) -> int:
        return self.omega.shape[0]

    @property
    def input_dim(self) -> int:
        return self.omega.shape[1]

    @property
    def scale(self) -> float:
        return float(np.sqrt(2.0 / self.num_features))


def _sample_omega(spec: KernelSpec, d: int, rng: np.random.Generator, num: int) -> np.ndarray:
    if spec.kind == "rbf":
        # Gaussian spectrum: per-entry std 1/sigma so E[cos(w.delta)] = exp(-|delta|^2/2sigma^2)
        return rng.normal(0.0, 1.0 / spec.bandwidth, size=(num, d))
    # Cauchy spectrum via inverse CDF: w = tan(pi*(u - 1/2)) / sigma
    u = rng.random(size=(num, d))
    return np.tan(np.pi * (u - 0.5)) / spec.bandwidth


def sample_bank(factors: list[KernelSpec], input_dim: int, num_features: int, seed: int, spec) -> ProjectionBank:
    """Shared sampling path: omega rows are sums of per-factor spectral draws.

    With a single factor this is plain spectrum sampling; with several it
    realizes the convolution of the factor spectra (product kernel).
    """
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if num_features < 1:
        raise ValueError(f"num_features must be >= 1, got {num_features}")
    if not factors:
        raise ValueError("at least one kernel factor is required")
    omega = np.zeros((num_features, input_dim))
    for i, factor in enumerate(factors):
        omega += _sample_omega(factor, input_dim, stream(seed, "omega", i), num_features)
    phases = stream(seed, "phases").uniform(0.0, 2.0 * np.pi, size=num_features)
    return ProjectionBank(omega=omega, phases=phases, seed=seed, spec=spec)


def make_projection_bank(spec: KernelSpec, input_dim: int, num_features: int, seed: int) -> ProjectionBank:
    """Sample a projection bank for a single base kernel."""
    return sample_bank([spec], input_dim, num_features, seed, spec)


def featurize(X: np.ndarray, bank: ProjectionBank) -> np.ndarray:
    """Map rows of X (N x d) to random cosine features (N x D)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != bank.input_dim:
        raise ValueError(
            f"input has {X.shape[1]} columns but bank expects {bank.input_dim}"
        )
    return bank.scale * np.cos(X @ bank.omega.T + bank.phases)


def approx_kernel(phi_x: np.ndarray, phi_z: np.ndarray) -> float:
    """Inner product of two feature vectors: the Monte-Carlo kernel estimate."""
    phi_x = np.asarray(phi_x, dtype=np.float64).ravel()
    phi_z = np.asarray(phi_z, dtype=np.float64).ravel()
    if phi_x.shape != phi_z.shape:
        raise ValueError(f"feature length mismatch: {phi_x.shape} vs {phi_z.shape}")
    return float(phi_x @ phi_z)


def exact_kernel(x: np.ndarray, z: np.ndarray, spec: KernelSpec) -> float:
    """Closed-form kernel value for a base kernel."""
    x = np.asarray(x, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    delta = x - z
    if spec.kind == "rbf":
        return float(np.exp(-np.dot(delta, delta) / (2.0 * spec.bandwidth**2)))
    return float(np.exp(-np.abs(delta).sum() / spec.bandwidth))


def median_bandwidth(
    X: np.ndarray,
    metric: str = "l2",
    pair_budget: int = 100_000,
    seed: int = 0,
) -> float:
    """Median pairwise distance over (up to pair_budget sampled) row pairs.

    If the number of distinct pairs is within the budget, all pairs are
    used exactly; otherwise pairs (i != j) are sampled uniformly from the
    stream derived from seed.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if n < 2:
        raise ValueError("median_bandwidth needs at least 2 rows")
    if metric not in ("l2", "l1"):
        raise ValueError(f"metric must be 'l2' or 'l1', got {metric!r}")
    if pair_budget < 1:
        raise ValueError("pair_budget must be positive")
    total_pairs = n * (n - 1) // 2
    if total_pairs <= pair_budget:
        from scipy.spatial.distance import pdist

        dists = pdist(X, metric="euclidean" if metric == "l2" else "cityblock")
    else:
        rng = stream(seed, "median-pairs")
        i = rng.integers(0, n, size=pair_budget)
        j = rng.integers(0, n, size=pair_budget)
        clash = i == j
        while clash.any():
            j[clash] = rng.integers(0, n, size=int(clash.sum()))
            clash = i == j
        diff = X[i] - X[j]
        if metric == "l2":
            dists = np.linalg.norm(diff, axis=1)
        else:
            dists = np.abs(diff).sum(axis=1)
    return float(np.median(dists))
