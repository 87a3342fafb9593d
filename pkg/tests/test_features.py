import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfkit.features import (
    KernelSpec,
    ProjectionBank,
    approx_kernel,
    exact_kernel,
    featurize,
    make_projection_bank,
    median_bandwidth,
)
from rfkit.rng import stream


class TestKernelSpec:
    def test_rejects_bad_kind(self):
        with pytest.raises(ValueError):
            KernelSpec("poly", 1.0)

    @pytest.mark.parametrize("bw", [0.0, -1.0])
    def test_rejects_nonpositive_bandwidth(self, bw):
        with pytest.raises(ValueError):
            KernelSpec("rbf", bw)

    def test_metric_follows_kind(self):
        assert KernelSpec("rbf", 1.0).metric == "l2"
        assert KernelSpec("laplacian", 1.0).metric == "l1"


class TestMakeProjectionBank:
    def test_rbf_spectrum_variance(self):
        # law of large numbers: entries are N(0, 1/sigma), so sample variance -> 1
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 1, 10**6, 7)
        assert np.var(bank.omega) == pytest.approx(1.0, rel=0.02)

    def test_laplacian_median_absolute_frequency(self):
        # Cauchy(scale 1/sigma) has median |omega| = 1/sigma = 0.5
        bank = make_projection_bank(KernelSpec("laplacian", 2.0), 1, 10**6, 7)
        assert np.median(np.abs(bank.omega)) == pytest.approx(0.5, rel=0.02)

    def test_deterministic(self):
        spec = KernelSpec("rbf", 2.0)
        a = make_projection_bank(spec, 4, 500, 11)
        b = make_projection_bank(spec, 4, 500, 11)
        assert np.array_equal(a.omega, b.omega)
        assert np.array_equal(a.phases, b.phases)

    def test_different_seeds_differ(self):
        spec = KernelSpec("rbf", 2.0)
        a = make_projection_bank(spec, 4, 500, 11)
        b = make_projection_bank(spec, 4, 500, 12)
        assert not np.array_equal(a.omega, b.omega)

    def test_phases_in_range(self):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 2, 5000, 3)
        assert bank.phases.min() >= 0.0
        assert bank.phases.max() < 2 * np.pi

    def test_scale(self):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 2, 50, 3)
        assert bank.scale == np.sqrt(2.0 / 50)

    @pytest.mark.parametrize("d,D", [(0, 10), (10, 0), (-1, 5)])
    def test_rejects_bad_dims(self, d, D):
        with pytest.raises(ValueError):
            make_projection_bank(KernelSpec("rbf", 1.0), d, D, 0)


class TestFeaturize:
    def test_zero_input_gives_cos_phases(self):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 3, 64, 5)
        row = featurize(np.zeros((1, 3)), bank)[0]
        assert np.allclose(row, bank.scale * np.cos(bank.phases))

    def test_single_feature_direct_substitution(self):
        bank = ProjectionBank(
            omega=np.array([[1.0]]), phases=np.array([0.0]), seed=0,
            spec=KernelSpec("rbf", 1.0),
        )
        assert featurize(np.array([[0.0]]), bank)[0, 0] == pytest.approx(np.sqrt(2.0))

    def test_dimension_mismatch(self):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 3, 10, 0)
        with pytest.raises(ValueError):
            featurize(np.zeros((2, 4)), bank)

    def test_inner_products_approximate_kernel(self):
        rng = stream(0, "test-featurize")
        X = rng.normal(size=(50, 6))
        sigma = median_bandwidth(X, "l2")
        spec = KernelSpec("rbf", sigma)
        bank = make_projection_bank(spec, 6, 20000, 1)
        F = featurize(X, bank)
        for i, j in [(0, 1), (2, 3), (10, 40)]:
            approx = approx_kernel(F[i], F[j])
            exact = exact_kernel(X[i], X[j], spec)
            assert abs(approx - exact) < 0.05

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 64))
    def test_entries_bounded(self, seed, num_features):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 2, num_features, seed)
        X = stream(seed, "test-bound").normal(size=(8, 2))
        F = featurize(X, bank)
        assert np.all(np.abs(F) <= np.sqrt(2.0 / num_features) + 1e-12)


class TestApproxKernel:
    def test_self_product_single_feature(self):
        # phi(0) with omega irrelevant, b=0: value sqrt(2), inner product 2
        phi = np.array([np.sqrt(2.0)])
        assert approx_kernel(phi, phi) == pytest.approx(2.0)

    def test_orthogonal_vectors(self):
        assert approx_kernel([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            approx_kernel([1.0, 2.0], [1.0])

    def test_self_product_bounded(self):
        bank = make_projection_bank(KernelSpec("rbf", 1.0), 3, 200, 9)
        F = featurize(stream(9, "t").normal(size=(20, 3)), bank)
        for row in F:
            assert 0.0 <= approx_kernel(row, row) <= 2.0

    def test_mean_deviation_over_many_pairs(self):
        rng = stream(3, "test-pairs")
        X = rng.normal(size=(1000, 4))
        Z = rng.normal(size=(1000, 4))
        spec = KernelSpec("rbf", median_bandwidth(np.vstack([X, Z]), "l2"))
        bank = make_projection_bank(spec, 4, 20000, 2)
        FX, FZ = featurize(X, bank), featurize(Z, bank)
        approx = np.sum(FX * FZ, axis=1)
        exact = np.array([exact_kernel(x, z, spec) for x, z in zip(X, Z)])
        assert np.mean(np.abs(approx - exact)) < 0.02


class TestExactKernel:
    def test_identical_points(self):
        for kind in ("rbf", "laplacian"):
            x = np.array([0.3, -1.2])
            assert exact_kernel(x, x, KernelSpec(kind, 2.0)) == 1.0

    def test_rbf_analytic(self):
        # ||x - z||^2 = 2 sigma^2 -> exp(-1)
        sigma = 1.5
        x, z = np.array([0.0]), np.array([np.sqrt(2.0) * sigma])
        assert exact_kernel(x, z, KernelSpec("rbf", sigma)) == pytest.approx(np.exp(-1.0))

    def test_laplacian_analytic(self):
        sigma = 0.7
        x, z = np.array([0.0]), np.array([sigma])
        assert exact_kernel(x, z, KernelSpec("laplacian", sigma)) == pytest.approx(np.exp(-1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            exact_kernel([1.0], [1.0, 2.0], KernelSpec("rbf", 1.0))

    def test_value_in_unit_interval(self):
        rng = stream(4, "test-exact")
        for _ in range(20):
            x, z = rng.normal(size=4), rng.normal(size=4)
            v = exact_kernel(x, z, KernelSpec("laplacian", 0.5))
            assert 0.0 < v <= 1.0


class TestMedianBandwidth:
    def test_single_pair(self):
        X = np.array([[0.0, 0.0], [4.0, 0.0]])
        assert median_bandwidth(X, "l2") == 4.0

    def test_three_collinear_points(self):
        # pairwise distances {1, 2, 3}, median 2
        X = np.array([[0.0], [1.0], [3.0]])
        assert median_bandwidth(X, "l2") == 2.0

    def test_l1_metric(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert median_bandwidth(X, "l1") == 2.0

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            median_bandwidth(np.zeros((1, 3)), "l2")

    def test_sampled_close_to_full(self):
        # brute-force all-pairs oracle vs the budgeted sampler
        X = stream(5, "test-median").normal(size=(10**4, 10))
        full = median_bandwidth(X, "l2", pair_budget=10**8)
        sampled = median_bandwidth(X, "l2", pair_budget=10**5, seed=1)
        assert abs(sampled - full) / full < 0.02

    def test_sampling_deterministic(self):
        X = stream(6, "test-median2").normal(size=(500, 3))
        a = median_bandwidth(X, "l2", pair_budget=1000, seed=9)
        b = median_bandwidth(X, "l2", pair_budget=1000, seed=9)
        assert a == b


class TestMonteCarloProperties:
    def test_unbiasedness_across_banks(self):
        # R x D = 10^6 total features; mean over fresh banks approaches exact
        spec = KernelSpec("rbf", 1.0)
        x = np.array([0.2, -0.1, 0.4])
        z = np.array([-0.3, 0.5, 0.1])  # ||x - z|| well under 3 sigma
        R, D = 50, 20000
        estimates = []
        for r in range(R):
            bank = make_projection_bank(spec, 3, D, 1000 + r)
            fx = featurize(x[None, :], bank)[0]
            fz = featurize(z[None, :], bank)[0]
            estimates.append(approx_kernel(fx, fz))
        assert abs(np.mean(estimates) - exact_kernel(x, z, spec)) < 0.01

    def test_monte_carlo_rate(self):
        # std shrinks ~1/sqrt(D): factor 2 (+-25%) from D to 4D
        spec = KernelSpec("rbf", 1.0)
        x = np.array([0.9, 0.0])
        z = np.array([0.0, 0.4])

        def stds(D):
            vals = [
                approx_kernel(
                    featurize(x[None, :], b := make_projection_bank(spec, 2, D, 5000 + r))[0],
                    featurize(z[None, :], b)[0],
                )
                for r in range(50)
            ]
            return np.std(vals)

        ratio = stds(2500) / stds(10000)
        assert 1.5 <= ratio <= 2.5
