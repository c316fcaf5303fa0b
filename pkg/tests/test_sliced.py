import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_w, finite_difference_gradient, kswd_objective, max_slice_grid_2d
from sinf.errors import (
    DimensionMismatchError,
    InvalidDataError,
    LengthMismatchError,
    SinfError,
    StepTooLargeError,
)
from sinf.sliced import (
    LineSearchConfig,
    cayley_retract_full,
    cayley_retract_woodbury,
    kswd_cost,
    match_sample_sizes,
    max_k_swd,
    max_k_swd_multistart,
    max_sliced_wasserstein,
    objective_gradient,
    random_orthonormal,
    random_projections,
    sliced_wasserstein,
    wasserstein_1d,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@pytest.fixture(scope="module")
def shifted_gaussians():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10_000, 2))
    Y = rng.standard_normal((10_000, 2)) + np.array([2.0, 0.0])
    return X, Y


def _orth_err(A):
    return np.max(np.abs(A.T @ A - np.eye(A.shape[1])))


class TestWasserstein1D:
    def test_identical_samples(self):
        assert wasserstein_1d([0, 1], [0, 1]) == 0.0

    def test_single_pair(self):
        assert wasserstein_1d([0], [3]) == 3.0

    def test_sorted_matching_beats_given_order(self):
        got = wasserstein_1d([1, 0], [5, 2])
        assert got == pytest.approx(math.sqrt(10), abs=1e-12)
        assert got == pytest.approx(brute_force_w([1, 0], [5, 2]), abs=1e-12)

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(1)
        for n in range(1, 7):
            for p in (1.0, 2.0, 3.0):
                xs, ys = rng.normal(size=n), rng.normal(size=n)
                assert wasserstein_1d(xs, ys, p) == pytest.approx(brute_force_w(xs, ys, p), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            wasserstein_1d([0, 1], [0])

    def test_non_finite(self):
        with pytest.raises(InvalidDataError):
            wasserstein_1d([0, np.nan], [0, 1])

    def test_bad_order(self):
        with pytest.raises(SinfError):
            wasserstein_1d([0], [1], p=0.5)

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
    def test_symmetric_and_zero_iff_same(self, pairs):
        xs = [a for a, _ in pairs]
        ys = [b for _, b in pairs]
        assert wasserstein_1d(xs, ys) == wasserstein_1d(ys, xs)
        assert wasserstein_1d(xs, list(reversed(xs))) == 0.0
        if sorted(xs) != sorted(ys):
            assert wasserstein_1d(xs, ys) > 0


class TestSlicedWasserstein:
    def test_same_data_is_zero(self):
        X = np.random.default_rng(0).normal(size=(50, 3))
        assert sliced_wasserstein(X, X, 20, seed=0) == 0.0

    def test_one_dimension_equals_exact(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(40, 1)), rng.normal(size=(40, 1))
        assert sliced_wasserstein(x, y, 7, seed=3) == pytest.approx(wasserstein_1d(x, y), rel=1e-12)

    def test_shifted_gaussians_large_sample(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((100_000, 2))
        Y = rng.standard_normal((100_000, 2)) + np.array([2.0, 0.0])
        assert sliced_wasserstein(X, Y, 2000, seed=5) == pytest.approx(math.sqrt(2), abs=0.05)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(6)
        X, Y = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
        assert sliced_wasserstein(X, Y, 10, seed=1) == sliced_wasserstein(X, Y, 10, seed=1)

    def test_errors(self):
        X = np.zeros((5, 2))
        with pytest.raises(DimensionMismatchError):
            sliced_wasserstein(X, np.zeros((5, 3)))
        with pytest.raises(SinfError):
            sliced_wasserstein(X, X, n_projections=0)
        with pytest.raises(LengthMismatchError):
            sliced_wasserstein(X, np.zeros((4, 2)))

    def test_projections_are_unit(self):
        T = random_projections(5, 100, seed=0)
        assert np.allclose(np.linalg.norm(T, axis=0), 1.0)


class TestMatchSampleSizes:
    def test_subsamples_larger(self):
        X = np.arange(20.0).reshape(10, 2)
        Y = np.zeros((4, 2))
        Xs, Ys = match_sample_sizes(X, Y, seed=0)
        assert Xs.shape == (4, 2) and Ys is not None and Ys.shape == (4, 2)
        assert all(any((row == r).all() for r in X) for row in Xs)


class TestRandomOrthonormal:
    def test_one_dimensional(self):
        A = random_orthonormal(1, 1, seed=0)
        assert abs(A[0, 0]) == 1.0

    def test_full_square(self):
        A = random_orthonormal(10, 10, seed=0)
        assert abs(abs(np.linalg.det(A)) - 1) < 1e-10
        assert _orth_err(A) < 1e-12

    def test_seeds_differ(self):
        assert not np.allclose(random_orthonormal(5, 2, seed=1), random_orthonormal(5, 2, seed=2))

    def test_k_too_large(self):
        with pytest.raises(SinfError):
            random_orthonormal(2, 3)


class TestGradient:
    def test_identical_rows_zero(self):
        X = np.random.default_rng(0).normal(size=(8, 3))
        A = random_orthonormal(3, 2, seed=1)
        assert np.all(objective_gradient(X, X, A) == 0)

    def test_hand_case(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0]])
        Y = np.array([[3.0, 0.0], [5.0, 0.0]])
        A = np.array([[1.0], [0.0]])
        assert kswd_cost(X, Y, A) == pytest.approx(12.5, abs=1e-12)
        fd = finite_difference_gradient(lambda B: kswd_objective(X, Y, B), A)
        assert np.allclose(objective_gradient(X, Y, A), fd, rtol=1e-4, atol=1e-8)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_random_instance(self, p):
        rng = np.random.default_rng(7)
        X, Y = rng.normal(size=(16, 4)), rng.normal(size=(16, 4)) + 0.5
        A = random_orthonormal(4, 2, seed=8)
        fd = finite_difference_gradient(lambda B: kswd_objective(X, Y, B, p), A)
        G = objective_gradient(X, Y, A, p)
        assert np.max(np.abs(G - fd)) <= 1e-4 * np.max(np.abs(fd))

    def test_cost_matches_oracle(self):
        rng = np.random.default_rng(9)
        X, Y = rng.normal(size=(25, 3)), rng.normal(size=(25, 3))
        A = random_orthonormal(3, 3, seed=1)
        assert kswd_cost(X, Y, A) == pytest.approx(kswd_objective(X, Y, A), rel=1e-12)


class TestCayley:
    def test_zero_step_identity(self):
        A = random_orthonormal(5, 2, seed=0)
        G = np.random.default_rng(1).normal(size=(5, 2))
        assert np.array_equal(cayley_retract_woodbury(A, G, 0.0), A)
        assert np.allclose(cayley_retract_full(A, G, 0.0), A, atol=1e-15)

    def test_full_form_orthonormal(self):
        A = random_orthonormal(5, 2, seed=2)
        G = np.random.default_rng(3).normal(size=(5, 2))
        assert _orth_err(cayley_retract_full(A, G, 0.1)) < 1e-10

    @pytest.mark.parametrize("d,K", [(3, 1), (5, 2), (8, 4), (6, 6)])
    def test_forms_agree(self, d, K):
        rng = np.random.default_rng(d * 10 + K)
        A = random_orthonormal(d, K, seed=rng)
        G = rng.normal(size=(d, K))
        for tau in (0.01, 0.3, 1.7):
            assert np.max(np.abs(cayley_retract_full(A, G, tau) - cayley_retract_woodbury(A, G, tau))) < 1e-10

    def test_composed_steps_stay_on_manifold(self):
        rng = np.random.default_rng(11)
        A = random_orthonormal(64, 4, seed=rng)
        for _ in range(100):
            A = cayley_retract_woodbury(A, rng.normal(size=(64, 4)), 0.2)
        assert _orth_err(A) < 1e-8

    def test_negative_step(self):
        A = random_orthonormal(3, 1, seed=0)
        with pytest.raises(SinfError):
            cayley_retract_woodbury(A, A, -1.0)

    @pytest.mark.parametrize("retract", [cayley_retract_full, cayley_retract_woodbury])
    def test_non_finite_step_rejected(self, retract):
        # I + tau/2 B is never singular for skew B, so overflow is the failure mode
        A = np.array([[1.0], [0.0]])
        with pytest.raises(StepTooLargeError):
            retract(A, np.array([[np.inf], [0.0]]), 1.0)


class TestLineSearchConfig:
    @pytest.mark.parametrize(
        "kw", [dict(initial_step=0), dict(shrink_factor=1.0), dict(sufficient_increase=-1), dict(max_backtracks=0)]
    )
    def test_rejects_invalid(self, kw):
        with pytest.raises(SinfError):
            LineSearchConfig(**kw)


class TestMaxKSwd:
    def test_same_data_zero(self):
        X = np.random.default_rng(0).normal(size=(40, 3))
        res = max_k_swd(X, X, K=2, seed=0)
        assert res.distance == 0.0
        assert _orth_err(res.basis) < 1e-8

    def test_k_too_large(self):
        X = np.zeros((4, 2))
        with pytest.raises(SinfError):
            max_k_swd(X, X, K=3)

    def test_single_sample(self):
        x, y = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
        res = max_k_swd(x, y, K=1, seed=0, max_iter=100)
        assert res.distance == pytest.approx(5.0, rel=1e-6)

    def test_history_non_decreasing(self):
        rng = np.random.default_rng(1)
        X, Y = rng.normal(size=(200, 5)), rng.normal(size=(200, 5)) * [1, 2, 1, 1, 3]
        res = max_k_swd(X, Y, K=2, seed=2, max_iter=50)
        assert all(b >= a for a, b in zip(res.history, res.history[1:]))
        assert _orth_err(res.basis) < 1e-8

    def test_recovers_shift_axis(self, shifted_gaussians):
        X, Y = shifted_gaussians
        res = max_k_swd_multistart(X, Y, K=1, restarts=10, seed=0)
        grid, phi = max_slice_grid_2d(X, Y, n_angles=1800)
        assert res.distance == pytest.approx(2.0, abs=0.1)
        assert abs(res.basis[0, 0]) > 0.99
        assert res.distance == pytest.approx(grid, rel=2e-3)

    def test_two_axes_isotropic(self, shifted_gaussians):
        X, Y = shifted_gaussians
        res = max_k_swd_multistart(X, Y, K=2, restarts=3, seed=0)
        assert res.distance == pytest.approx(math.sqrt(2), abs=0.1)
        # every orthonormal 2x2 basis gives the same value up to sampling noise
        for s in range(5):
            A = random_orthonormal(2, 2, seed=s)
            assert math.sqrt(kswd_objective(X, Y, A)) == pytest.approx(res.distance, abs=0.01)

    def test_k1_agrees_with_independent_route(self, shifted_gaussians):
        X, Y = shifted_gaussians
        a = max_k_swd_multistart(X, Y, K=1, restarts=5, seed=1).distance
        b, theta = max_sliced_wasserstein(X, Y, restarts=5, seed=1)
        assert a == pytest.approx(b, rel=1e-3)
        assert abs(theta[0]) > 0.99

    def test_symmetric_at_fixed_basis(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(100, 4)), rng.normal(size=(100, 4)) + 1
        res = max_k_swd(X, Y, K=2, seed=0)
        assert kswd_cost(X, Y, res.basis) == kswd_cost(Y, X, res.basis)

    def test_noise_floor_shrinks_with_n(self):
        means = []
        for n in (100, 1000, 10_000):
            vals = []
            for s in range(5):
                rng = np.random.default_rng(100 + s)
                X, Y = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
                vals.append(max_k_swd_multistart(X, Y, K=1, restarts=2, max_iter=50, seed=s).distance)
            means.append(np.mean(vals))
        assert means[0] > means[1] > means[2]

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)), st.integers(1, 3), st.integers(0, 2**16))
    def test_basis_always_orthonormal(self, X, K, seed):
        Y = X[::-1] * 0.5 + 1.0
        res = max_k_swd(X, Y, K=K, seed=seed, max_iter=20)
        assert _orth_err(res.basis) < 1e-8
        assert res.distance >= 0
