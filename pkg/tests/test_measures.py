import math

import numpy as np
import pytest

from canet.errors import (
    DimensionMismatchError,
    IndefiniteMatrixError,
    InfeasibleMaskError,
    SupportMismatchError,
    ValidationError,
)
from canet.measures import (
    GaussianMeasure,
    MixtureMeasure,
    convex_combine,
    eigendecompose,
    kl_gaussian_abstracted,
    mixture_distance,
    polar_prox,
    pushforward_gaussian,
    pushforward_mixture,
    random_stiefel,
    stiefel_deviation,
)


def rank_by_row_reduction(m, tol=1e-10):
    """Independent rank oracle: Gaussian elimination with partial pivoting."""
    a = np.array(m, dtype=float)
    scale = max(np.abs(a).max(), 1.0)
    rank = 0
    rows, cols = a.shape
    for c in range(cols):
        piv = None
        for r in range(rank, rows):
            if abs(a[r, c]) > tol * scale:
                piv = r
                break
        if piv is None:
            continue
        a[[rank, piv]] = a[[piv, rank]]
        a[rank] = a[rank] / a[rank, c]
        for r in range(rows):
            if r != rank:
                a[r] -= a[r, c] * a[rank]
        rank += 1
    return rank


class TestEigendecompose:
    def test_identity(self):
        dec = eigendecompose(np.eye(3), rank_tol=1e-9)
        assert np.allclose(dec.eigenvalues, [1.0, 1.0, 1.0])
        assert dec.rank == 3

    def test_diagonal_with_zero(self):
        dec = eigendecompose(np.diag([2.0, 0.0]), rank_tol=1e-9)
        assert np.allclose(dec.eigenvalues, [2.0, 0.0])
        assert dec.rank == 1

    def test_gram_rank_matches_row_reduction_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.standard_normal((3, 2))
            gram = a.T @ a  # 2x2, full rank
            assert eigendecompose(a @ a.T).rank == rank_by_row_reduction(a @ a.T) == 2
            assert eigendecompose(gram).rank == rank_by_row_reduction(gram)

    def test_descending_order_and_orthonormal(self):
        rng = np.random.default_rng(3)
        g = rng.standard_normal((6, 6))
        dec = eigendecompose(g @ g.T)
        assert np.all(np.diff(dec.eigenvalues) <= 0)
        u = dec.eigenvectors
        assert np.linalg.norm(u.T @ u - np.eye(6)) < 1e-9

    def test_reconstruction_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = rng.standard_normal((5, 3))
            cov = a @ a.T
            dec = eigendecompose(cov)
            rel = np.linalg.norm(dec.reconstruct() - cov) / np.linalg.norm(cov)
            assert rel < 1e-8

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValidationError):
            eigendecompose(np.ones((2, 3)))

    def test_rejects_indefinite(self):
        with pytest.raises(IndefiniteMatrixError):
            eigendecompose(np.diag([1.0, -1.0]))

    def test_clamps_tiny_negatives(self):
        dec = eigendecompose(np.diag([1.0, -1e-12]), rank_tol=1e-9)
        assert dec.eigenvalues[-1] == 0.0
        assert dec.rank == 1


class TestGaussianMeasure:
    def test_symmetrizes_and_freezes(self):
        mu = GaussianMeasure(np.eye(2))
        assert not mu.cov.flags.writeable
        assert mu.dim == 2

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            GaussianMeasure(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_eig_cached(self):
        mu = GaussianMeasure(np.diag([3.0, 1.0]))
        assert mu.eig is mu.eig
        assert mu.rank == 2


class TestPushforward:
    def test_identity_map(self):
        mu = GaussianMeasure(np.diag([2.0, 3.0]))
        out = pushforward_gaussian(np.eye(2), mu)
        assert np.allclose(out.cov, mu.cov)

    def test_coordinate_projection(self):
        mu = GaussianMeasure(np.diag([2.0, 3.0]))
        out = pushforward_gaussian(np.array([[1.0, 0.0]]), mu)
        assert out.cov.shape == (1, 1)
        assert out.cov[0, 0] == pytest.approx(2.0)

    def test_stiefel_embedding_spectrum(self):
        # Embedding an identity-covariance pair through V in St(3, 2) gives
        # V V^T, whose nonzero spectrum is (1, 1): check against an explicit
        # eigencomputation of the outer product.
        v = random_stiefel(3, 2, rng=0)
        out = pushforward_gaussian(v, GaussianMeasure(np.eye(2)))
        assert np.allclose(out.cov, v @ v.T)
        w = np.linalg.eigvalsh(out.cov)
        assert np.allclose(np.sort(w)[::-1], [1.0, 1.0, 0.0], atol=1e-9)
        assert out.rank == 2

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            pushforward_gaussian(np.eye(3), GaussianMeasure(np.eye(2)))

    def test_preserves_psd(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            g = rng.standard_normal((4, 4))
            mu = GaussianMeasure(g @ g.T)
            m = rng.standard_normal((6, 4))
            out = pushforward_gaussian(m, mu)
            w = out.eig.eigenvalues
            assert np.linalg.norm(out.cov - out.cov.T) == 0.0
            assert w[-1] >= -1e-8 * max(w[0], 1.0)


class TestPushforwardMixture:
    def test_identity(self):
        mix = MixtureMeasure(
            ((0.25, GaussianMeasure(np.eye(2))), (0.75, GaussianMeasure(2 * np.eye(2))))
        )
        out = pushforward_mixture(np.eye(2), mix)
        assert mixture_distance(out, mix) < 1e-12

    def test_single_component_wraps_gaussian(self):
        mu = GaussianMeasure(np.diag([4.0, 1.0]))
        mix = MixtureMeasure.from_gaussian(mu)
        m = np.array([[1.0, 1.0]])
        out = pushforward_mixture(m, mix)
        expected = pushforward_gaussian(m, mu)
        assert np.allclose(out.components[0][1].cov, expected.cov)

    def test_componentwise_oracle(self):
        mix = MixtureMeasure(
            ((0.4, GaussianMeasure(np.diag([2.0, 3.0]))), (0.6, GaussianMeasure(np.eye(2))))
        )
        m = np.array([[1.0, 0.0]])
        out = pushforward_mixture(m, mix)
        assert [w for w, _ in out.components] == [0.4, 0.6]
        assert out.components[0][1].cov[0, 0] == pytest.approx(2.0)
        assert out.components[1][1].cov[0, 0] == pytest.approx(1.0)


class TestConvexCombine:
    def setup_method(self):
        self.a = MixtureMeasure.from_gaussian(GaussianMeasure(np.diag([2.0, 1.0])))
        self.b = MixtureMeasure.from_gaussian(GaussianMeasure(np.diag([5.0, 4.0])))

    def test_lambda_one_returns_a(self):
        assert convex_combine(1.0, self.a, self.b) is self.a

    def test_lambda_zero_returns_b(self):
        assert convex_combine(0.0, self.a, self.b) is self.b

    def test_even_split(self):
        out = convex_combine(0.5, self.a, self.b)
        assert sorted(w for w, _ in out.components) == [0.5, 0.5]

    def test_weight_sum_invariant(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            lam = rng.uniform()
            out = convex_combine(lam, self.a, self.b)
            assert abs(sum(w for w, _ in out.components) - 1.0) <= 1e-12

    def test_merges_identical_components(self):
        out = convex_combine(0.3, self.a, self.a)
        assert len(out.components) == 1
        assert out.components[0][0] == pytest.approx(1.0)

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValidationError):
            convex_combine(1.5, self.a, self.b)

    def test_rejects_dim_mismatch(self):
        c = MixtureMeasure.from_gaussian(GaussianMeasure(np.eye(3)))
        with pytest.raises(DimensionMismatchError):
            convex_combine(0.5, self.a, c)


class TestKL:
    def test_planted_abstraction_is_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            v = random_stiefel(5, 2, rng=rng)
            g = rng.standard_normal((5, 5))
            sigma_i = GaussianMeasure(g @ g.T + 1e-3 * np.eye(5))
            sigma_j = pushforward_gaussian(v.T, sigma_i)
            val = kl_gaussian_abstracted(v.T, sigma_i, sigma_j)
            assert abs(val) < 1e-9

    def test_scalar_closed_form(self):
        # S = (1), Sigma_j = (2): 2 + log 1 - log 2 - 1 = 1 - ln 2.
        chi_i = GaussianMeasure(np.array([[1.0]]))
        chi_j = GaussianMeasure(np.array([[2.0]]))
        val = kl_gaussian_abstracted(np.array([[1.0]]), chi_i, chi_j)
        assert val == pytest.approx(1.0 - math.log(2.0), abs=1e-12)

    def test_identity_map_identical_gaussians(self):
        rng = np.random.default_rng(4)
        g = rng.standard_normal((3, 3))
        mu = GaussianMeasure(g @ g.T + 0.1 * np.eye(3))
        assert abs(kl_gaussian_abstracted(np.eye(3), mu, mu)) < 1e-9

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            v = random_stiefel(4, 2, rng=rng)
            g1 = rng.standard_normal((4, 4))
            g2 = rng.standard_normal((2, 2))
            chi_i = GaussianMeasure(g1 @ g1.T + 1e-2 * np.eye(4))
            chi_j = GaussianMeasure(g2 @ g2.T + 1e-2 * np.eye(2))
            assert kl_gaussian_abstracted(v.T, chi_i, chi_j) >= -1e-9

    def test_support_mismatch(self):
        chi_i = GaussianMeasure(np.diag([1.0, 0.0]))
        chi_j = GaussianMeasure(np.eye(2))
        # Pushforward by identity keeps rank 1, target has rank 2.
        with pytest.raises(SupportMismatchError):
            kl_gaussian_abstracted(np.eye(2), chi_i, chi_j)


class TestPolarProx:
    def test_fixes_stiefel_points(self):
        v = random_stiefel(5, 3, rng=1)
        assert np.linalg.norm(polar_prox(v) - v) < 1e-10

    def test_positive_diagonal(self):
        assert np.allclose(polar_prox(np.diag([2.0, 3.0])), np.eye(2))

    def test_column_normalization(self):
        out = polar_prox(np.array([[0.0], [2.0]]))
        assert np.allclose(out, [[0.0], [1.0]])

    def test_output_always_orthonormal(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            s = rng.standard_normal((6, 3)) * rng.uniform(0.1, 10)
            assert stiefel_deviation(polar_prox(s)) <= 1e-8

    def test_rank_deficient_flagged_nonunique(self):
        s = np.zeros((3, 2))
        s[0, 0] = 1.0  # second column entirely in the null space
        out, unique = polar_prox(s, with_uniqueness=True)
        assert not unique
        assert stiefel_deviation(out) <= 1e-8
        full = np.linalg.matrix_rank(np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]))
        assert full == 2  # sanity: full-rank case stays unique
        _, unique2 = polar_prox(np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]), with_uniqueness=True)
        assert unique2


class TestRandomStiefel:
    def test_all_ones_column_mask(self):
        v = random_stiefel(4, 1, mask=np.ones((4, 1)), rng=0)
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_identity_mask_gives_signs(self):
        v = random_stiefel(3, 3, mask=np.eye(3), rng=0)
        assert np.allclose(np.abs(v), np.eye(3))

    def test_masked_draw_is_stiefel_and_respects_support(self):
        rng = np.random.default_rng(12)
        mask = np.zeros((6, 2))
        mask[[0, 2, 3], 0] = 1.0
        mask[[1, 4, 5], 1] = 1.0
        for _ in range(10):
            v = random_stiefel(6, 2, mask=mask, rng=rng)
            assert stiefel_deviation(v) <= 1e-10
            assert np.all(v[mask == 0.0] == 0.0)

    def test_unmasked_is_stiefel(self):
        for seed in range(5):
            v = random_stiefel(7, 4, rng=seed)
            assert stiefel_deviation(v) <= 1e-10

    def test_zero_column_mask_rejected(self):
        mask = np.zeros((3, 2))
        mask[:, 0] = 1.0
        with pytest.raises(InfeasibleMaskError):
            random_stiefel(3, 2, mask=mask, rng=0)

    def test_deterministic_given_seed(self):
        a = random_stiefel(5, 2, rng=42)
        b = random_stiefel(5, 2, rng=42)
        assert np.array_equal(a, b)


class TestMixtureBookkeeping:
    def test_canonical_merges_and_renormalizes(self):
        mu = GaussianMeasure(np.eye(2))
        mix = MixtureMeasure(((0.5, mu), (0.25, mu), (0.25, GaussianMeasure(2 * np.eye(2)))))
        canon = mix.canonical()
        assert len(canon.components) == 2
        assert canon.components[0][0] == pytest.approx(0.75)

    def test_distance_zero_for_reordered(self):
        m1 = GaussianMeasure(np.eye(2))
        m2 = GaussianMeasure(np.diag([3.0, 1.0]))
        a = MixtureMeasure(((0.4, m1), (0.6, m2)))
        b = MixtureMeasure(((0.6, m2), (0.4, m1)))
        assert mixture_distance(a, b) == 0.0

    def test_distance_inf_for_count_mismatch(self):
        a = MixtureMeasure.from_gaussian(GaussianMeasure(np.eye(2)))
        b = MixtureMeasure(
            ((0.5, GaussianMeasure(np.eye(2))), (0.5, GaussianMeasure(4 * np.eye(2))))
        )
        assert mixture_distance(a, b) == math.inf

    def test_weight_validation(self):
        with pytest.raises(ValidationError):
            MixtureMeasure(((0.5, GaussianMeasure(np.eye(2))),))
