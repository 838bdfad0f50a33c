import numpy as np
import pytest

from canet.clca import (
    Clca,
    StructureMatrix,
    compose_clca,
    constructiveness,
    frobenius_distance,
    interlacing_check,
    structural_f1,
    validate_clca,
)
from canet.errors import DimensionMismatchError, OrientationError, ValidationError
from canet.measures import GaussianMeasure, pushforward_gaussian, random_stiefel


def random_partition(d_fine, d_coarse, rng):
    """Surjective random row-to-block assignment (anchor one row per block)."""
    entries = np.zeros((d_fine, d_coarse))
    perm = rng.permutation(d_fine)
    for c in range(d_coarse):
        entries[perm[c], c] = 1.0
    for r in perm[d_coarse:]:
        entries[r, rng.integers(d_coarse)] = 1.0
    return StructureMatrix(entries)


def random_clca(d_fine, d_coarse, rng):
    b = random_partition(d_fine, d_coarse, rng)
    return Clca(b, random_stiefel(d_fine, d_coarse, mask=b.entries, rng=rng))


class TestStructureMatrix:
    def test_valid_partition(self):
        b = StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert b.d_fine == 3 and b.d_coarse == 2

    def test_rejects_multi_block_row(self):
        with pytest.raises(ValidationError):
            StructureMatrix(np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]))

    def test_rejects_empty_column(self):
        with pytest.raises(ValidationError):
            StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))

    def test_rejects_wide(self):
        with pytest.raises(ValidationError):
            StructureMatrix(np.array([[1.0, 0.0, 0.0]]))

    def test_lenient_mode_holds_anything_binary(self):
        b = StructureMatrix(np.zeros((2, 2)), strict=False)
        assert b.shape == (2, 2)


class TestValidateClca:
    def test_identity_valid(self):
        report = validate_clca(Clca.identity(3))
        assert report.valid

    def test_non_surjective_flagged(self):
        b = StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]), strict=False)
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        report = validate_clca(Clca(b, v))
        assert not report.valid
        assert any("non-surjective" in m for m in report.messages)

    def test_off_support_entry_flagged(self):
        b = StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        v = random_stiefel(3, 2, mask=b.entries, rng=0).copy()
        v[0, 1] = 1e-3
        report = validate_clca(Clca(b, v))
        assert not report.valid
        assert report.off_support_max == pytest.approx(1e-3)

    def test_reports_stiefel_deviation(self):
        b = StructureMatrix(np.eye(2))
        report = validate_clca(Clca(b, 2.0 * np.eye(2)))
        assert not report.valid
        assert report.stiefel_deviation > 1.0


class TestComposeClca:
    def test_partition_product_matches_hand_example(self):
        # Abstraction structures [[1,1,0],[0,0,1]] then [[1,1]] compose to [[1,1,1]].
        b_ji = StructureMatrix(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).T)
        b_kj = StructureMatrix(np.array([[1.0, 1.0]]).T)
        inner = Clca(b_ji, random_stiefel(3, 2, mask=b_ji.entries, rng=0))
        outer = Clca(b_kj, random_stiefel(2, 1, mask=b_kj.entries, rng=1))
        out = compose_clca(inner, outer)
        assert np.array_equal(out.structure.entries, np.ones((3, 1)))

    def test_identity_neutral(self):
        rng = np.random.default_rng(3)
        c = random_clca(4, 2, rng)
        out = compose_clca(c, Clca.identity(2))
        assert np.allclose(out.weights, c.weights)
        out2 = compose_clca(Clca.identity(4), c)
        assert np.allclose(out2.weights, c.weights)

    def test_composite_column_norm(self):
        inner = Clca(
            StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])),
            random_stiefel(3, 2, mask=np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), rng=5),
        )
        outer = Clca(
            StructureMatrix(np.array([[1.0], [1.0]])),
            random_stiefel(2, 1, mask=np.ones((2, 1)), rng=6),
        )
        out = compose_clca(inner, outer)
        assert np.linalg.norm(out.weights[:, 0]) == pytest.approx(1.0)

    def test_random_compositions_stay_valid(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            d_i = int(rng.integers(4, 9))
            d_j = int(rng.integers(2, d_i + 1))
            d_k = int(rng.integers(1, d_j + 1))
            inner = random_clca(d_i, d_j, rng)
            outer = random_clca(d_j, d_k, rng)
            assert validate_clca(compose_clca(inner, outer)).valid

    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionMismatchError):
            compose_clca(random_clca(4, 2, rng), random_clca(3, 1, rng))


class TestInterlacing:
    def test_identities(self):
        assert interlacing_check(GaussianMeasure(np.eye(3)), GaussianMeasure(np.eye(2)))

    def test_lower_bound_violation(self):
        sl = GaussianMeasure(np.diag([1.0, 2.0, 3.0]))
        assert not interlacing_check(sl, GaussianMeasure(np.array([[0.5]])))

    def test_inner_value_passes(self):
        sl = GaussianMeasure(np.diag([1.0, 2.0, 3.0]))
        assert interlacing_check(sl, GaussianMeasure(np.array([[2.0]])))

    def test_upper_bound_violation(self):
        sl = GaussianMeasure(np.diag([1.0, 2.0, 3.0]))
        assert not interlacing_check(sl, GaussianMeasure(np.array([[4.0]])))

    def test_orientation_error(self):
        with pytest.raises(OrientationError):
            interlacing_check(GaussianMeasure(np.eye(2)), GaussianMeasure(np.eye(3)))

    def test_invariant_under_joint_rotation(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            gl = rng.standard_normal((4, 4))
            gh = rng.standard_normal((2, 2))
            sl = GaussianMeasure(gl @ gl.T)
            sh = GaussianMeasure(gh @ gh.T)
            ql = random_stiefel(4, 4, rng=rng)
            qh = random_stiefel(2, 2, rng=rng)
            sl_rot = pushforward_gaussian(ql, sl)
            sh_rot = pushforward_gaussian(qh, sh)
            assert interlacing_check(sl, sh) == interlacing_check(sl_rot, sh_rot)

    def test_necessary_for_planted_abstractions(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            c = random_clca(6, 3, rng)
            g = rng.standard_normal((6, 6))
            sl = GaussianMeasure(g @ g.T + 1e-3 * np.eye(6))
            sh = pushforward_gaussian(c.abstraction, sl)
            assert interlacing_check(sl, sh)


class TestMetrics:
    def test_f1_exact_recovery(self):
        b = StructureMatrix(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        assert structural_f1(b, b) == 1.0

    def test_f1_empty_learned(self):
        truth = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert structural_f1(np.zeros((2, 2)), truth) == 0.0

    def test_f1_three_quarters(self):
        truth = np.zeros((4, 2))
        truth[[0, 1], 0] = 1.0
        truth[[2, 3], 1] = 1.0
        learned = np.zeros((4, 2))
        learned[[0, 1], 0] = 0.9  # two true hits
        learned[2, 1] = 0.8  # third true hit
        learned[0, 1] = 0.7  # one spurious
        assert structural_f1(learned, truth) == pytest.approx(0.75)

    def test_constructive_for_valid_clca(self):
        rng = np.random.default_rng(30)
        for _ in range(10):
            assert constructiveness(random_clca(5, 2, rng))

    def test_nonconstructive_zero_column(self):
        b = StructureMatrix(np.eye(2))
        c = Clca(b, np.diag([1.0, 0.0]))
        assert not constructiveness(c)

    def test_frobenius_zero_on_match_and_sign_flip(self):
        v = random_stiefel(5, 3, rng=2)
        assert frobenius_distance(v, v) == 0.0
        assert frobenius_distance(-v, v) == pytest.approx(0.0, abs=1e-12)
        flip = v * np.array([1.0, -1.0, 1.0])
        assert frobenius_distance(flip, v) == pytest.approx(0.0, abs=1e-12)

    def test_frobenius_orthogonal_columns(self):
        # Columnwise-orthogonal orthonormal frames sit at sqrt(2) after the
        # 1/||V*|| normalization: ||Vhat - V*||^2 = 2h.
        v = np.eye(4)[:, :2]
        w = np.eye(4)[:, 2:]
        assert frobenius_distance(w, v) == pytest.approx(np.sqrt(2.0))

    def test_frobenius_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            frobenius_distance(np.eye(3), np.eye(2))
