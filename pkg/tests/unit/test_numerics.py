"""Unit tests for dense numerics, seeded sampling and the GMAT codec."""

import io
import math

import numpy as np
import pytest

from gora_desk.errors import (
    ArtifactFormatError,
    DimensionCapError,
    GramSingularError,
    ShapeMismatchError,
)
from gora_desk.numerics import (
    Rng,
    cholesky_solve,
    decode_matrix,
    derive_seed,
    encode_matrix,
    frobenius,
    hadamard_abs_avg,
    jacobi_singular_values,
    matmul,
    nuclear_norm,
    projector,
    read_matrix,
    sample_gaussian,
    sample_kaiming_uniform,
    write_matrix,
)
from gora_desk.numerics.rng import kaiming_bound


class TestMatmul:
    """Test the checked matrix product."""

    def test_identity(self):
        """Test multiplying by the identity."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(a, np.eye(2)), a)

    def test_hand_case(self):
        """Test a hand-evaluated product."""
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[2.0, 4.0], [6.0, 8.0]])
        np.testing.assert_array_equal(matmul(a, b), [[2.0, 4.0], [0.0, 0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        """Test the error reports both operand shapes."""
        with pytest.raises(ShapeMismatchError) as exc:
            matmul(np.ones((3, 2)), np.ones((3, 2)))
        assert "(3, 2)" in str(exc.value)
        assert str(exc.value).count("(3, 2)") == 2

    def test_rejects_vectors(self):
        """Test 1-D inputs are rejected."""
        with pytest.raises(ShapeMismatchError):
            matmul(np.ones(3), np.ones((3, 1)))


class TestNorms:
    """Test importance and norm helpers."""

    def test_hadamard_abs_avg_hand_case(self):
        """Test the mean |W * G| on a hand case."""
        w = np.array([[1.0, -2.0], [0.0, 3.0]])
        g = np.array([[2.0, 1.0], [-1.0, 0.0]])
        assert hadamard_abs_avg(w, g) == 1.0

    def test_hadamard_abs_avg_zero_and_identity(self):
        """Test zero gradient and identity inputs."""
        assert hadamard_abs_avg(np.ones((3, 3)), np.zeros((3, 3))) == 0.0
        assert hadamard_abs_avg(np.eye(2), np.eye(2)) == 0.5

    def test_hadamard_abs_avg_shape_mismatch(self):
        """Test mismatched shapes are rejected."""
        with pytest.raises(ShapeMismatchError):
            hadamard_abs_avg(np.ones((2, 2)), np.ones((2, 3)))

    def test_frobenius(self):
        """Test Frobenius norms."""
        assert frobenius(np.array([[3.0, 4.0]])) == 5.0
        assert frobenius(np.zeros((4, 4))) == 0.0
        assert frobenius(np.eye(3)) == pytest.approx(math.sqrt(3))


class TestSingularValues:
    """Test the Jacobi SVD and nuclear norm."""

    def test_diagonal(self):
        """Test a diagonal matrix."""
        assert nuclear_norm(np.diag([3.0, 4.0])) == pytest.approx(7.0, abs=1e-12)

    def test_rank_one(self):
        """Test a unit rank-1 outer product."""
        u = np.array([[0.6], [0.8]])
        v = np.array([[1.0, 0.0, 0.0]])
        assert nuclear_norm(u @ v) == pytest.approx(1.0, abs=1e-12)

    def test_against_eigenvalues(self):
        """Test [[1,2],[3,4]] against sqrt of eigenvalues of A^T A."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        expected = float(np.sum(np.sqrt(np.linalg.eigvalsh(a.T @ a))))
        assert nuclear_norm(a) == pytest.approx(expected, abs=1e-10)
        assert nuclear_norm(a) == pytest.approx(5.8310, abs=1e-4)

    @pytest.mark.parametrize("shape", [(12, 5), (5, 12), (9, 9)])
    def test_matches_numpy_svd(self, rng, shape):
        """Test singular values against numpy on random matrices."""
        a = sample_gaussian(rng, *shape)
        np.testing.assert_allclose(
            jacobi_singular_values(a), np.linalg.svd(a, compute_uv=False), atol=1e-10
        )

    def test_dimension_cap(self):
        """Test the dense factorization cap."""
        with pytest.raises(DimensionCapError):
            nuclear_norm(np.ones((6, 6)), dimension_cap=5)

    @pytest.mark.parametrize("shape", [(12, 8), (8, 12)])
    def test_nuclear_norm_orthogonal_invariance(self, rng, shape):
        """Test nuclear_norm(U A V) equals nuclear_norm(A) for orthogonal U and V."""
        rows, cols = shape
        a = sample_gaussian(rng, rows, cols)
        u, _ = np.linalg.qr(sample_gaussian(rng, rows, rows))
        v, _ = np.linalg.qr(sample_gaussian(rng, cols, cols))
        assert nuclear_norm(u @ a @ v) == pytest.approx(nuclear_norm(a), abs=1e-8)


class TestCholeskySolve:
    """Test the SPD solver."""

    def test_identity_system(self, rng):
        """Test spd = I returns the right-hand side."""
        rhs = sample_gaussian(rng, 4, 3)
        np.testing.assert_allclose(cholesky_solve(np.eye(4), rhs), rhs, atol=1e-15)

    def test_hand_case(self):
        """Test a 1x1 system."""
        np.testing.assert_allclose(
            cholesky_solve(np.array([[4.0]]), np.array([[2.0, 6.0]])), [[0.5, 1.5]]
        )

    def test_singular_gram(self):
        """Test a rank-deficient Gram matrix."""
        with pytest.raises(GramSingularError, match="Gram matrix singular"):
            cholesky_solve(np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones((2, 1)))

    def test_shape_checks(self):
        """Test non-square and incompatible inputs."""
        with pytest.raises(ShapeMismatchError):
            cholesky_solve(np.ones((2, 3)), np.ones((2, 1)))
        with pytest.raises(ShapeMismatchError):
            cholesky_solve(np.eye(2), np.ones((3, 1)))

    @pytest.mark.parametrize("r", [1, 8, 32, 64])
    def test_random_spd_matches_numpy(self, rng, r):
        """Test random SPD systems A^T A + I of size r against numpy's solver."""
        a = sample_gaussian(rng, r + 8, r)
        spd = a.T @ a + np.eye(r)
        rhs = sample_gaussian(rng, r, 5)
        expected = np.linalg.solve(spd, rhs)
        solved = cholesky_solve(spd, rhs)
        np.testing.assert_allclose(solved, expected, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(spd @ solved, rhs, atol=1e-9)

    def test_projector_properties(self, rng):
        """Test the projector is symmetric, idempotent and has trace r."""
        a = sample_gaussian(rng, 20, 4)
        p = projector(a)
        np.testing.assert_allclose(p, p.T, atol=1e-12)
        np.testing.assert_allclose(p @ p, p, atol=1e-12)
        assert np.trace(p) == pytest.approx(4.0, abs=1e-10)
        np.testing.assert_allclose(p, a @ np.linalg.pinv(a), atol=1e-12)


class TestRng:
    """Test seeded sampling."""

    def test_derive_seed(self):
        """Test seeds depend on root, tag and ids."""
        assert derive_seed(7, "init_A", 2) == derive_seed(7, "init_A", 2)
        assert derive_seed(7, "init_A", 2) != derive_seed(7, "init_A", 3)
        assert derive_seed(7, "init_A", 2) != derive_seed(8, "init_A", 2)
        assert derive_seed(7, "init_A", 2) != derive_seed(7, "base_weight", 2)
        assert 0 <= derive_seed(7, "x") < 2**64

    def test_same_seed_identical(self):
        """Test determinism of every sampler."""
        a, b = Rng(5), Rng(5)
        assert a.uniform(3, 4).tobytes() == b.uniform(3, 4).tobytes()
        assert a.gaussian(5, 5).tobytes() == b.gaussian(5, 5).tobytes()
        np.testing.assert_array_equal(a.permutation(10), b.permutation(10))

    def test_spawn_is_order_independent(self):
        """Test child streams do not depend on parent consumption."""
        parent = Rng(9)
        first = parent.spawn("layer", 1).gaussian(2, 2)
        parent.uniform(10, 10)
        again = parent.spawn("layer", 1).gaussian(2, 2)
        assert first.tobytes() == again.tobytes()

    @pytest.mark.slow
    def test_gaussian_moments(self):
        """Test a million Box-Muller samples have mean 0 and variance 1."""
        samples = sample_gaussian(Rng(7), 1000, 1000)
        assert abs(samples.mean()) < 0.01
        assert abs(samples.var() - 1.0) < 0.02

    def test_gaussian_odd_count(self):
        """Test odd sample counts keep the requested shape."""
        assert sample_gaussian(Rng(1), 3, 3).shape == (3, 3)
        assert np.all(np.isfinite(sample_gaussian(Rng(1), 3, 3)))

    def test_kaiming_bound(self):
        """Test every Kaiming entry respects 1/sqrt(fan_in)."""
        values = sample_kaiming_uniform(Rng(3), 100, 50, fan_in=100)
        assert kaiming_bound(100) == pytest.approx(0.1)
        assert np.all(np.abs(values) <= 0.1)
        assert values.std() > 0.03

    def test_kaiming_variance(self):
        """Test 10^5 Kaiming samples have variance 1/(3 fan_in) within 5%."""
        fan_in = 100
        values = sample_kaiming_uniform(Rng(21), 400, 250, fan_in=fan_in)
        assert values.size >= 100_000
        expected = 1.0 / (3 * fan_in)
        assert abs(values.var() - expected) / expected < 0.05
        assert abs(values.mean()) < 0.01 * kaiming_bound(fan_in)

    def test_kaiming_rejects_bad_fan_in(self):
        """Test fan_in must be positive."""
        with pytest.raises(ValueError):
            kaiming_bound(0)


class TestGmat:
    """Test the GMAT container."""

    def test_stream_round_trip(self, rng):
        """Test several matrices through one stream."""
        first = sample_gaussian(rng, 3, 4)
        second = np.zeros((0, 2))
        stream = io.BytesIO()
        written = write_matrix(stream, first) + write_matrix(stream, second)
        assert written == len(stream.getvalue())
        stream.seek(0)
        assert read_matrix(stream).tobytes() == first.tobytes()
        assert read_matrix(stream).shape == (0, 2)

    def test_header_layout(self):
        """Test magic, little-endian dims and f8 payload."""
        payload = encode_matrix(np.array([[1.0, 2.0]]))
        assert payload[:4] == b"GMAT"
        assert payload[4:12] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert len(payload) == 12 + 16

    def test_decode_rejects_bad_input(self):
        """Test bad magic, truncation and trailing bytes."""
        payload = encode_matrix(np.eye(2))
        with pytest.raises(ArtifactFormatError):
            decode_matrix(b"XMAT" + payload[4:])
        with pytest.raises(ArtifactFormatError):
            decode_matrix(payload[:-1])
        with pytest.raises(ArtifactFormatError):
            decode_matrix(payload + b"\x00")
        with pytest.raises(ArtifactFormatError):
            read_matrix(io.BytesIO(payload[:-3]))
