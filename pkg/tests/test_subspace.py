import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from cestden.subspace import (
    CSTD_MAGIC,
    ConvergenceError,
    SubspaceDecomposition,
    gram_svd,
    jacobi_eigh,
    project_coefficients,
    read_decomposition,
    reconstruct,
    threshold_median,
    threshold_truncation,
    write_decomposition,
)
from cestden.volume import OffsetSchedule, ZSpectrumVolume


def volume_from(matrix: np.ndarray) -> ZSpectrumVolume:
    """Wrap a rows x cols matrix as a rows x 1 x cols volume."""
    rows, cols = matrix.shape
    sched = OffsetSchedule(np.linspace(-3.0, 3.0, cols))
    return ZSpectrumVolume(rows, 1, sched, matrix)


class TestJacobiEigh:
    def test_diagonal_matrix(self):
        res = jacobi_eigh(np.diag([1.0, 5.0, 3.0]))
        assert np.array_equal(res.eigenvalues, [5.0, 3.0, 1.0])
        recon = res.eigenvectors @ np.diag(res.eigenvalues) @ res.eigenvectors.T
        assert np.allclose(recon, np.diag([1.0, 5.0, 3.0]), atol=1e-12)

    def test_two_by_two_by_hand(self):
        # [[2,1],[1,2]] has eigenpairs 3 with (1,1)/sqrt(2), 1 with (1,-1)/sqrt(2)
        res = jacobi_eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(res.eigenvalues, [3.0, 1.0], atol=1e-14)
        r = 1.0 / np.sqrt(2.0)
        assert abs(abs(res.eigenvectors[:, 0] @ [r, r]) - 1.0) < 1e-14
        assert abs(abs(res.eigenvectors[:, 1] @ [r, -r]) - 1.0) < 1e-14

    def test_zero_matrix(self):
        res = jacobi_eigh(np.zeros((4, 4)))
        assert np.array_equal(res.eigenvalues, np.zeros(4))
        assert np.array_equal(res.eigenvectors, np.eye(4))

    @pytest.mark.parametrize("seed", [0, 1, 7, 42])
    @pytest.mark.parametrize("n", [2, 5, 12, 30])
    def test_matches_lapack(self, seed, n):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n))
        s = a @ a.T + np.eye(n)
        res = jacobi_eigh(s)
        ref = np.linalg.eigvalsh(s)[::-1]
        scale = max(abs(ref[0]), 1.0)
        assert np.allclose(res.eigenvalues, ref, atol=1e-10 * scale)

    def test_eigenvector_residual_and_orthonormality(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(15, 15))
        s = a + a.T
        res = jacobi_eigh(s)
        v = res.eigenvectors
        assert np.allclose(v.T @ v, np.eye(15), atol=1e-12)
        resid = s @ v - v * res.eigenvalues
        assert np.abs(resid).max() < 1e-10 * np.abs(s).max()

    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 10))
    @settings(max_examples=25, deadline=None)
    def test_eigenvalues_property(self, seed, n):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=(n, n))
        s = 0.5 * (s + s.T)
        res = jacobi_eigh(s)
        ref = np.linalg.eigvalsh(s)[::-1]
        scale = max(np.abs(ref).max(), 1e-12)
        assert np.allclose(res.eigenvalues, ref, atol=1e-10 * scale)
        assert np.all(np.diff(res.eigenvalues) <= 1e-12 * scale)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError, match="square"):
            jacobi_eigh(np.zeros((3, 4)))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_gram_matrix_from_pipeline_converges_cleanly(self, small_noisy):
        # regression guard: near-converged off-diagonal levels once sat at the
        # cancellation floor of the old norm shortcut, and extreme diagonal
        # ratios overflowed the rotation parameter
        g = small_noisy.data.T @ small_noisy.data
        g = 0.5 * (g + g.T)
        with np.errstate(over="raise", invalid="raise"):
            res = jacobi_eigh(g)
        ref = np.linalg.eigvalsh(g)[::-1]
        assert np.allclose(res.eigenvalues, ref, atol=1e-9 * ref[0])

    def test_wide_dynamic_range(self):
        s = np.diag([1e200, 1.0, 1e-200]) + 1e190 * (np.ones((3, 3)) - np.eye(3))
        with np.errstate(over="raise", invalid="raise"):
            res = jacobi_eigh(s)
        ref = np.linalg.eigvalsh(s)[::-1]
        assert np.allclose(res.eigenvalues, ref, rtol=1e-10)

    def test_max_sweeps_exhaustion(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(20, 20))
        with pytest.raises(ConvergenceError, match="sweeps"):
            jacobi_eigh(a @ a.T, max_sweeps=1)


class TestGramSvd:
    @pytest.mark.parametrize("seed", [0, 11, 23])
    def test_singular_values_match_lapack(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(40, 9))
        d = gram_svd(volume_from(y), 9)
        ref = np.linalg.svd(y, compute_uv=False)
        assert np.allclose(d.singular_values, ref, rtol=1e-9)

    def test_basis_spans_lapack_subspace(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=(60, 10))
        d = gram_svd(volume_from(y), 4)
        _, _, vt = np.linalg.svd(y)
        dots = np.abs(d.basis @ vt[:4].T)
        assert np.allclose(dots, np.eye(4), atol=1e-8)

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=(50, 12))
        d = gram_svd(volume_from(y), 12)
        err = np.linalg.norm(d.coefficients @ d.basis - y)
        assert err <= 1e-9 * np.linalg.norm(y)

    def test_coefficients_are_projections(self):
        rng = np.random.default_rng(9)
        y = rng.normal(size=(30, 7))
        d = gram_svd(volume_from(y), 3)
        assert np.allclose(d.coefficients, y @ d.basis.T, atol=1e-12)

    def test_sign_convention_and_determinism(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=(45, 8))
        d1 = gram_svd(volume_from(y), 5)
        d2 = gram_svd(volume_from(y), 5)
        for k in range(5):
            row = d1.basis[k]
            assert row[np.argmax(np.abs(row))] > 0
        assert np.array_equal(d1.basis, d2.basis)
        assert np.array_equal(d1.coefficients, d2.coefficients)

    def test_rank_one_volume(self):
        spec = np.linspace(1.0, 0.2, 6)
        y = np.outer(np.arange(1, 21, dtype=float), spec)
        d = gram_svd(volume_from(y), 1)
        assert d.singular_values[0] == pytest.approx(np.linalg.norm(y), rel=1e-12)
        recon = d.coefficients @ d.basis
        assert np.allclose(recon, y, atol=1e-10 * np.abs(y).max())

    @pytest.mark.parametrize("K", [0, -1, 80])
    def test_rank_out_of_range(self, small_noisy, K):
        with pytest.raises(ValueError, match="out of range"):
            gram_svd(small_noisy, K)

    def test_needs_more_voxels_than_channels(self):
        sched = OffsetSchedule(np.linspace(-1, 1, 9))
        vol = ZSpectrumVolume(2, 2, sched, np.ones((4, 9)))
        with pytest.raises(ValueError, match="C <= M\\*N"):
            gram_svd(vol, 2)

    def test_noise_free_phantom_is_low_rank(self, small_phantom):
        vol, _, _ = small_phantom
        d = gram_svd(vol, 8)
        recon = d.coefficients @ d.basis
        rel = np.linalg.norm(recon - vol.data) / np.linalg.norm(vol.data)
        assert rel < 1e-2


class TestProjectReconstruct:
    def test_project_matches_matmul(self, small_noisy):
        d = gram_svd(small_noisy, 4)
        u = project_coefficients(small_noisy, d.basis)
        assert np.array_equal(u, small_noisy.data @ d.basis.T)

    def test_project_rejects_nonorthonormal(self, small_noisy):
        bad = np.ones((2, small_noisy.C))
        with pytest.raises(ValueError, match="orthonormal"):
            project_coefficients(small_noisy, bad)

    def test_reconstruct_round_trip_membership(self, small_noisy):
        d = gram_svd(small_noisy, 4)
        rec = reconstruct(d.coefficients, d.basis, 32, 32, small_noisy.schedule)
        # rows of the reconstruction lie in the span of the basis
        back = (rec.data @ d.basis.T) @ d.basis
        assert np.abs(rec.data - back).max() <= 1e-10

    def test_reconstruct_shape_checks(self, small_noisy):
        d = gram_svd(small_noisy, 4)
        with pytest.raises(ValueError, match="shape mismatch"):
            reconstruct(d.coefficients[:, :3], d.basis, 32, 32, small_noisy.schedule)
        with pytest.raises(ValueError):
            reconstruct(d.coefficients, d.basis, 31, 32, small_noisy.schedule)


class TestThresholdOperators:
    def test_truncation_is_identity_on_coefficients(self, small_noisy):
        d = gram_svd(small_noisy, 3)
        assert threshold_truncation(d) is d.coefficients

    @pytest.mark.parametrize("kernel", [3, 5])
    def test_median_matches_scipy(self, kernel):
        rng = np.random.default_rng(12)
        u = rng.normal(size=(24 * 20, 3))
        out = threshold_median(u, 24, 20, kernel=kernel)
        for k in range(3):
            ref = ndimage.median_filter(
                u[:, k].reshape(24, 20), size=kernel, mode="reflect"
            )
            assert np.array_equal(out[:, k].reshape(24, 20), ref)

    def test_median_removes_isolated_outlier(self):
        u = np.zeros((100, 1))
        u[55, 0] = 50.0
        out = threshold_median(u, 10, 10)
        assert np.array_equal(out, np.zeros((100, 1)))

    def test_median_preserves_constant(self):
        u = np.full((64, 2), 2.5)
        assert np.array_equal(threshold_median(u, 8, 8), u)

    @pytest.mark.parametrize("kernel", [1, 2, 4, -3])
    def test_median_kernel_validation(self, kernel):
        with pytest.raises(ValueError, match="kernel"):
            threshold_median(np.zeros((16, 2)), 4, 4, kernel=kernel)

    def test_median_shape_validation(self):
        with pytest.raises(ValueError, match="voxels"):
            threshold_median(np.zeros((15, 2)), 4, 4)


class TestDecompositionValidation:
    def test_rejects_nonorthonormal_basis(self):
        with pytest.raises(ValueError, match="orthonormal"):
            SubspaceDecomposition(
                basis=np.ones((2, 5)),
                coefficients=np.zeros((10, 2)),
                singular_values=np.array([2.0, 1.0]),
            )

    def test_rejects_increasing_singular_values(self):
        basis = np.eye(5)[:2]
        with pytest.raises(ValueError, match="non-increasing"):
            SubspaceDecomposition(
                basis=basis,
                coefficients=np.zeros((10, 2)),
                singular_values=np.array([1.0, 2.0]),
            )

    def test_rejects_inconsistent_rank(self):
        with pytest.raises(ValueError, match="inconsistent rank"):
            SubspaceDecomposition(
                basis=np.eye(5)[:2],
                coefficients=np.zeros((10, 3)),
                singular_values=np.array([2.0, 1.0]),
            )

    def test_arrays_are_read_only(self, small_noisy):
        d = gram_svd(small_noisy, 2)
        with pytest.raises(ValueError):
            d.basis[0, 0] = 1.0


class TestDecompositionFile:
    def test_round_trip(self, tmp_path, small_noisy):
        d = gram_svd(small_noisy, 4)
        path = tmp_path / "d.cstd"
        write_decomposition(d, path)
        back = read_decomposition(path)
        assert np.array_equal(back.basis, d.basis)
        assert np.array_equal(back.singular_values, d.singular_values)
        assert np.array_equal(back.coefficients, d.coefficients)

    def test_rewrite_is_bit_identical(self, tmp_path, small_noisy):
        d = gram_svd(small_noisy, 3)
        a, b = tmp_path / "a.cstd", tmp_path / "b.cstd"
        write_decomposition(d, a)
        write_decomposition(d, b)
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, tmp_path, small_noisy):
        import struct

        d = gram_svd(small_noisy, 2)
        path = tmp_path / "d.cstd"
        write_decomposition(d, path)
        blob = path.read_bytes()
        assert blob[:4] == CSTD_MAGIC
        version, K, C, MN = struct.unpack("<IIII", blob[4:20])
        assert (version, K, C, MN) == (1, 2, 79, 32 * 32)
        assert len(blob) == 20 + 8 * (K * C + K + MN * K)
        basis = np.frombuffer(blob, "<f8", K * C, 20).reshape(K, C)
        assert np.array_equal(basis, d.basis)

    def test_corrupt_files_rejected(self, tmp_path, small_noisy):
        d = gram_svd(small_noisy, 2)
        path = tmp_path / "d.cstd"
        write_decomposition(d, path)
        blob = bytearray(path.read_bytes())

        bad_magic = tmp_path / "m.cstd"
        bad_magic.write_bytes(b"XXXX" + bytes(blob[4:]))
        with pytest.raises(ValueError, match="magic"):
            read_decomposition(bad_magic)

        bad_version = tmp_path / "v.cstd"
        bad_version.write_bytes(bytes(blob[:4]) + b"\x09\x00\x00\x00" + bytes(blob[8:]))
        with pytest.raises(ValueError, match="version"):
            read_decomposition(bad_version)

        truncated = tmp_path / "t.cstd"
        truncated.write_bytes(bytes(blob[:-8]))
        with pytest.raises(ValueError, match="length"):
            read_decomposition(truncated)

        trailing = tmp_path / "x.cstd"
        trailing.write_bytes(bytes(blob) + b"\x00")
        with pytest.raises(ValueError, match="length"):
            read_decomposition(trailing)

        short = tmp_path / "s.cstd"
        short.write_bytes(b"\x01\x02")
        with pytest.raises(ValueError, match="header"):
            read_decomposition(short)
