"""Subspace decomposition of z-spectrum volumes.

The temporal (spectral) basis is obtained from the C x C Gram matrix of the
data rather than a bidiagonalization of the tall MN x C matrix: C is small, so
this costs one O(MN*C^2) accumulation plus a tiny eigenproblem solved by
cyclic Jacobi rotations. Baseline coefficient denoisers (rank truncation,
per-channel median filtering) and volume reconstruction live here too.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .volume import OffsetSchedule, ZSpectrumVolume

CSTD_MAGIC = b"CSTD"
CSTD_VERSION = 1

_ORTHO_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """Jacobi sweeps exhausted without reaching the off-diagonal target."""


@dataclass(frozen=True, eq=False)
class SymmetricEigenResult:
    """Eigenvalues in descending order; eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def jacobi_eigh(S: np.ndarray, max_sweeps: int = 100) -> SymmetricEigenResult:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps run until the off-diagonal Frobenius norm drops below 1e-12 times
    the Frobenius norm of S (or ``max_sweeps`` is hit, which raises).
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"matrix must be square, got {S.shape}")
    scale = np.max(np.abs(S)) if S.size else 0.0
    if scale > 0 and np.max(np.abs(S - S.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric within 1e-12 relative")

    n = S.shape[0]
    A = 0.5 * (S + S.T)
    V = np.eye(n)

    def scaled_norm(mat):
        # max-scaled so squaring cannot overflow for entries near 1e308
        peak = np.max(np.abs(mat))
        if peak == 0.0:
            return 0.0
        work = mat / peak
        return peak * np.sqrt(np.sum(work * work))

    norm_s = scaled_norm(A)
    if norm_s == 0.0:
        return SymmetricEigenResult(np.zeros(n), V)

    def offdiag_norm(mat):
        # summed directly over off-diagonal entries; the algebraic shortcut
        # ||A||^2 - ||diag||^2 cancels catastrophically near convergence
        work = mat.copy()
        np.fill_diagonal(work, 0.0)
        return scaled_norm(work)

    converged = False
    for _ in range(max_sweeps):
        if offdiag_norm(A) <= 1e-12 * norm_s:
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app, aqq = A[p, p], A[q, q]
                diff = aqq - app
                if abs(diff) / 1e150 > abs(apq):
                    # tau would overflow; its limit gives t = 1/(2 tau)
                    t = apq / diff
                else:
                    tau = diff / (2.0 * apq)
                    if tau >= 0:
                        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq

                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    else:
        converged = False
    if not converged:
        off = offdiag_norm(A)
        if off > 1e-12 * norm_s:
            raise ConvergenceError(
                f"no convergence after {max_sweeps} sweeps "
                f"(off-diagonal {off:.3e} vs target {1e-12 * norm_s:.3e})"
            )

    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    return SymmetricEigenResult(evals[order], V[:, order])


def _check_orthonormal_rows(basis: np.ndarray, tol: float = 1e-8) -> None:
    gram = basis @ basis.T
    dev = np.max(np.abs(gram - np.eye(basis.shape[0])))
    if dev > tol:
        raise ValueError(f"basis rows not orthonormal (max deviation {dev:.3e})")


@dataclass(frozen=True, eq=False)
class SubspaceDecomposition:
    """Rank-K split x = u v: orthonormal spectral basis v (K x C), spatial
    coefficients u (MN x K), singular values descending."""

    basis: np.ndarray
    coefficients: np.ndarray
    singular_values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.basis, dtype=np.float64)
        u = np.asarray(self.coefficients, dtype=np.float64)
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if v.ndim != 2 or u.ndim != 2 or sv.ndim != 1:
            raise ValueError("bad array ranks for decomposition")
        K = v.shape[0]
        if u.shape[1] != K or sv.shape[0] != K:
            raise ValueError(
                f"inconsistent rank: basis {v.shape}, coefficients {u.shape}, "
                f"singular values {sv.shape}"
            )
        _check_orthonormal_rows(v, tol=_ORTHO_TOL)
        if np.any(sv < 0) or np.any(np.diff(sv) > 0):
            raise ValueError("singular values must be non-negative, non-increasing")
        for name, arr in (("basis", v), ("coefficients", u), ("singular_values", sv)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.basis.shape[0]

    @property
    def C(self) -> int:
        return self.basis.shape[1]


def gram_svd(vol: ZSpectrumVolume, K: int) -> SubspaceDecomposition:
    """Top-K SVD factors of the volume via eigendecomposition of y^T y.

    Sign convention: the largest-magnitude entry of each basis row is made
    positive, so repeated decompositions of identical data are bit-identical.
    """
    y = vol.data
    C = vol.C
    if not 1 <= K <= C:
        raise ValueError(f"rank K={K} out of range [1, {C}]")
    if C > y.shape[0]:
        raise ValueError(f"need C <= M*N, got C={C} > {y.shape[0]}")
    G = y.T @ y
    G = 0.5 * (G + G.T)
    eig = jacobi_eigh(G)
    lam = eig.eigenvalues[:K].copy()
    lam_max = max(float(eig.eigenvalues[0]), 0.0)
    lam[lam < 1e-14 * lam_max] = 0.0
    basis = eig.eigenvectors[:, :K].T.copy()
    for k in range(K):
        if basis[k, np.argmax(np.abs(basis[k]))] < 0:
            basis[k] = -basis[k]
    return SubspaceDecomposition(
        basis=basis, coefficients=y @ basis.T, singular_values=np.sqrt(lam)
    )


def project_coefficients(vol: ZSpectrumVolume, basis: np.ndarray) -> np.ndarray:
    """Coefficients y v^T of the volume against an orthonormal basis."""
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[1] != vol.C:
        raise ValueError(
            f"basis shape {basis.shape} does not match C={vol.C}"
        )
    _check_orthonormal_rows(basis)
    return vol.data @ basis.T


def reconstruct(
    coefficients: np.ndarray,
    basis: np.ndarray,
    M: int,
    N: int,
    schedule: OffsetSchedule,
) -> ZSpectrumVolume:
    """Assemble u v back into a volume."""
    u = np.asarray(coefficients, dtype=np.float64)
    v = np.asarray(basis, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[0]:
        raise ValueError(f"shape mismatch: coefficients {u.shape}, basis {v.shape}")
    if u.shape[0] != M * N or v.shape[1] != schedule.num_offsets:
        raise ValueError(
            f"coefficients {u.shape} x basis {v.shape} do not form "
            f"{M}x{N} voxels at {schedule.num_offsets} offsets"
        )
    return ZSpectrumVolume(M, N, schedule, u @ v)


def threshold_truncation(decomp: SubspaceDecomposition) -> np.ndarray:
    """Rank truncation: keeping only K coefficient channels is the denoising."""
    return decomp.coefficients


def threshold_median(
    coefficients: np.ndarray, M: int, N: int, kernel: int = 3
) -> np.ndarray:
    """Median-filter each coefficient channel as an M x N image (reflect
    boundary, square kernel of odd size)."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 3, got {kernel}")
    u = np.asarray(coefficients, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != M * N:
        raise ValueError(f"coefficients {u.shape} do not match {M}x{N} voxels")
    r = kernel // 2
    out = np.empty_like(u)
    for k in range(u.shape[1]):
        img = np.pad(u[:, k].reshape(M, N), r, mode="symmetric")
        win = sliding_window_view(img, (kernel, kernel))
        out[:, k] = np.median(win, axis=(2, 3)).ravel()
    return out


def write_decomposition(decomp: SubspaceDecomposition, path) -> None:
    """Write a decomposition checkpoint in CSTD format (little-endian)."""
    MN = decomp.coefficients.shape[0]
    with open(path, "wb") as f:
        f.write(CSTD_MAGIC)
        f.write(struct.pack("<IIII", CSTD_VERSION, decomp.K, decomp.C, MN))
        f.write(np.ascontiguousarray(decomp.basis, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(decomp.singular_values, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(decomp.coefficients, dtype="<f8").tobytes())


def read_decomposition(path) -> SubspaceDecomposition:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise ValueError(f"truncated CSTD header: {len(blob)} bytes")
    if blob[:4] != CSTD_MAGIC:
        raise ValueError(f"bad magic {blob[:4]!r}, expected {CSTD_MAGIC!r}")
    version, K, C, MN = struct.unpack("<IIII", blob[4:20])
    if version != CSTD_VERSION:
        raise ValueError(f"unsupported CSTD version {version}")
    expect = 20 + 8 * (K * C + K + MN * K)
    if len(blob) != expect:
        raise ValueError(f"CSTD payload length {len(blob)} != expected {expect}")
    off = 20
    basis = np.frombuffer(blob, "<f8", K * C, off).reshape(K, C)
    off += 8 * K * C
    sv = np.frombuffer(blob, "<f8", K, off)
    off += 8 * K
    coeff = np.frombuffer(blob, "<f8", MN * K, off).reshape(MN, K)
    return SubspaceDecomposition(basis=basis, coefficients=coeff, singular_values=sv)
