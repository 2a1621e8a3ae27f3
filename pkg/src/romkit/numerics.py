"""Dense real linear algebra used throughout the toolkit.

Thin wrappers around LAPACK (through :mod:`scipy.linalg`) that enforce the
shape/finiteness contracts and translate LAPACK failures into
:class:`~romkit.errors.NumericFailure`.  The QR-based pseudo-inverse is
written out explicitly because the identification step depends on it
avoiding the squared condition number of the normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import NumericFailure, RankDeficiencyError, ShapeError, DataError

__all__ = [
    "SvdResult",
    "thin_svd",
    "qr_pseudo_inverse",
    "normal_equation_pinv",
    "matrix_exponential",
    "eigenvalues",
    "solve",
    "spd_solve",
    "condition_number",
]

RANK_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def rank_bound(self) -> int:
        return self.singular_values.size

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def _as_matrix(M, name="M") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {M.shape}", name)
    bad = ~np.isfinite(M)
    if bad.any():
        raise DataError("non-finite entry", name, np.argwhere(bad)[0])
    return M


def _as_square(M, name="M") -> np.ndarray:
    M = _as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {M.shape}", name)
    return M


def thin_svd(M) -> SvdResult:
    """Economy SVD ``M = U diag(s) V^T`` with ``r = min(d, N)`` columns.

    Falls back from the divide-and-conquer driver to ``gesvd`` before giving
    up, since ``gesdd`` occasionally fails to converge on graded matrices.
    """
    M = _as_matrix(M)
    for driver in ("gesdd", "gesvd"):
        try:
            U, s, Vt = la.svd(M, full_matrices=False, lapack_driver=driver,
                              check_finite=False)
            break
        except la.LinAlgError:
            continue
    else:
        raise NumericFailure("SVD did not converge")
    return SvdResult(U, s, Vt.T)


def qr_pseudo_inverse(X, rank_tol: float = RANK_TOL) -> np.ndarray:
    r"""Pseudo-inverse of a wide, full-row-rank matrix via QR.

    With :math:`X^T = \hat Q R` (economic QR, ``R`` upper triangular
    ``K x K``) the pseudo-inverse is :math:`X^\dagger = \hat Q (R^T)^{-1}`,
    which avoids forming :math:`X X^T` and squaring its condition number.

    Parameters
    ----------
    X : (K, N) array_like
        ``K <= N``, rank ``K``.
    rank_tol : float
        A diagonal entry of ``R`` below ``rank_tol * max|R|`` is treated as
        zero and reported as a rank deficiency.

    Returns
    -------
    (N, K) ndarray
    """
    X = _as_matrix(X, "X")
    K, N = X.shape
    if K > N:
        raise ShapeError(f"QR pseudo-inverse needs rows <= cols, got {X.shape}", "X")
    Qh, R = la.qr(X.T, mode="economic", check_finite=False)
    diag = np.abs(np.diag(R))
    scale = np.max(np.abs(R))
    small = np.flatnonzero(diag <= rank_tol * scale)
    if scale == 0.0 or small.size:
        row = int(small[0]) if small.size else 0
        raise RankDeficiencyError("matrix is not of full row rank", row=row)
    # X^dagger R^T = Qh  <=>  R (X^dagger)^T = Qh^T
    return la.solve_triangular(R, Qh.T, lower=False, check_finite=False).T


def normal_equation_pinv(X) -> np.ndarray:
    """``X^T (X X^T)^{-1}``; kept as an independent cross-check of the QR route."""
    X = _as_matrix(X, "X")
    return la.solve(X @ X.T, X, assume_a="sym").T


def matrix_exponential(M, t: float = 1.0) -> np.ndarray:
    """``exp(M t)`` by scaling-and-squaring Pade (``scipy.linalg.expm``)."""
    M = _as_square(M)
    if t == 0.0:
        return np.eye(M.shape[0])
    E = la.expm(M * t)
    if not np.all(np.isfinite(E)):
        raise NumericFailure("matrix exponential overflowed")
    return E


def eigenvalues(M) -> np.ndarray:
    """Eigenvalues of a real square matrix as a complex vector.

    Symmetric input goes through the symmetric solver so the result is real
    to the last bit; general input uses the Hessenberg-QR path and returns
    conjugate pairs.
    """
    M = _as_square(M)
    try:
        if np.array_equal(M, M.T):
            return la.eigvalsh(M, check_finite=False).astype(complex)
        return la.eigvals(M, check_finite=False)
    except la.LinAlgError as exc:
        raise NumericFailure(f"eigenvalue iteration failed: {exc}") from exc


def solve(A, B) -> np.ndarray:
    A = _as_square(A, "A")
    try:
        return la.solve(A, B, check_finite=False)
    except la.LinAlgError as exc:
        raise RankDeficiencyError(f"singular system: {exc}") from exc


def spd_solve(A, B) -> np.ndarray:
    """Solve ``A Z = B`` for symmetric positive-definite ``A`` (Cholesky)."""
    A = _as_square(A, "A")
    try:
        c = la.cho_factor(A, check_finite=False)
    except la.LinAlgError as exc:
        raise RankDeficiencyError(f"system is not positive definite: {exc}") from exc
    return la.cho_solve(c, B, check_finite=False)


def condition_number(singular_values) -> float:
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or s[-1] == 0.0:
        return float("inf")
    return float(s[0] / s[-1])
