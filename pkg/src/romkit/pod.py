"""Truncated POD basis from displacement snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, ShapeError, ValidationError
from .numerics import thin_svd
from .snapshots import SnapshotSet

__all__ = [
    "PodBasis",
    "ric_from_singular_values",
    "truncation_rank",
    "ric_curve",
    "build_basis",
    "build_basis_from_matrix",
    "project",
    "reconstruct",
    "projection_error",
]

DEFAULT_EPS = 1e-6
DEFAULT_MAX_RANK = 20


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Leading left singular vectors of a snapshot matrix.

    ``singular_values`` holds the full spectrum of the source matrix (empty
    for a basis restored from a ROM record, where only the modes are kept).
    """

    modes: np.ndarray
    singular_values: np.ndarray
    eps: float
    source: str = ""

    @property
    def rank(self) -> int:
        return self.modes.shape[1]

    @property
    def n_dofs(self) -> int:
        return self.modes.shape[0]

    def ric(self) -> float:
        """Energy fraction neglected at this basis' rank."""
        if self.singular_values.size == 0:
            return float("nan")
        return float(ric_from_singular_values(self.singular_values)[self.rank])


def ric_from_singular_values(s) -> np.ndarray:
    """``RIC(K)`` for ``K = 0..r`` (``RIC(0) = 1``, ``RIC(r) = 0``).

    Tail sums are accumulated from the smallest singular value upward so
    that tiny tails are not swamped by cancellation against the total.
    """
    s2 = np.asarray(s, dtype=float) ** 2
    total = s2.sum()
    if total == 0.0:
        raise DegenerateDataError("snapshot matrix is identically zero")
    tail = np.concatenate([np.cumsum(s2[::-1])[::-1], [0.0]])
    return tail / total


def truncation_rank(s, eps: float) -> int:
    """Smallest ``K >= 1`` with ``RIC(K) <= eps``."""
    ric = ric_from_singular_values(s)
    return int(np.flatnonzero(ric[1:] <= eps)[0]) + 1


def ric_curve(s: SnapshotSet) -> list[tuple[int, float]]:
    """``[(K, RIC(K)), ...]`` for ``K = 1..min(d, N)`` on the displacement snapshots."""
    sv = thin_svd(s.displacements).singular_values
    ric = ric_from_singular_values(sv)
    return [(k, float(ric[k])) for k in range(1, sv.size + 1)]


def build_basis_from_matrix(S, eps: float = DEFAULT_EPS, max_rank: int = DEFAULT_MAX_RANK,
                            source: str = "") -> PodBasis:
    if not 0.0 < eps < 1.0:
        raise ValidationError(f"must lie in (0, 1), got {eps}", "eps")
    if max_rank < 1:
        raise ValidationError(f"must be >= 1, got {max_rank}", "max_rank")
    S = np.asarray(S, dtype=float)
    if not np.any(S):
        raise DegenerateDataError("snapshot matrix is identically zero")
    svd = thin_svd(S)
    K = min(truncation_rank(svd.singular_values, eps), max_rank)
    Q = np.ascontiguousarray(svd.U[:, :K])
    Q.setflags(write=False)
    return PodBasis(Q, svd.singular_values, float(eps), source)


def build_basis(s: SnapshotSet, eps: float = DEFAULT_EPS,
                max_rank: int = DEFAULT_MAX_RANK) -> PodBasis:
    """POD basis of the displacement snapshot matrix.

    The rank is the smallest ``K`` whose neglected energy is at most ``eps``,
    capped at ``max_rank``.  The same basis is used for velocities.
    """
    source = f"ca={s.theta.ca:g},ratio={s.theta.ratio:g}"
    return build_basis_from_matrix(s.displacements, eps, max_rank, source)


def _check_len(basis: PodBasis, v: np.ndarray, axis_len: int, name: str):
    if v.shape[0] != axis_len:
        raise ShapeError(f"expected leading dimension {axis_len}, got {v.shape}", name)


def project(basis: PodBasis, field) -> np.ndarray:
    """Reduced coordinates ``Q^T field`` (vector or column stack)."""
    field = np.asarray(field, dtype=float)
    _check_len(basis, field, basis.n_dofs, "field")
    return basis.modes.T @ field


def reconstruct(basis: PodBasis, reduced) -> np.ndarray:
    """Full field ``Q reduced`` (vector or column stack)."""
    reduced = np.asarray(reduced, dtype=float)
    _check_len(basis, reduced, basis.rank, "reduced")
    return basis.modes @ reduced


def projection_error(basis: PodBasis, S) -> float:
    """``||S - Q Q^T S||_F^2 / ||S||_F^2``; used as a velocity diagnostic."""
    S = np.asarray(S, dtype=float)
    total = np.sum(S * S)
    if total == 0.0:
        return 0.0
    R = S - basis.modes @ (basis.modes.T @ S)
    return float(np.sum(R * R) / total)
