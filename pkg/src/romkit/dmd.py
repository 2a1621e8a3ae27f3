"""Identification of the reduced coefficient matrix from velocity snapshots.

Reduced velocities ``beta^n = Q^T v^n`` are stacked into

    X = [beta^1, ..., beta^{N-1}],   Y = [(beta^{n+1} - beta^n) / dt]

and ``A`` is fitted so that ``Y ~ A X`` (forward differences), either by plain
least squares through the QR pseudo-inverse or with the scaled Tikhonov
penalty ``mu ||X||_F^2 ||A||_F^2``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (InsufficientDataError, RankDeficiencyError, ShapeError,
                     ValidationError)
from .numerics import condition_number, eigenvalues, qr_pseudo_inverse, spd_solve
from .pod import PodBasis, project
from .snapshots import SnapshotSet

__all__ = [
    "ReducedData",
    "IdentifiedModel",
    "LCurve",
    "reduced_data_from_betas",
    "assemble_reduced_data",
    "identify_plain",
    "identify_plain_backward",
    "identify_tikhonov",
    "lcurve_sweep",
    "lcurve_corner",
    "time_residual",
    "max_workers",
]

DEFAULT_MU = 1e-9
DEFAULT_LCURVE = (1e-12, 1e-5)
DEFAULT_POINTS_PER_DECADE = 4
# rows of X with relative singular value below this make identification refuse
RANK_TOL = 1e-12
# an L-curve whose largest signed curvature stays below this has no corner
CORNER_MIN_CURVATURE = 1e-2


def max_workers() -> int:
    """Thread cap from ``ROM_THREADS`` (default: CPU count)."""
    value = os.environ.get("ROM_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class ReducedData:
    X: np.ndarray
    Y: np.ndarray
    dt: float
    cond_X: float
    cond_XXt: float
    betas: np.ndarray  # all N reduced velocities, X/Y are built from these

    @property
    def rank(self) -> int:
        return self.X.shape[0]

    @property
    def times(self) -> np.ndarray:
        """Snapshot time of each column of ``X``."""
        return self.dt * np.arange(1, self.X.shape[1] + 1)


def reduced_data_from_betas(betas, dt: float, check_rank: bool = True) -> ReducedData:
    """Build ``X``/``Y`` from a ``K x N`` array of reduced velocities."""
    B = np.asarray(betas, dtype=float)
    if B.ndim != 2:
        raise ShapeError(f"expected a K x N array, got {B.shape}", "betas")
    if not (math.isfinite(dt) and dt > 0):
        raise ValidationError(f"must be > 0, got {dt}", "dt")
    K, N = B.shape
    if N <= K:
        raise InsufficientDataError(
            f"need at least K+1 = {K + 1} snapshots for rank {K}, got {N}")
    X = B[:, :-1].copy()
    Y = np.diff(B, axis=1) / dt
    s = np.linalg.svd(X, compute_uv=False)
    cond = condition_number(s)
    if check_rank and (s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]):
        deficient = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
        raise RankDeficiencyError(
            f"reduced data matrix has numerical rank {deficient} < K = {K}; "
            f"try max_rank <= {max(deficient, 1)}", row=deficient)
    return ReducedData(X, Y, float(dt), cond, cond * cond, B)


def assemble_reduced_data(s: SnapshotSet, basis: PodBasis,
                          check_rank: bool = True) -> ReducedData:
    """Project the velocity snapshots on the basis and form ``X``, ``Y``."""
    if basis.n_dofs != s.n_dofs:
        raise ShapeError(f"basis has {basis.n_dofs} rows, snapshots have {s.n_dofs}")
    if s.n_snapshots <= basis.rank:
        raise InsufficientDataError(
            f"N = {s.n_snapshots} snapshots cannot identify a rank-{basis.rank} model")
    return reduced_data_from_betas(project(basis, s.velocities), s.dt, check_rank)


def identify_plain(data: ReducedData) -> np.ndarray:
    """Unregularized least squares ``A = Y X^+`` with the QR pseudo-inverse."""
    return data.Y @ qr_pseudo_inverse(data.X)


def identify_plain_backward(data: ReducedData) -> np.ndarray:
    """Least squares against the *next* state, ``(b^{n+1}-b^n)/dt ~ A b^{n+1}``.

    Only used to demonstrate that backward differences can turn a stable
    centre into an unstable identified mode.
    """
    Xn = data.betas[:, 1:]
    return data.Y @ qr_pseudo_inverse(Xn)


@dataclass(frozen=True, eq=False)
class IdentifiedModel:
    a_mu: np.ndarray
    mu: float
    residual_fro: float
    norm_fro: float
    spectrum: np.ndarray
    symmetric_part_spectrum: np.ndarray

    @property
    def max_real(self) -> float:
        return float(np.max(self.spectrum.real))

    @property
    def min_abs(self) -> float:
        return float(np.min(np.abs(self.spectrum)))


def _relative_residual(data: ReducedData, A: np.ndarray) -> float:
    ny = np.linalg.norm(data.Y)
    r = np.linalg.norm(data.Y - A @ data.X)
    if ny == 0.0:
        return 0.0 if r == 0.0 else math.inf
    return float(r / ny)


def _tikhonov_matrix(data: ReducedData, mu: float) -> np.ndarray:
    X, Y = data.X, data.Y
    G = X @ X.T
    G[np.diag_indices_from(G)] += mu * np.sum(X * X)
    # (X X^T + mu ||X||^2 I) A^T = X Y^T ; G is symmetric so no explicit inverse
    return spd_solve(G, X @ Y.T).T


def identify_tikhonov(data: ReducedData, mu: float = DEFAULT_MU,
                      spectra: bool = True) -> IdentifiedModel:
    """Tikhonov-regularized identification.

    ``A_mu = Y X^T (X X^T + mu ||X||_F^2 I)^{-1}``.  With ``mu = 0`` this is
    the normal-equation form of :func:`identify_plain` and requires ``X`` to
    have full row rank.
    """
    mu = float(mu)
    if not math.isfinite(mu) or mu < 0:
        raise ValidationError(f"must be finite and >= 0, got {mu}", "mu")
    A = _tikhonov_matrix(data, mu)
    if spectra:
        spec = eigenvalues(A)
        sym = eigenvalues(0.5 * (A + A.T))
    else:
        spec = sym = np.empty(0, dtype=complex)
    return IdentifiedModel(A, mu, _relative_residual(data, A),
                           float(np.linalg.norm(A)), spec, sym)


@dataclass(frozen=True)
class LCurve:
    mus: np.ndarray
    residuals: np.ndarray
    norms: np.ndarray
    curvature: np.ndarray
    selected_mu: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.mus.tolist(), self.residuals.tolist(), self.norms.tolist()))

    @property
    def selected_index(self) -> int:
        return int(np.flatnonzero(self.mus == self.selected_mu)[0])


def _signed_curvature(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Curvature of the circle through consecutive point triples (0 at the ends)."""
    kappa = np.zeros(x.size)
    for i in range(1, x.size - 1):
        ax, ay = x[i] - x[i - 1], y[i] - y[i - 1]
        bx, by = x[i + 1] - x[i], y[i + 1] - y[i]
        cx, cy = x[i + 1] - x[i - 1], y[i + 1] - y[i - 1]
        denom = math.hypot(ax, ay) * math.hypot(bx, by) * math.hypot(cx, cy)
        if denom > 0.0:
            kappa[i] = 2.0 * (ax * by - ay * bx) / denom
    return kappa


def lcurve_corner(mus, residuals, norms) -> tuple[float, np.ndarray]:
    """Select the maximum-curvature point of the log-log L-curve.

    Returns ``(selected_mu, curvature)``.  When no interior point bends by at
    least :data:`CORNER_MIN_CURVATURE` the curve has no corner and the
    smallest ``mu`` is returned; ties go to the smaller ``mu``.
    """
    mus = np.asarray(mus, dtype=float)
    with np.errstate(divide="ignore"):
        x = np.log10(np.maximum(residuals, np.finfo(float).tiny))
        y = np.log10(np.maximum(norms, np.finfo(float).tiny))
    kappa = _signed_curvature(x, y)
    best = int(np.argmax(kappa))  # first maximum -> smallest mu on ties
    if kappa[best] < CORNER_MIN_CURVATURE:
        best = 0
    return float(mus[best]), kappa


def lcurve_sweep(data: ReducedData, mu_min: float = DEFAULT_LCURVE[0],
                 mu_max: float = DEFAULT_LCURVE[1],
                 points_per_decade: int = DEFAULT_POINTS_PER_DECADE) -> LCurve:
    """Evaluate residual and solution norm on a log grid of ``mu``.

    The grid holds ``points_per_decade`` points per decade and includes both
    end points.
    """
    if not (0.0 < mu_min < mu_max):
        raise ValidationError(f"need 0 < mu_min < mu_max, got {mu_min}, {mu_max}", "lcurve")
    if points_per_decade < 1:
        raise ValidationError("must be >= 1", "points_per_decade")
    decades = math.log10(mu_max) - math.log10(mu_min)
    n = int(round(decades * points_per_decade)) + 1
    if n < 3:
        raise ValidationError(f"sweep has {n} points, need at least 3", "lcurve")
    mus = np.logspace(math.log10(mu_min), math.log10(mu_max), n)

    def point(mu):
        A = _tikhonov_matrix(data, mu)
        return _relative_residual(data, A), float(np.linalg.norm(A))

    workers = min(max_workers(), n)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = list(pool.map(point, mus))
    else:
        values = [point(mu) for mu in mus]
    residuals = np.array([v[0] for v in values])
    norms = np.array([v[1] for v in values])
    selected, kappa = lcurve_corner(mus, residuals, norms)
    return LCurve(mus, residuals, norms, kappa, selected)


def time_residual(data: ReducedData, model) -> tuple[np.ndarray, np.ndarray]:
    """Relative 1-norm residual per snapshot column.

    ``R(j) = ||A X_j - Y_j||_1 / ||Y_j||_1`` reported against ``t_j = j dt``.
    Columns with ``Y_j = 0`` give 0 when the numerator is below 1e-14 and
    ``inf`` otherwise.
    """
    A = model.a_mu if hasattr(model, "a_mu") else np.asarray(model, dtype=float)
    if A.shape != (data.rank, data.rank):
        raise ShapeError(f"model is {A.shape}, data rank is {data.rank}")
    num = np.abs(A @ data.X - data.Y).sum(axis=0)
    den = np.abs(data.Y).sum(axis=0)
    R = np.empty_like(num)
    zero = den == 0.0
    R[~zero] = num[~zero] / den[~zero]
    R[zero] = np.where(num[zero] <= 1e-14, 0.0, math.inf)
    return data.times, R

