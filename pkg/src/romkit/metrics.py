"""FOM-vs-ROM accuracy measures.

The shape error at time ``t`` is the modified Hausdorff distance (the larger
of the two directed mean nearest-neighbour distances) between the FOM and
ROM node clouds, divided by the reference length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .dmd import DEFAULT_MU, max_workers
from .errors import InsufficientDataError, ShapeError, ValidationError
from .model import RomModel, propagate_exact, train
from .pod import DEFAULT_EPS, DEFAULT_MAX_RANK
from .snapshots import SnapshotSet

__all__ = [
    "as_cloud",
    "directed_mean_distance",
    "modified_hausdorff",
    "modified_hausdorff_bruteforce",
    "hausdorff",
    "ShapeErrorSeries",
    "shape_error_series",
    "compare_model",
    "learning_time_study",
    "steady_state_time",
]

# velocity-stationarity threshold standing in for a surface-area criterion
STEADY_TOL = 1e-4


def as_cloud(points, name="points") -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1 and P.size % 3 == 0:
        P = P.reshape(-1, 3)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (n, 3) point cloud, got {P.shape}", name)
    if not np.all(np.isfinite(P)):
        raise ValidationError("point cloud has non-finite coordinates", name)
    return P


def directed_mean_distance(a, b) -> float:
    """Mean over ``a`` of the distance to the nearest point of ``b``."""
    a, b = as_cloud(a, "a"), as_cloud(b, "b")
    dist, _ = cKDTree(b).query(a, k=1, workers=max_workers())
    return float(np.mean(dist))


def modified_hausdorff(a, b) -> float:
    """``max(mean_a min_b |x - y|, mean_b min_a |x - y|)``."""
    return max(directed_mean_distance(a, b), directed_mean_distance(b, a))


def modified_hausdorff_bruteforce(a, b) -> float:
    """All-pairs version of :func:`modified_hausdorff`, O(n m) memory."""
    D = cdist(as_cloud(a, "a"), as_cloud(b, "b"))
    return float(max(D.min(axis=1).mean(), D.min(axis=0).mean()))


def hausdorff(a, b) -> float:
    """Classical (max-max) Hausdorff distance."""
    a, b = as_cloud(a, "a"), as_cloud(b, "b")
    d_ab, _ = cKDTree(b).query(a, k=1)
    d_ba, _ = cKDTree(a).query(b, k=1)
    return float(max(d_ab.max(), d_ba.max()))


@dataclass(frozen=True)
class ShapeErrorSeries:
    times: np.ndarray
    eps_shape: np.ndarray
    rms_indexed: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.eps_shape))

    @property
    def final(self) -> float:
        return float(self.eps_shape[-1])

    def rows(self):
        return zip(self.times.tolist(), self.eps_shape.tolist(), self.rms_indexed.tolist())


def shape_error_series(fom: SnapshotSet, rom_positions, ref_length: float | None = None,
                       times=None) -> ShapeErrorSeries:
    """Shape error of ROM node positions against every FOM snapshot.

    ``rom_positions`` is ``d x N`` and must be evaluated at the FOM snapshot
    times; pass ``times`` to have that checked.  Alongside the MHD-based
    error the node-indexed RMS distance (also divided by the reference
    length) is reported.
    """
    P = np.asarray(rom_positions, dtype=float)
    if P.shape != fom.displacements.shape:
        raise ShapeError(f"expected {fom.displacements.shape}, got {P.shape}",
                         "rom_positions")
    if times is not None:
        times = np.asarray(times, dtype=float)
        if times.shape != fom.times.shape or not np.allclose(times, fom.times, rtol=0,
                                                             atol=1e-9 * fom.dt):
            raise ValidationError("ROM times do not match the FOM snapshot grid", "times")
    ell = fom.ref_length if ref_length is None else float(ref_length)
    F = fom.initial_positions[:, None] + fom.displacements
    eps = np.empty(fom.n_snapshots)
    rms = np.empty(fom.n_snapshots)
    for j in range(fom.n_snapshots):
        a, b = F[:, j].reshape(-1, 3), P[:, j].reshape(-1, 3)
        eps[j] = modified_hausdorff(a, b) / ell
        rms[j] = math.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))) / ell
    return ShapeErrorSeries(fom.times, eps, rms)


def compare_model(fom: SnapshotSet, model: RomModel) -> ShapeErrorSeries:
    """Propagate ``model`` exactly to the FOM snapshot times and measure the shape error."""
    if model.basis.n_dofs != fom.n_dofs:
        raise ShapeError(f"model has {model.basis.n_dofs} dofs, FOM has {fom.n_dofs}")
    traj = propagate_exact(model, fom.times)
    return shape_error_series(fom, model.positions(traj), fom.ref_length, traj.times)


def learning_time_study(s: SnapshotSet, t_learn_values, eps: float = DEFAULT_EPS,
                        max_rank: int = DEFAULT_MAX_RANK, mu: float = DEFAULT_MU
                        ) -> list[tuple[float, float]]:
    """Train on each snapshot prefix ``t <= T_L`` and report the shape error at the end.

    The ROM is always propagated over the full window of ``s``.
    """
    rows = []
    final = s.n_snapshots
    for T in t_learn_values:
        T = float(T)
        n = int(round(T / s.dt))
        if T <= 0 or n > final or abs(n * s.dt - T) > 1e-9 * max(T, 1.0):
            raise ValidationError(f"T_L = {T} is not a snapshot time within (0, {s.t_end}]",
                                  "t_learn")
        prefix = s.prefix(n)
        try:
            result = train(prefix, eps, max_rank, mu)
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"T_L = {T}: {exc}") from exc
        traj = propagate_exact(result.model, [s.t_end])
        rom = result.model.positions(traj)[:, 0].reshape(-1, 3)
        rows.append((T, modified_hausdorff(s.positions(final), rom) / s.ref_length))
    return rows


def steady_state_time(s: SnapshotSet, tol: float = STEADY_TOL) -> float | None:
    """First snapshot time after which ``|v^{n+1} - v^n| / |v^n| <= tol`` holds throughout.

    Returns ``None`` when the trajectory never settles.
    """
    V = s.velocities
    num = np.linalg.norm(np.diff(V, axis=1), axis=0)
    den = np.linalg.norm(V[:, :-1], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    bad = np.flatnonzero(rel > tol)
    if bad.size == 0:
        return float(s.times[0])
    if bad[-1] + 1 >= rel.size:
        return None
    return float(s.times[bad[-1] + 1])
