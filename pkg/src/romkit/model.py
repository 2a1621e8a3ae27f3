"""Reduced-order dynamical system in ``(alpha, beta)``.

    d alpha / dt = beta,        d beta / dt = A_mu beta,

with ``alpha(0) = 0``.  Written as ``w' = AA w`` for ``w = (alpha, beta)`` and
the ``2K x 2K`` block matrix ``AA = [[0, I], [0, A_mu]]``.  Displacements
and positions are recovered as ``u = Q alpha`` and ``x = X + u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dmd import (DEFAULT_MU, IdentifiedModel, LCurve, ReducedData,
                  assemble_reduced_data, identify_tikhonov, lcurve_sweep)
from .errors import ShapeError, ValidationError
from .numerics import eigenvalues, matrix_exponential, solve
from .pod import DEFAULT_EPS, DEFAULT_MAX_RANK, PodBasis, build_basis, projection_error
from .snapshots import ParamCouple, RomRecord, SnapshotSet

__all__ = [
    "RomModel",
    "Trajectory",
    "TrainingResult",
    "DiscreteStability",
    "ContinuousStability",
    "block_matrix",
    "train",
    "propagate_exact",
    "propagate_euler",
    "discrete_stability",
    "continuous_stability",
    "kinetic_energy_rate",
    "reconstruct_shape",
]

log = logging.getLogger(__name__)

INITIAL_VELOCITY_MODES = ("backstep", "first")


@dataclass(frozen=True, eq=False)
class RomModel:
    basis: PodBasis
    a_mu: np.ndarray
    mu: float
    beta0: np.ndarray
    dt_train: float
    initial_positions: np.ndarray
    ref_length: float
    theta: ParamCouple
    alpha0: np.ndarray = field(default=None)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        K = self.basis.rank
        A = np.array(self.a_mu, dtype=float)
        if A.shape != (K, K):
            raise ShapeError(f"expected ({K}, {K}), got {A.shape}", "a_mu")
        b0 = np.array(self.beta0, dtype=float)
        if b0.shape != (K,):
            raise ShapeError(f"expected ({K},), got {b0.shape}", "beta0")
        if self.alpha0 is not None and np.any(np.asarray(self.alpha0) != 0.0):
            raise ValidationError("the reduced displacement starts at zero", "alpha0")
        X = np.array(self.initial_positions, dtype=float)
        if X.shape != (self.basis.n_dofs,):
            raise ShapeError(f"expected ({self.basis.n_dofs},), got {X.shape}",
                             "initial_positions")
        for name, value in (("a_mu", A), ("beta0", b0), ("initial_positions", X)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        a0 = np.zeros(K)
        a0.setflags(write=False)
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "_spectrum", None)

    @property
    def rank(self) -> int:
        return self.basis.rank

    @property
    def modes(self) -> np.ndarray:
        return self.basis.modes

    @property
    def spectrum(self) -> np.ndarray:
        if self._spectrum is None:
            object.__setattr__(self, "_spectrum", eigenvalues(self.a_mu))
        return self._spectrum

    @property
    def symmetric_part(self) -> np.ndarray:
        return 0.5 * (self.a_mu + self.a_mu.T)

    @property
    def w0(self) -> np.ndarray:
        return np.concatenate([self.alpha0, self.beta0])

    def displacements(self, traj: "Trajectory") -> np.ndarray:
        return self.basis.modes @ traj.alphas

    def velocities(self, traj: "Trajectory") -> np.ndarray:
        return self.basis.modes @ traj.betas

    def positions(self, traj: "Trajectory") -> np.ndarray:
        """``X + Q alpha`` for every trajectory column, shape ``(d, M)``."""
        return self.initial_positions[:, None] + self.basis.modes @ traj.alphas

    def to_record(self, metadata: dict | None = None) -> RomRecord:
        meta = dict(self.metadata)
        meta.update(metadata or {})
        return RomRecord(self.theta, self.basis.modes, self.a_mu, self.mu, self.basis.eps,
                         self.dt_train, self.alpha0, self.beta0, self.initial_positions,
                         self.ref_length, meta)

    @classmethod
    def from_record(cls, r: RomRecord) -> "RomModel":
        basis = PodBasis(r.modes, np.empty(0), r.eps, source="record")
        return cls(basis, r.a_mu, r.mu, r.beta0, r.dt, r.initial_positions, r.ref_length,
                   r.theta, r.alpha0, dict(r.metadata))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or (t.size > 1 and np.any(np.diff(t) <= 0)):
            raise ValidationError("times must be a strictly increasing vector", "times")
        if self.alphas.shape != self.betas.shape or self.alphas.shape[1] != t.size:
            raise ShapeError("alphas/betas must be K x len(times)")


def block_matrix(a_mu) -> np.ndarray:
    """``[[0, I], [0, A_mu]]``."""
    A = np.asarray(a_mu, dtype=float)
    K = A.shape[0]
    AA = np.zeros((2 * K, 2 * K))
    AA[:K, K:] = np.eye(K)
    AA[K:, K:] = A
    return AA


def _check_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("expected a non-empty vector of times", "times")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ValidationError("times must be >= 0 and strictly increasing", "times")
    return t


def propagate_exact(m: RomModel, times) -> Trajectory:
    """Exact solution ``w(t) = exp(AA t) w(0)`` sampled at ``times``.

    Consecutive samples are advanced with ``exp(AA h)``; transition matrices
    are cached per increment so a uniform grid costs a single exponential.
    """
    t = _check_times(times)
    AA = block_matrix(m.a_mu)
    K = m.rank
    W = np.empty((2 * K, t.size))
    cache: dict[float, np.ndarray] = {}
    w = m.w0
    prev = 0.0
    for i, ti in enumerate(t):
        h = ti - prev
        if h != 0.0:
            key = float(f"{h:.12e}")
            E = cache.get(key)
            if E is None:
                E = cache[key] = matrix_exponential(AA, h)
            w = E @ w
        W[:, i] = w
        prev = ti
    return Trajectory(t, W[:K], W[K:])


def propagate_euler(m: RomModel, dt: float, steps: int) -> Trajectory:
    """Forward Euler: ``alpha += dt beta``, ``beta += dt A_mu beta``.

    Returns ``steps + 1`` samples starting at ``t = 0``.
    """
    if not dt > 0:
        raise ValidationError(f"must be > 0, got {dt}", "dt")
    if steps < 0:
        raise ValidationError(f"must be >= 0, got {steps}", "steps")
    K = m.rank
    alphas = np.empty((K, steps + 1))
    betas = np.empty((K, steps + 1))
    a, b = m.alpha0.copy(), m.beta0.copy()
    alphas[:, 0], betas[:, 0] = a, b
    for n in range(steps):
        a = a + dt * b
        b = b + dt * (m.a_mu @ b)
        alphas[:, n + 1], betas[:, n + 1] = a, b
    return Trajectory(dt * np.arange(steps + 1), alphas, betas)


@dataclass(frozen=True)
class DiscreteStability:
    dt: float
    spectral_radius: float
    stable: bool


@dataclass(frozen=True)
class ContinuousStability:
    max_real: float
    min_abs: float
    spectral_norm: float
    stable: bool
    steady_consistent: bool
    symmetric_max: float

    @property
    def dissipative(self) -> bool:
        return self.symmetric_max <= 0.0


def discrete_stability(m: RomModel, dt: float) -> DiscreteStability:
    """Spectral radius of ``I + dt A_mu``; stable when it is at most ``1 + 1e-10``."""
    if not dt > 0:
        raise ValidationError(f"must be > 0, got {dt}", "dt")
    M = np.eye(m.rank) + dt * m.a_mu
    radius = float(np.max(np.abs(eigenvalues(M))))
    return DiscreteStability(dt, radius, radius <= 1.0 + 1e-10)


def continuous_stability(m: RomModel, tol: float = 1e-9,
                         steady_tol: float = 1e-6) -> ContinuousStability:
    spec = m.spectrum
    max_real = float(np.max(spec.real))
    min_abs = float(np.min(np.abs(spec)))
    norm2 = float(np.linalg.norm(m.a_mu, 2))
    sym = float(np.max(eigenvalues(m.symmetric_part).real))
    return ContinuousStability(max_real, min_abs, norm2, max_real <= tol,
                               min_abs <= steady_tol * norm2, sym)


def kinetic_energy_rate(m: RomModel, beta) -> float:
    """``d/dt (|beta|^2 / 2) = beta^T A_sym beta`` with ``A_sym = (A + A^T)/2``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (m.rank,):
        raise ShapeError(f"expected ({m.rank},), got {beta.shape}", "beta")
    return float(beta @ m.symmetric_part @ beta)


def reconstruct_shape(m: RomModel, alpha) -> np.ndarray:
    """Node positions ``X + Q alpha`` as a flat vector."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (m.rank,):
        raise ShapeError(f"expected ({m.rank},), got {alpha.shape}", "alpha")
    return m.initial_positions + m.basis.modes @ alpha


@dataclass(frozen=True, eq=False)
class TrainingResult:
    model: RomModel
    data: ReducedData
    identified: IdentifiedModel
    lcurve: LCurve | None = None
    velocity_ric: float = float("nan")


def initial_velocity(a_mu, beta_first, dt: float, mode: str = "backstep") -> np.ndarray:
    """Reduced velocity at ``t = 0`` from the first stored snapshot (``t = dt``).

    ``backstep`` inverts one step of the fitted forward-difference map,
    ``beta^0 = (I + dt A_mu)^{-1} beta^1``; ``first`` uses ``beta^1`` as is.
    """
    if mode not in INITIAL_VELOCITY_MODES:
        raise ValidationError(f"expected one of {INITIAL_VELOCITY_MODES}", "initial_velocity")
    beta_first = np.asarray(beta_first, dtype=float)
    if mode == "first":
        return beta_first.copy()
    M = np.eye(beta_first.size) + dt * np.asarray(a_mu)
    if np.linalg.cond(M) > 1e12:
        log.warning("I + dt*A_mu is near-singular; using the first snapshot as beta0")
        return beta_first.copy()
    return solve(M, beta_first)


def train(s: SnapshotSet, eps: float = DEFAULT_EPS, max_rank: int = DEFAULT_MAX_RANK,
          mu: float | None = DEFAULT_MU, lcurve: tuple[float, float] | None = None,
          points_per_decade: int = 4, initial: str = "backstep") -> TrainingResult:
    """POD + Tikhonov identification on one snapshot set.

    Pass ``lcurve=(mu_min, mu_max)`` to pick ``mu`` at the L-curve corner
    instead of using a fixed value.
    """
    basis = build_basis(s, eps, max_rank)
    data = assemble_reduced_data(s, basis)
    curve = None
    if lcurve is not None:
        curve = lcurve_sweep(data, lcurve[0], lcurve[1], points_per_decade)
        mu = curve.selected_mu
    if mu is None:
        raise ValidationError("either mu or lcurve bounds are required", "mu")
    ident = identify_tikhonov(data, mu)
    beta0 = initial_velocity(ident.a_mu, data.betas[:, 0], s.dt, initial)
    meta = {"frame": s.metadata.get("frame", "lab"), "initial_velocity": initial}
    model = RomModel(basis, ident.a_mu, mu, beta0, s.dt, s.initial_positions,
                     s.ref_length, s.theta, None, meta)
    object.__setattr__(model, "_spectrum", ident.spectrum)
    return TrainingResult(model, data, ident, curve,
                          projection_error(basis, s.velocities))
