"""Synthetic full-order generators used as ground truth.

Two families are provided:

* :class:`LinearOracle` -- reduced linear dynamics ``beta' = A_ref beta``
  embedded in node space by an orthonormal lift, sampled exactly.
* :class:`ToyCapsule` -- a nonlinear point cloud that relaxes towards a
  steady, translating shape.  It is a verification oracle with the same
  data layout as a capsule simulation, not a physical model.  Nodes obey
  ``x' = v_inf e_z + F(x)`` with a contractive ``F`` vanishing at the target
  shape, integrated with the two-stage Ralston scheme.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .dmd import ReducedData, identify_plain_backward
from .errors import ValidationError
from .numerics import matrix_exponential
from .snapshots import ParamCouple, SnapshotSet

__all__ = [
    "LinearOracle",
    "ToyCapsule",
    "random_orthonormal",
    "random_spectrum_matrix",
    "make_linear_oracle",
    "generate_linear",
    "generate_toy_capsule",
    "fibonacci_sphere",
    "ralston_step",
    "ralston_integrate",
    "identify_backward_oracle",
    "toy_capsule_grid",
    "timed_toy_capsule",
    "regenerate",
]

SPECTRA = ("stable", "center", "mixed")


def random_orthonormal(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``n x k`` matrix with orthonormal columns from Householder-QR of a Gaussian."""
    G = rng.standard_normal((n, k))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


def random_spectrum_matrix(k: int, kind: str, rng: np.random.Generator,
                           rate_range=(0.1, 1.0), freq_range=(0.2, 2.0)) -> np.ndarray:
    """Real ``k x k`` matrix ``O B O^T`` with a prescribed spectrum type.

    ``B`` is block diagonal with 2x2 rotation-decay blocks ``[[a, b], [-b, a]]``
    and, for odd ``k``, one real eigenvalue.  ``stable`` uses ``a < 0``,
    ``center`` uses ``a = 0`` (odd ``k`` adds a zero eigenvalue), ``mixed``
    alternates the two.
    """
    if kind not in SPECTRA:
        raise ValidationError(f"expected one of {SPECTRA}, got {kind!r}", "spectrum")
    B = np.zeros((k, k))
    n_pairs = k // 2
    for p in range(n_pairs):
        centre = kind == "center" or (kind == "mixed" and p % 2 == 1)
        a = 0.0 if centre else -rng.uniform(*rate_range)
        b = rng.uniform(*freq_range)
        i = 2 * p
        B[i:i + 2, i:i + 2] = [[a, b], [-b, a]]
    if k % 2:
        B[-1, -1] = 0.0 if kind == "center" else -rng.uniform(*rate_range)
    O = random_orthonormal(k, k, rng)
    return O @ B @ O.T


@dataclass(frozen=True, eq=False)
class LinearOracle:
    a_ref: np.ndarray
    lift: np.ndarray
    beta0: np.ndarray
    dt: float
    n_snapshots: int
    theta: ParamCouple = field(default_factory=lambda: ParamCouple(1.0, 1.0))
    ref_length: float = 1.0
    seed: int | None = None
    config: dict = field(default_factory=dict)  # arguments of make_linear_oracle, if used

    def __post_init__(self):
        A = np.asarray(self.a_ref, dtype=float)
        L = np.asarray(self.lift, dtype=float)
        K = A.shape[0]
        if A.shape != (K, K) or not np.all(np.isfinite(A)):
            raise ValidationError("must be a finite square matrix", "a_ref")
        if L.ndim != 2 or L.shape[1] != K or L.shape[0] % 3:
            raise ValidationError(f"expected (3n, {K}), got {L.shape}", "lift")
        if np.linalg.norm(L.T @ L - np.eye(K)) > 1e-10:
            raise ValidationError("columns are not orthonormal", "lift")
        if np.shape(self.beta0) != (K,):
            raise ValidationError(f"expected ({K},)", "beta0")


def make_linear_oracle(k: int = 10, d: int = 300, n_snapshots: int = 250,
                       dt: float = 0.04, spectrum: str = "stable",
                       seed: int = 1, **kw) -> LinearOracle:
    """Random oracle; ``d`` is the number of degrees of freedom (multiple of 3)."""
    if d % 3:
        raise ValidationError(f"must be a multiple of 3, got {d}", "d")
    rng = np.random.default_rng(seed)
    A = random_spectrum_matrix(k, spectrum, rng, **kw)
    lift = random_orthonormal(d, k, rng)
    beta0 = rng.standard_normal(k)
    config = dict(k=k, d=d, n_snapshots=n_snapshots, dt=dt, spectrum=spectrum, seed=seed, **kw)
    return LinearOracle(A, lift, beta0, dt, n_snapshots, seed=seed, config=config)


def _integrated_flow(A: np.ndarray, t: float, beta0: np.ndarray) -> np.ndarray:
    """``int_0^t exp(A s) beta0 ds``."""
    if np.linalg.cond(A) < 1e8:
        return np.linalg.solve(A, matrix_exponential(A, t) @ beta0 - beta0)
    val, _ = quad_vec(lambda s: matrix_exponential(A, s) @ beta0, 0.0, t,
                      epsabs=1e-13, epsrel=1e-13)
    return val


def generate_linear(oracle: LinearOracle) -> SnapshotSet:
    """Exact samples ``v^n = L exp(A n dt) b0`` and ``u^n = L int_0^{t_n} exp(A s) b0 ds``."""
    A, L, b0 = np.asarray(oracle.a_ref), np.asarray(oracle.lift), np.asarray(oracle.beta0)
    N, dt = oracle.n_snapshots, oracle.dt
    betas = np.empty((A.shape[0], N))
    alphas = np.empty_like(betas)
    for n in range(1, N + 1):
        t = n * dt
        betas[:, n - 1] = matrix_exponential(A, t) @ b0
        alphas[:, n - 1] = _integrated_flow(A, t, b0)
    d = L.shape[0]
    meta = {"frame": "lab", "velocity_source": "exact",
            "generator": {"name": "linear", "seed": oracle.seed, **oracle.config}}
    return SnapshotSet(oracle.theta, dt, oracle.ref_length, np.zeros(d), L @ alphas,
                       L @ betas, meta)


# -- toy capsule -----------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the sphere (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def ralston_step(phi, u, v, dt):
    """One step of the two-stage Ralston scheme; returns ``(u_next, v_next)``."""
    u_mid = u + (2.0 / 3.0) * dt * v
    v_mid = phi(u_mid)
    u_next = u + dt * (0.25 * v + 0.75 * v_mid)
    return u_next, phi(u_next)


def ralston_integrate(phi, u0, dt: float, steps: int, every: int = 1):
    """Integrate ``u' = phi(u)``; returns ``(U, V)`` sampled every ``every`` steps.

    Samples are taken after steps ``every, 2*every, ...`` so the initial state
    is not included.
    """
    u = np.array(u0, dtype=float)
    v = phi(u)
    U, V = [], []
    for n in range(1, steps + 1):
        u, v = ralston_step(phi, u, v, dt)
        if n % every == 0:
            U.append(u)
            V.append(v)
    return np.array(U), np.array(V)


@dataclass(frozen=True)
class ToyCapsule:
    """Configuration of the nonlinear toy capsule.

    The initial shape is a sphere of radius ``ratio * ref_length``.  Each
    node's deviation from the steady shape relaxes at a position-dependent
    rate while swirling about the flow axis at a position-dependent
    frequency, which gives the transient a rich modal content.  The target
    shape offset and the translation speed are affine in ``(ca, ratio)``;
    rates and swirl do not depend on the parameters, so with
    ``nonlinearity = 0`` the whole trajectory is affine in ``(ca, ratio)``.

    This is a verification oracle, not a physical capsule model.
    """

    n_nodes: int = 2562
    n_snapshots: int = 250
    dt: float = 0.04
    ca: float = 0.17
    ratio: float = 0.8
    ref_length: float = 1.0
    amplitude: float = 0.06
    rate: float = 1.0
    rate_spread: float = 0.5
    swirl: float = 3.0
    nonlinearity: float = 2.0
    speed: float = 1.0
    speed_slope: float = -0.3
    dt_fom: float = 1e-3
    seed: int = 1

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_snapshots < 1:
            raise ValidationError("n_nodes and n_snapshots must be >= 1")
        for name in ("dt", "ref_length", "rate", "dt_fom"):
            if not getattr(self, name) > 0:
                raise ValidationError("must be > 0", name)
        if not 0 <= self.rate_spread < 1:
            raise ValidationError("must lie in [0, 1)", "rate_spread")
        if not math.isfinite(self.swirl):
            raise ValidationError("must be finite", "swirl")
        if self.nonlinearity < 0:
            raise ValidationError("must be >= 0", "nonlinearity")
        ParamCouple(self.ca, self.ratio)

    @property
    def theta(self) -> ParamCouple:
        return ParamCouple(self.ca, self.ratio)

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.dt / self.dt_fom)))

    @property
    def translation_speed(self) -> float:
        return self.speed + self.speed_slope * self.ratio

    def unit_nodes(self) -> np.ndarray:
        return fibonacci_sphere(self.n_nodes)

    def rates(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        x, y, z = self.unit_nodes().T
        jitter = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, self.n_nodes)
        # |0.6 z + 0.4 x y| <= 0.8, so rates stay positive for rate_spread < 1
        return self.rate * (1.0 + self.rate_spread * (0.6 * z + 0.4 * x * y)) * jitter

    def swirl_rates(self) -> np.ndarray:
        """Angular frequency of each node's swirl about the z axis."""
        x, _, z = self.unit_nodes().T
        return self.swirl * (0.3 + z + 0.6 * x)

    def target_offset(self) -> np.ndarray:
        """Zero-mean steady displacement relative to the centroid, ``(n, 3)``."""
        p = self.unit_nodes()
        x, y, z = p.T
        radial = -0.6 * z + 0.5 * z * z - 0.3 * z ** 3
        g = np.column_stack([x * radial, y * radial,
                             0.8 * (z * z - 1.0 / 3.0) - 0.4 * (1.0 - z) ** 2])
        g -= g.mean(axis=0)
        scale = self.amplitude * (self.ca + 0.5 * self.ratio) * self.ref_length
        return scale * g

    def stability_cap(self) -> float:
        """Largest stable FOM step for the Ralston scheme on the stiffest node."""
        g = self.target_offset()
        e2 = np.max(np.sum(g * g, axis=1)) / self.ref_length ** 2
        decay = np.max(self.rates()) * (1.0 + 3.0 * self.nonlinearity * e2)
        return 2.0 / math.hypot(decay, np.max(np.abs(self.swirl_rates())))

    def velocity_field(self):
        """``phi(u)``: node velocities as a function of flat displacements."""
        k = self.rates()[:, None]
        om = self.swirl_rates()
        g = self.target_offset()
        gamma = self.nonlinearity / self.ref_length ** 2
        drift = np.array([0.0, 0.0, self.translation_speed])

        def phi(u):
            U = u.reshape(-1, 3)
            e = U - U.mean(axis=0) - g
            F = -k * e
            F[:, 0] += om * e[:, 1]
            F[:, 1] -= om * e[:, 0]
            if gamma:
                F *= 1.0 + gamma * np.einsum("ij,ij->i", e, e)[:, None]
            return (F + drift).ravel()

        return phi


def generate_toy_capsule(cfg: ToyCapsule) -> SnapshotSet:
    """Integrate the toy capsule and return ``n_snapshots`` snapshots at spacing ``dt``."""
    m = cfg.substeps
    h = cfg.dt / m
    cap = cfg.stability_cap()
    if h >= cap:
        raise ValidationError(
            f"FOM step {h:g} exceeds the stability cap {cap:g}; use dt_fom <= {0.5 * cap:.3g}",
            "dt_fom")
    X = (cfg.ratio * cfg.ref_length * cfg.unit_nodes()).ravel()
    U, V = ralston_integrate(cfg.velocity_field(), np.zeros(X.size), h,
                             m * cfg.n_snapshots, every=m)
    meta = {"frame": "lab", "velocity_source": "fom",
            "generator": {"name": "toy_capsule", **asdict(cfg)}}
    return SnapshotSet(cfg.theta, cfg.dt, cfg.ref_length, X, U.T, V.T, meta)


def timed_toy_capsule(cfg: ToyCapsule) -> tuple[SnapshotSet, float]:
    t0 = time.perf_counter()
    s = generate_toy_capsule(cfg)
    return s, time.perf_counter() - t0


def regenerate(metadata: dict) -> tuple[SnapshotSet, float]:
    """Re-run the generator recorded in snapshot metadata; returns ``(data, seconds)``.

    Raises :class:`ValidationError` when the metadata does not describe a
    reproducible generator run.
    """
    gen = dict(metadata.get("generator") or {})
    name = gen.pop("name", None)
    t0 = time.perf_counter()
    if name == "toy_capsule":
        s = generate_toy_capsule(ToyCapsule(**gen))
    elif name == "linear" and "k" in gen:
        gen = {k: (tuple(v) if isinstance(v, list) else v) for k, v in gen.items()}
        s = generate_linear(make_linear_oracle(**gen))
    else:
        raise ValidationError("snapshot metadata does not record a reproducible generator",
                              "generator")
    return s, time.perf_counter() - t0


def toy_capsule_grid(cas, ratios, **kw) -> list[ToyCapsule]:
    """Configurations on the tensor grid ``cas x ratios`` (ca varies fastest)."""
    return [ToyCapsule(ca=float(c), ratio=float(r), **kw) for r in ratios for c in cas]


def identify_backward_oracle(data: ReducedData) -> np.ndarray:
    """Backward-difference identification, see :func:`romkit.dmd.identify_plain_backward`."""
    return identify_plain_backward(data)
