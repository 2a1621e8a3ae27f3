"""Parameter-space interpolation of training trajectories.

A query couple ``theta`` is located in a triangle of three training couples;
its barycentric weights combine the vertex trajectories column by column and a
reduced model is identified on the combined data.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dmd import DEFAULT_MU, max_workers
from .errors import IncompatibleDataError, NoTriangleError, ValidationError
from .metrics import compare_model
from .model import train
from .pod import DEFAULT_EPS, DEFAULT_MAX_RANK
from .snapshots import (ParamCouple, SnapshotSet, read_snapshot_header,
                        read_snapshot_set)

__all__ = [
    "ParamDatabase",
    "BarycentricQuery",
    "ExtrapolationWarning",
    "find_triangle",
    "barycentric_coords",
    "locate",
    "predict_trajectory",
    "rom_at",
    "resample",
    "sweep",
]

# a candidate triangle is degenerate when |signed area| <= AREA_TOL * diameter^2
AREA_TOL = 1e-12
# barycentric weights below -OUTSIDE_TOL mark an extrapolated query
OUTSIDE_TOL = 1e-12
SNAPSHOT_SUFFIXES = (".romsnap",)


class ExtrapolationWarning(UserWarning):
    """Query couple lies outside its interpolation triangle."""


def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, ParamCouple):
        return theta.as_array()
    a = np.asarray(theta, dtype=float)
    if a.shape != (2,):
        raise ValidationError(f"expected a (ca, ratio) pair, got shape {a.shape}", "theta")
    return a


def resample(s: SnapshotSet, dt: float, n_snapshots: int) -> SnapshotSet:
    """Linear-in-time resampling onto ``t = n dt``, ``n = 1..n_snapshots``.

    The target grid must not extend past ``s.t_end``.  Displacements use the
    implicit ``u(0) = 0``; velocities before the first stored sample are
    extrapolated linearly from the first two columns.
    """
    if not dt > 0 or n_snapshots < 1:
        raise ValidationError("need dt > 0 and n_snapshots >= 1", "resample")
    t_new = dt * np.arange(1, n_snapshots + 1)
    if t_new[-1] > s.t_end * (1 + 1e-12):
        raise ValidationError(f"target grid ends at {t_new[-1]:g} past t_end = {s.t_end:g}",
                              "resample")
    if s.dt == dt and s.n_snapshots >= n_snapshots:
        return s.prefix(n_snapshots)
    t_old = s.times
    t_u = np.concatenate([[0.0], t_old])
    U_old = np.column_stack([np.zeros(s.n_dofs), s.displacements])
    # column interpolation weights, shared by every row
    idx = np.clip(np.searchsorted(t_u, t_new, side="right") - 1, 0, t_u.size - 2)
    w = (t_new - t_u[idx]) / (t_u[idx + 1] - t_u[idx])
    U = U_old[:, idx] * (1 - w) + U_old[:, idx + 1] * w
    if s.n_snapshots == 1:
        V = np.repeat(s.velocities, n_snapshots, axis=1)
    else:
        jdx = np.clip(np.searchsorted(t_old, t_new, side="right") - 1, 0, t_old.size - 2)
        wv = (t_new - t_old[jdx]) / (t_old[jdx + 1] - t_old[jdx])
        V = s.velocities[:, jdx] * (1 - wv) + s.velocities[:, jdx + 1] * wv
    meta = dict(s.metadata, resampled_from={"dt": s.dt, "N": s.n_snapshots})
    return s.replace(dt=dt, displacements=U, velocities=V, metadata=meta)


class ParamDatabase:
    """Training samples over the ``(ca, ratio)`` plane.

    Samples are either in-memory :class:`SnapshotSet` objects or paths that
    are loaded on first use.  All samples must share node count, ``dt`` and
    snapshot count; with ``resample=True`` mismatched ``dt``/``N`` are instead
    linearly resampled onto the first sample's grid (truncated to the
    shortest horizon).

    Parameters
    ----------
    samples : sequence of (ParamCouple, SnapshotSet or path)
    scale : per-axis weights applied to ``(ca, ratio)`` before measuring
        distances.
    """

    def __init__(self, samples, scale=(1.0, 1.0), resample: bool = False):
        scale = np.asarray(scale, dtype=float)
        if scale.shape != (2,) or not np.all(np.isfinite(scale)) or np.any(scale <= 0):
            raise ValidationError(f"must be two positive numbers, got {scale}", "scale")
        self.scale = scale
        self.resample = bool(resample)
        self._thetas: list[ParamCouple] = []
        self._sources: list = []
        self._cache: dict[int, SnapshotSet] = {}
        self._grid: tuple[int, int, float] | None = None  # (n_nodes, N, dt)
        shapes = []
        for theta, src in samples:
            if not isinstance(theta, ParamCouple):
                theta = ParamCouple(*theta)
            if isinstance(src, SnapshotSet):
                shape = (src.n_nodes, src.n_snapshots, src.dt)
                self._cache[len(self._sources)] = src
            else:
                _, n_nodes, N, dt = _peek(src)
                shape = (n_nodes, N, dt)
            self._thetas.append(theta)
            self._sources.append(src)
            shapes.append(shape)
        pts = self.thetas_array()
        if len(pts):
            uniq = {tuple(p) for p in pts.tolist()}
            if len(uniq) != len(pts):
                raise ValidationError("parameter couples must be pairwise distinct", "samples")
        self._check_grid(shapes)

    @classmethod
    def from_directory(cls, directory, **kw) -> "ParamDatabase":
        """Index every ``*.romsnap`` file and CSV bundle under ``directory`` (headers only)."""
        directory = Path(directory)
        if not directory.is_dir():
            raise ValidationError(f"{directory} is not a directory", "db")
        samples = []
        for p in sorted(directory.iterdir()):
            if p.is_file() and p.suffix in SNAPSHOT_SUFFIXES:
                samples.append((_peek(p)[0], p))
            elif p.is_dir() and (p / "meta.csv").is_file():
                samples.append((_peek(p)[0], p))
        return cls(samples, **kw)

    def _check_grid(self, shapes):
        if not shapes:
            return
        nodes = {s[0] for s in shapes}
        if len(nodes) > 1:
            raise IncompatibleDataError(f"samples have different node counts {sorted(nodes)}",
                                        ["n_nodes"])
        n0, N0, dt0 = shapes[0]
        bad = [f for f, vals in (("N", {s[1] for s in shapes}), ("dt", {s[2] for s in shapes}))
               if len(vals) > 1]
        if bad and not self.resample:
            raise IncompatibleDataError(
                "samples do not share a time grid; pass resample=True to interpolate in time",
                bad)
        horizon = min(s[1] * s[2] for s in shapes)
        N = min(N0, int(math.floor(horizon / dt0 * (1 + 1e-12))))
        self._grid = (n0, N, dt0)

    def __len__(self) -> int:
        return len(self._thetas)

    @property
    def thetas(self) -> list[ParamCouple]:
        return list(self._thetas)

    def thetas_array(self) -> np.ndarray:
        return np.array([t.as_array() for t in self._thetas]).reshape(-1, 2)

    def sample(self, i: int) -> SnapshotSet:
        """Snapshot data of sample ``i`` on the common grid (loaded lazily)."""
        s = self._cache.get(i)
        if s is None:
            s = read_snapshot_set(self._sources[i])
            if s.theta != self._thetas[i]:
                raise IncompatibleDataError(f"sample {i} changed on disk", ["theta"])
            self._cache[i] = s
        n_nodes, N, dt = self._grid
        if s.dt != dt or s.n_snapshots != N:
            s = resample(s, dt, N)
            self._cache[i] = s
        return s


def _peek(src):
    """``(theta, n_nodes, N, dt)`` of a snapshot file or CSV bundle."""
    p = Path(src)
    if p.is_dir():
        s = read_snapshot_set(p)
        return s.theta, s.n_nodes, s.n_snapshots, s.dt
    return read_snapshot_header(p)


def _signed_area(a, b, c) -> float:
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _degenerate(a, b, c) -> bool:
    diam2 = max(np.sum((a - b) ** 2), np.sum((b - c) ** 2), np.sum((a - c) ** 2))
    return abs(_signed_area(a, b, c)) <= AREA_TOL * diam2


def find_triangle(db: ParamDatabase, theta) -> tuple[int, int, int]:
    """Indices of the three nearest samples forming a nondegenerate triangle.

    Candidates are visited by ascending (scaled) distance, ties broken by
    sample index.  The two nearest samples are kept and the next candidate
    that is not collinear with them completes the triangle.
    """
    if len(db) < 3:
        raise NoTriangleError(f"need at least 3 samples, database has {len(db)}")
    q = _theta_array(theta) * db.scale
    P = db.thetas_array() * db.scale
    dist = np.sqrt(np.sum((P - q) ** 2, axis=1))
    order = np.lexsort((np.arange(len(dist)), dist))
    i, j = int(order[0]), int(order[1])
    for k in order[2:]:
        if not _degenerate(P[i], P[j], P[k]):
            return i, j, int(k)
    raise NoTriangleError("all samples are collinear; no nondegenerate triangle exists")


def barycentric_coords(vertices, theta) -> np.ndarray:
    """Weights ``lambda`` with ``sum(lambda) = 1`` and ``sum(lambda_i theta_i) = theta``.

    Solved relative to the first vertex by Cramer's rule, so a query equal to
    a vertex returns the corresponding unit vector exactly.  Weights may be
    negative when ``theta`` lies outside the triangle.
    """
    V = np.array([_theta_array(v) for v in vertices])
    if V.shape != (3, 2):
        raise ValidationError("expected three vertices", "vertices")
    q = _theta_array(theta)
    if _degenerate(V[0], V[1], V[2]):
        raise NoTriangleError("triangle is degenerate")
    e2, e3, r = V[1] - V[0], V[2] - V[0], q - V[0]
    det = e2[0] * e3[1] - e2[1] * e3[0]
    l2 = (r[0] * e3[1] - r[1] * e3[0]) / det
    l3 = (e2[0] * r[1] - e2[1] * r[0]) / det
    # "+ 0.0" turns a negative zero into +0.0 so vertex queries give exact unit vectors
    return np.array([1.0 - l2 - l3, l2, l3]) + 0.0


@dataclass(frozen=True)
class BarycentricQuery:
    theta: ParamCouple
    indices: tuple[int, int, int]
    vertices: tuple[ParamCouple, ParamCouple, ParamCouple]
    lambdas: np.ndarray
    extrapolated: bool

    def as_dict(self) -> dict:
        return {"indices": list(self.indices),
                "vertices": [[v.ca, v.ratio] for v in self.vertices],
                "lambdas": self.lambdas.tolist(), "extrapolated": self.extrapolated}


def locate(db: ParamDatabase, theta) -> BarycentricQuery:
    """Triangle and weights for ``theta``; warns when extrapolating."""
    if not isinstance(theta, ParamCouple):
        theta = ParamCouple(*_theta_array(theta))
    idx = find_triangle(db, theta)
    verts = tuple(db.thetas[i] for i in idx)
    lam = barycentric_coords(verts, theta)
    outside = bool(np.any(lam < -OUTSIDE_TOL))
    if outside:
        warnings.warn(f"theta = ({theta.ca:g}, {theta.ratio:g}) lies outside its triangle; "
                      f"weights {np.round(lam, 6).tolist()} extrapolate", ExtrapolationWarning,
                      stacklevel=2)
    return BarycentricQuery(theta, idx, verts, lam, outside)


def _check_compatible(sets: list[SnapshotSet]):
    ref = sets[0]
    mismatched = []
    for name, get in (("n_nodes", lambda s: s.n_nodes), ("N", lambda s: s.n_snapshots),
                      ("dt", lambda s: s.dt), ("ref_length", lambda s: s.ref_length),
                      ("frame", lambda s: s.metadata.get("frame", "lab"))):
        if any(get(s) != get(ref) for s in sets[1:]):
            mismatched.append(name)
    if mismatched:
        raise IncompatibleDataError("vertex trajectories cannot be combined", mismatched)


def predict_trajectory(db: ParamDatabase, theta, query: BarycentricQuery | None = None
                       ) -> SnapshotSet:
    """Barycentric combination of the three vertex trajectories.

    Initial positions, displacements and velocities are combined with the same
    weights.  At a training couple the stored sample is returned unchanged.
    """
    q = query if query is not None else locate(db, theta)
    sets = [db.sample(i) for i in q.indices]
    _check_compatible(sets)
    meta = {"frame": sets[0].metadata.get("frame", "lab"), "velocity_source": "interpolated",
            "interpolation": q.as_dict()}
    for k in range(3):
        if q.lambdas[k] == 1.0 and np.count_nonzero(q.lambdas) == 1:
            return sets[k].replace(metadata=dict(sets[k].metadata, interpolation=q.as_dict()))
    lam = q.lambdas

    def combine(get):
        return lam[0] * get(sets[0]) + lam[1] * get(sets[1]) + lam[2] * get(sets[2])

    return SnapshotSet(q.theta, sets[0].dt, sets[0].ref_length,
                       combine(lambda s: s.initial_positions),
                       combine(lambda s: s.displacements),
                       combine(lambda s: s.velocities), meta)


def rom_at(db: ParamDatabase, theta, eps: float = DEFAULT_EPS,
           max_rank: int = DEFAULT_MAX_RANK, mu: float | None = DEFAULT_MU,
           lcurve=None, return_prediction: bool = False):
    """Reduced model identified on the predicted trajectory at ``theta``.

    With ``return_prediction=True`` returns ``(model, predicted_snapshots)``.
    """
    q = locate(db, theta)
    predicted = predict_trajectory(db, q.theta, q)
    model = train(predicted, eps, max_rank, mu, lcurve).model
    model.metadata["interpolation"] = q.as_dict()
    return (model, predicted) if return_prediction else model


def sweep(db: ParamDatabase, tests, eps: float = DEFAULT_EPS,
          max_rank: int = DEFAULT_MAX_RANK, mu: float | None = DEFAULT_MU,
          lcurve=None) -> list[tuple[float, float, float, float]]:
    """Shape error of interpolated models against held-out trajectories.

    ``tests`` is a sequence of :class:`SnapshotSet` (or paths).  Returns rows
    ``(ca, ratio, t, eps_shape)`` ordered by test then time.
    """
    def one(test):
        s = test if isinstance(test, SnapshotSet) else read_snapshot_set(test)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ExtrapolationWarning)
            model = rom_at(db, s.theta, eps, max_rank, mu, lcurve)
        series = compare_model(s, model)
        return [(s.theta.ca, s.theta.ratio, t, e)
                for t, e in zip(series.times.tolist(), series.eps_shape.tolist())]

    tests = list(tests)
    workers = min(max_workers(), max(len(tests), 1))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, tests))
    else:
        parts = [one(t) for t in tests]
    return [row for part in parts for row in part]
