"""Snapshot trajectories, ROM records and their on-disk formats.

Two little-endian binary formats are defined here.

``ROMSNAP1`` (one parameter couple's trajectory)::

    magic "ROMSNAP1" | u32 version=1 | u64 n_nodes | u64 N | f64 dt | f64 ca
    | f64 ratio | f64 ref_length | f64 x 3n initial positions
    | f64 x 3n*N displacements (column-major) | f64 x 3n*N velocities (column-major)
    [ | "META" | u32 length | UTF-8 JSON metadata ]

``ROMREC1`` (an identified reduced model)::

    magic "ROMREC1\\0" | u32 version=1 | u64 n_nodes | u64 K | f64 dt | f64 ca
    | f64 ratio | f64 ref_length | f64 mu | f64 eps | f64 x 3n*K modes
    | f64 x K*K A_mu | f64 x K alpha0 | f64 x K beta0 | f64 x 3n initial positions
    [ | "META" | u32 length | UTF-8 JSON metadata ]

The optional metadata trailer carries the reference-frame flag, the velocity
source and generator provenance.  JSON is written with sorted keys so that
identical input always produces identical bytes.

A CSV bundle is a directory holding ``meta.csv`` (``key,value`` rows),
``X.csv``, ``U.csv`` and ``V.csv`` (one snapshot per column, no header).
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, FormatError, RomIOError, ShapeError, ValidationError

__all__ = [
    "ParamCouple",
    "SnapshotSet",
    "RomRecord",
    "SnapshotWarning",
    "read_snapshot_set",
    "write_snapshot_set",
    "snapshot_bytes",
    "read_snapshot_header",
    "read_csv_bundle",
    "write_csv_bundle",
    "read_rom_record",
    "write_rom_record",
    "rom_record_bytes",
    "rom_record_reals",
    "rom_record_size",
    "snapshot_size",
    "derive_velocities",
]

SNAP_MAGIC = b"ROMSNAP1"
REC_MAGIC = b"ROMREC1\x00"
META_MAGIC = b"META"
VERSION = 1
FRAMES = ("lab", "centroid")

_SNAP_HEADER = struct.Struct("<8sIQQdddd")
_REC_HEADER = struct.Struct("<8sIQQdddddd")
_F8 = np.dtype("<f8")

# relative mismatch between finite-differenced displacements and the trapezoidal
# average of stored velocities above which a load emits a SnapshotWarning
KINEMATIC_WARN_TOL = 0.05


class SnapshotWarning(UserWarning):
    """Data-quality issue that does not invalidate a snapshot set."""


@dataclass(frozen=True)
class ParamCouple:
    """Parameter couple ``(Ca, a/l)``."""

    ca: float
    ratio: float

    def __post_init__(self):
        for name in ("ca", "ratio"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0.0:
                raise ValidationError(f"must be finite and > 0, got {value}", name)
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.ca, self.ratio])


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="F", copy=True)
    a.setflags(write=False)
    return a


def _check_finite(a: np.ndarray, name: str):
    bad = ~np.isfinite(a)
    if bad.any():
        raise DataError("non-finite entry", name, np.argwhere(bad)[0])


def _check_positive(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValidationError(f"must be finite and > 0, got {value}", name)
    return value


def _check_metadata(metadata: dict) -> dict:
    metadata = dict(metadata or {})
    frame = metadata.setdefault("frame", "lab")
    if frame not in FRAMES:
        raise ValidationError(f"expected one of {FRAMES}, got {frame!r}", "frame")
    return metadata


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """Trajectory data for one parameter couple.

    Column ``n-1`` of ``displacements``/``velocities`` holds the field at
    ``t = n * dt`` for ``n = 1..N``; the displacement at ``t = 0`` is zero and
    is not stored.  Arrays are copied and made read-only on construction.
    """

    theta: ParamCouple
    dt: float
    ref_length: float
    initial_positions: np.ndarray
    displacements: np.ndarray
    velocities: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.theta, ParamCouple):
            raise ValidationError("expected a ParamCouple", "theta")
        object.__setattr__(self, "dt", _check_positive(self.dt, "dt"))
        object.__setattr__(self, "ref_length", _check_positive(self.ref_length, "ref_length"))
        X = np.asarray(self.initial_positions, dtype=float)
        U = np.asarray(self.displacements, dtype=float)
        V = np.asarray(self.velocities, dtype=float)
        if X.ndim != 1 or X.size == 0 or X.size % 3:
            raise ShapeError(f"length must be a positive multiple of 3, got shape {X.shape}",
                             "initial_positions")
        if U.ndim != 2 or U.shape[0] != X.size or U.shape[1] < 1:
            raise ShapeError(f"expected ({X.size}, N>=1), got {U.shape}", "displacements")
        if V.shape != U.shape:
            raise ShapeError(f"expected {U.shape}, got {V.shape}", "velocities")
        _check_finite(X.reshape(-1, 1), "initial_positions")
        _check_finite(U, "displacements")
        _check_finite(V, "velocities")
        object.__setattr__(self, "initial_positions", _freeze(X))
        object.__setattr__(self, "displacements", _freeze(U))
        object.__setattr__(self, "velocities", _freeze(V))
        object.__setattr__(self, "metadata", _check_metadata(self.metadata))

    @property
    def n_dofs(self) -> int:
        return self.initial_positions.size

    @property
    def n_nodes(self) -> int:
        return self.initial_positions.size // 3

    @property
    def n_snapshots(self) -> int:
        return self.displacements.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_snapshots + 1)

    @property
    def t_end(self) -> float:
        return self.dt * self.n_snapshots

    def positions(self, n: int) -> np.ndarray:
        """Node coordinates ``X + u^n`` as an ``(n_nodes, 3)`` array (1-based ``n``)."""
        return (self.initial_positions + self.displacements[:, n - 1]).reshape(-1, 3)

    def prefix(self, n: int) -> "SnapshotSet":
        """The first ``n`` snapshots."""
        if not 1 <= n <= self.n_snapshots:
            raise ValidationError(f"prefix length must be in [1, {self.n_snapshots}], got {n}")
        return self.replace(displacements=self.displacements[:, :n],
                            velocities=self.velocities[:, :n])

    def replace(self, **changes) -> "SnapshotSet":
        kw = dict(theta=self.theta, dt=self.dt, ref_length=self.ref_length,
                  initial_positions=self.initial_positions,
                  displacements=self.displacements, velocities=self.velocities,
                  metadata=self.metadata)
        kw.update(changes)
        return SnapshotSet(**kw)

    def kinematic_mismatch(self) -> float:
        """Relative mismatch of ``(u^{n+1}-u^n)/dt`` against ``(v^n+v^{n+1})/2``."""
        U = np.column_stack([np.zeros(self.n_dofs), self.displacements])
        if self.n_snapshots < 2:
            return 0.0
        D = np.diff(U[:, 1:], axis=1) / self.dt
        Vmid = 0.5 * (self.velocities[:, :-1] + self.velocities[:, 1:])
        scale = np.linalg.norm(Vmid)
        if scale == 0.0:
            return 0.0 if np.linalg.norm(D) == 0.0 else math.inf
        return float(np.linalg.norm(D - Vmid) / scale)

    def payload_equal(self, other: "SnapshotSet") -> bool:
        return (self.theta == other.theta and self.dt == other.dt
                and self.ref_length == other.ref_length
                and np.array_equal(self.initial_positions, other.initial_positions)
                and np.array_equal(self.displacements, other.displacements)
                and np.array_equal(self.velocities, other.velocities))


def derive_velocities(displacements, dt: float) -> np.ndarray:
    """Second-order finite-difference velocities from displacements.

    The implicit ``u^0 = 0`` column is prepended so the first stored velocity
    uses a central difference too.  Results should be flagged with
    ``metadata["velocity_source"] = "finite-difference"``.
    """
    U = np.asarray(displacements, dtype=float)
    full = np.column_stack([np.zeros(U.shape[0]), U])
    if full.shape[1] < 3:
        return np.diff(full, axis=1) / dt
    return np.gradient(full, dt, axis=1, edge_order=2)[:, 1:]


@dataclass(frozen=True, eq=False)
class RomRecord:
    """Compact persistent form of an identified reduced model."""

    theta: ParamCouple
    modes: np.ndarray
    a_mu: np.ndarray
    mu: float
    eps: float
    dt: float
    alpha0: np.ndarray
    beta0: np.ndarray
    initial_positions: np.ndarray
    ref_length: float
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.modes, dtype=float)
        if Q.ndim != 2 or Q.shape[1] < 1:
            raise ShapeError(f"expected (d, K>=1), got {Q.shape}", "modes")
        d, K = Q.shape
        A = np.asarray(self.a_mu, dtype=float)
        if A.shape != (K, K):
            raise ShapeError(f"expected ({K}, {K}), got {A.shape}", "a_mu")
        for name, n in (("alpha0", K), ("beta0", K), ("initial_positions", d)):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ShapeError(f"expected ({n},), got {v.shape}", name)
            _check_finite(v.reshape(-1, 1), name)
            object.__setattr__(self, name, _freeze(v))
        if d % 3:
            raise ShapeError(f"row count must be a multiple of 3, got {d}", "modes")
        _check_finite(Q, "modes")
        _check_finite(A, "a_mu")
        if np.linalg.norm(Q.T @ Q - np.eye(K)) > 1e-8:
            raise ValidationError("columns are not orthonormal to 1e-8", "modes")
        mu = float(self.mu)
        if not math.isfinite(mu) or mu < 0.0:
            raise ValidationError(f"must be finite and >= 0, got {mu}", "mu")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "dt", _check_positive(self.dt, "dt"))
        object.__setattr__(self, "ref_length", _check_positive(self.ref_length, "ref_length"))
        object.__setattr__(self, "modes", _freeze(Q))
        object.__setattr__(self, "a_mu", _freeze(A))
        object.__setattr__(self, "metadata", _check_metadata(self.metadata))

    @property
    def rank(self) -> int:
        return self.modes.shape[1]

    def payload_equal(self, other: "RomRecord") -> bool:
        return (self.theta == other.theta and self.mu == other.mu
                and (self.eps == other.eps or (math.isnan(self.eps) and math.isnan(other.eps)))
                and self.dt == other.dt and self.ref_length == other.ref_length
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("modes", "a_mu", "alpha0", "beta0", "initial_positions")))


def rom_record_reals(d: int, K: int) -> int:
    """Number of payload reals in a ROMREC1 file: ``dK + K^2 + 2K + d``."""
    return d * K + K * K + 2 * K + d


def rom_record_size(n_nodes: int, K: int) -> int:
    """Bytes of a ROMREC1 file without metadata trailer."""
    return _REC_HEADER.size + 8 * rom_record_reals(3 * n_nodes, K)


def snapshot_size(n_nodes: int, N: int) -> int:
    """Bytes of a ROMSNAP1 file without metadata trailer."""
    return _SNAP_HEADER.size + 8 * 3 * n_nodes * (1 + 2 * N)


# -- binary helpers ---------------------------------------------------------

def _meta_bytes(metadata: dict) -> bytes:
    if not metadata:
        return b""
    blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return META_MAGIC + struct.pack("<I", len(blob)) + blob


def _parse_meta(buf: bytes, offset: int, path) -> dict:
    rest = len(buf) - offset
    if rest == 0:
        return {}
    if rest < 8 or buf[offset:offset + 4] != META_MAGIC:
        raise FormatError(f"{path}: {rest} unexpected trailing bytes after payload")
    (n,) = struct.unpack_from("<I", buf, offset + 4)
    if offset + 8 + n != len(buf):
        raise FormatError(f"{path}: metadata length {n} does not match file size")
    try:
        meta = json.loads(buf[offset + 8:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata block: {exc}") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: metadata block is not an object")
    return meta


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise RomIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_bytes(path, blob: bytes):
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise RomIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _take(buf, offset, shape, path, name):
    n = int(np.prod(shape))
    end = offset + 8 * n
    if end > len(buf):
        raise FormatError(f"{path}: truncated while reading {name}")
    a = np.frombuffer(buf, dtype=_F8, count=n, offset=offset)
    if len(shape) == 2:
        a = a.reshape(shape, order="F")
    bad = ~np.isfinite(a)
    if bad.any():
        idx = np.argwhere(bad.reshape(shape[0], -1))[0]
        raise DataError("non-finite entry", name, idx)
    return a, end


def _f8(a: np.ndarray) -> bytes:
    return np.asarray(a, dtype=_F8).tobytes(order="F")


# -- ROMSNAP1 -----------------------------------------------------------------

def snapshot_bytes(s: SnapshotSet) -> bytes:
    header = _SNAP_HEADER.pack(SNAP_MAGIC, VERSION, s.n_nodes, s.n_snapshots, s.dt,
                               s.theta.ca, s.theta.ratio, s.ref_length)
    return b"".join([header, _f8(s.initial_positions), _f8(s.displacements),
                     _f8(s.velocities), _meta_bytes(s.metadata)])


def write_snapshot_set(s: SnapshotSet, path) -> None:
    """Write ``s`` in ROMSNAP1 format (or as a CSV bundle if ``path`` is an existing directory)."""
    if Path(path).is_dir():
        write_csv_bundle(s, path)
        return
    _write_bytes(path, snapshot_bytes(s))


def _parse_snap_header(buf, path):
    if len(buf) < _SNAP_HEADER.size:
        raise FormatError(f"{path}: file too short for a ROMSNAP1 header")
    magic, version, n_nodes, N, dt, ca, ratio, ref = _SNAP_HEADER.unpack_from(buf, 0)
    if magic != SNAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_nodes == 0 or N == 0:
        raise FormatError(f"{path}: empty dimensions n_nodes={n_nodes}, N={N}")
    need = _SNAP_HEADER.size + 8 * 3 * n_nodes * (1 + 2 * N)
    if need > len(buf):
        raise FormatError(f"{path}: header dims (n_nodes={n_nodes}, N={N}) exceed file size")
    return n_nodes, N, dt, ca, ratio, ref


def read_snapshot_header(path):
    """``(theta, n_nodes, N, dt)`` from a ROMSNAP1 header without loading the payload."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(_SNAP_HEADER.size)
        size = os.path.getsize(path)
    except OSError as exc:
        raise RomIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(head) < _SNAP_HEADER.size:
        raise FormatError(f"{path}: file too short for a ROMSNAP1 header")
    magic, version, n_nodes, N, dt, ca, ratio, _ = _SNAP_HEADER.unpack(head)
    if magic != SNAP_MAGIC or version != VERSION:
        raise FormatError(f"{path}: not a ROMSNAP1 v1 file")
    if _SNAP_HEADER.size + 8 * 3 * n_nodes * (1 + 2 * N) > size:
        raise FormatError(f"{path}: header dims exceed file size")
    return ParamCouple(ca, ratio), int(n_nodes), int(N), float(dt)


def read_snapshot_set(path) -> SnapshotSet:
    """Load and validate a ROMSNAP1 file or a CSV bundle directory."""
    if Path(path).is_dir():
        return read_csv_bundle(path)
    buf = _read_bytes(path)
    n_nodes, N, dt, ca, ratio, ref = _parse_snap_header(buf, path)
    d = 3 * n_nodes
    off = _SNAP_HEADER.size
    X, off = _take(buf, off, (d,), path, "initial_positions")
    U, off = _take(buf, off, (d, N), path, "displacements")
    V, off = _take(buf, off, (d, N), path, "velocities")
    meta = _parse_meta(buf, off, path)
    s = SnapshotSet(ParamCouple(ca, ratio), dt, ref, X, U, V, meta)
    _warn_kinematics(s, path)
    return s


def _warn_kinematics(s: SnapshotSet, source):
    mismatch = s.kinematic_mismatch()
    if mismatch > KINEMATIC_WARN_TOL:
        warnings.warn(f"{source}: displacement increments disagree with stored velocities "
                      f"(relative mismatch {mismatch:.3g})", SnapshotWarning, stacklevel=3)


# -- CSV bundle ------------------------------------------------------------------

_META_KEYS = ("n_nodes", "N", "dt", "ca", "ratio", "ref_length")


def write_csv_bundle(s: SnapshotSet, directory) -> None:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "meta.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for key, value in (("n_nodes", s.n_nodes), ("N", s.n_snapshots), ("dt", s.dt),
                               ("ca", s.theta.ca), ("ratio", s.theta.ratio),
                               ("ref_length", s.ref_length)):
                w.writerow([key, repr(value)])
            w.writerow(["frame", s.metadata.get("frame", "lab")])
        np.savetxt(directory / "X.csv", s.initial_positions.reshape(-1, 1), fmt="%.17g",
                   delimiter=",")
        np.savetxt(directory / "U.csv", s.displacements, fmt="%.17g", delimiter=",")
        np.savetxt(directory / "V.csv", s.velocities, fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise RomIOError(f"cannot write CSV bundle {directory}: {exc.strerror or exc}") from exc


def read_csv_bundle(directory) -> SnapshotSet:
    directory = Path(directory)
    try:
        with open(directory / "meta.csv", newline="") as fh:
            rows = {r[0].strip(): r[1].strip() for r in csv.reader(fh) if r}
        missing = [k for k in _META_KEYS if k not in rows]
        if missing:
            raise FormatError(f"{directory}/meta.csv: missing keys {missing}")
        try:
            n_nodes, N = int(rows["n_nodes"]), int(rows["N"])
            dt, ca, ratio, ref = (float(rows[k]) for k in ("dt", "ca", "ratio", "ref_length"))
        except ValueError as exc:
            raise FormatError(f"{directory}/meta.csv: {exc}") from exc
        X = np.loadtxt(directory / "X.csv", delimiter=",", ndmin=1).ravel()
        U = np.loadtxt(directory / "U.csv", delimiter=",", ndmin=2)
        V = np.loadtxt(directory / "V.csv", delimiter=",", ndmin=2)
    except OSError as exc:
        raise RomIOError(f"cannot read CSV bundle {directory}: {exc.strerror or exc}") from exc
    d = 3 * n_nodes
    if N == 1:
        U, V = U.reshape(-1, 1), V.reshape(-1, 1)
    for name, a, shape in (("X.csv", X, (d,)), ("U.csv", U, (d, N)), ("V.csv", V, (d, N))):
        if a.shape != shape:
            raise ShapeError(f"expected shape {shape}, got {a.shape}", name)
    meta = {"frame": rows.get("frame", "lab")}
    s = SnapshotSet(ParamCouple(ca, ratio), dt, ref, X, U, V, meta)
    _warn_kinematics(s, directory)
    return s


# -- ROMREC1 -------------------------------------------------------------------

def rom_record_bytes(r: RomRecord) -> bytes:
    d, K = r.modes.shape
    header = _REC_HEADER.pack(REC_MAGIC, VERSION, d // 3, K, r.dt, r.theta.ca,
                              r.theta.ratio, r.ref_length, r.mu, r.eps)
    return b"".join([header, _f8(r.modes), _f8(r.a_mu), _f8(r.alpha0), _f8(r.beta0),
                     _f8(r.initial_positions), _meta_bytes(r.metadata)])


def write_rom_record(r: RomRecord, path) -> None:
    _write_bytes(path, rom_record_bytes(r))


def read_rom_record(path) -> RomRecord:
    buf = _read_bytes(path)
    if len(buf) < _REC_HEADER.size:
        raise FormatError(f"{path}: file too short for a ROMREC1 header")
    magic, version, n_nodes, K, dt, ca, ratio, ref, mu, eps = _REC_HEADER.unpack_from(buf, 0)
    if magic != REC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    d = 3 * n_nodes
    if n_nodes == 0 or K == 0 or _REC_HEADER.size + 8 * rom_record_reals(d, K) > len(buf):
        raise FormatError(f"{path}: header dims (n_nodes={n_nodes}, K={K}) do not fit file")
    off = _REC_HEADER.size
    Q, off = _take(buf, off, (d, K), path, "modes")
    A, off = _take(buf, off, (K, K), path, "a_mu")
    a0, off = _take(buf, off, (K,), path, "alpha0")
    b0, off = _take(buf, off, (K,), path, "beta0")
    X, off = _take(buf, off, (d,), path, "initial_positions")
    meta = _parse_meta(buf, off, path)
    return RomRecord(ParamCouple(ca, ratio), Q, A, mu, eps, dt, a0, b0, X, ref, meta)
