import os
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from romkit.errors import (DataError, FormatError, RomIOError, ShapeError, ValidationError)
from romkit.snapshots import (_REC_HEADER, _SNAP_HEADER, ParamCouple, RomRecord, SnapshotSet,
                              SnapshotWarning, derive_velocities, read_csv_bundle, read_rom_record,
                              read_snapshot_header, read_snapshot_set, rom_record_bytes,
                              rom_record_reals, rom_record_size, snapshot_bytes, snapshot_size,
                              write_csv_bundle, write_rom_record, write_snapshot_set)


def _snapshot(n_nodes=4, N=5, seed=0, meta=None):
    r = np.random.default_rng(seed)
    dt = 0.1
    t = dt * np.arange(1, N + 1)
    a, w = r.standard_normal((2, 3 * n_nodes, 1))
    U = a * np.sin((1 + 0.3 * w) * t)
    V = derive_velocities(U, dt)
    return SnapshotSet(ParamCouple(0.2, 0.75), dt, 1.5, r.standard_normal(3 * n_nodes), U, V,
                       meta or {})


def _record(n_nodes=3, K=2, seed=0):
    r = np.random.default_rng(seed)
    Q = np.linalg.qr(r.standard_normal((3 * n_nodes, K)))[0]
    return RomRecord(ParamCouple(0.1, 0.9), Q, r.standard_normal((K, K)), 1e-9, 1e-6, 0.04,
                     r.standard_normal(K), r.standard_normal(K), r.standard_normal(3 * n_nodes),
                     2.0, {"note": "x"})


def test_param_couple_validation():
    assert ParamCouple(1, 2).as_array().tolist() == [1.0, 2.0]
    for bad in ((0.0, 1.0), (1.0, -1.0), (float("nan"), 1.0), (1.0, float("inf"))):
        with pytest.raises(ValidationError):
            ParamCouple(*bad)


def test_snapshot_arrays_are_read_only_copies():
    U = np.ones((3, 2))
    s = SnapshotSet(ParamCouple(1, 1), 0.1, 1.0, np.zeros(3), U, U, {})
    U[0, 0] = 7.0
    assert s.displacements[0, 0] == 1.0
    with pytest.raises(ValueError):
        s.displacements[0, 0] = 2.0
    assert s.metadata["frame"] == "lab"


@pytest.mark.parametrize("X,U,V,exc", [
    (np.zeros(4), np.zeros((4, 2)), np.zeros((4, 2)), ShapeError),
    (np.zeros(3), np.zeros((6, 2)), np.zeros((6, 2)), ShapeError),
    (np.zeros(3), np.zeros((3, 2)), np.zeros((3, 3)), ShapeError),
    (np.zeros(3), np.zeros((3, 0)), np.zeros((3, 0)), ShapeError),
])
def test_snapshot_shape_validation(X, U, V, exc):
    with pytest.raises(exc):
        SnapshotSet(ParamCouple(1, 1), 0.1, 1.0, X, U, V)


def test_snapshot_nonfinite_reports_index():
    U = np.zeros((3, 4))
    U[1, 2] = np.nan
    with pytest.raises(DataError) as info:
        SnapshotSet(ParamCouple(1, 1), 0.1, 1.0, np.zeros(3), U, np.zeros((3, 4)))
    assert tuple(info.value.index) == (1, 2)
    assert "displacements" in str(info.value)


def test_snapshot_bad_scalars_and_frame():
    args = (np.zeros(3), np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ValidationError):
        SnapshotSet(ParamCouple(1, 1), 0.0, 1.0, *args)
    with pytest.raises(ValidationError):
        SnapshotSet(ParamCouple(1, 1), 0.1, -1.0, *args)
    with pytest.raises(ValidationError):
        SnapshotSet(ParamCouple(1, 1), 0.1, 1.0, *args, {"frame": "body"})


def test_times_positions_prefix():
    s = _snapshot(N=5)
    np.testing.assert_allclose(s.times, [0.1, 0.2, 0.3, 0.4, 0.5])
    np.testing.assert_array_equal(s.positions(2).ravel(),
                                  s.initial_positions + s.displacements[:, 1])
    p = s.prefix(3)
    assert p.n_snapshots == 3 and np.array_equal(p.velocities, s.velocities[:, :3])
    with pytest.raises(ValidationError):
        s.prefix(6)


def test_derive_velocities_exact_for_quadratic():
    t = 0.1 * np.arange(1, 8)
    U = np.vstack([t ** 2, 3 * t, np.zeros_like(t)])
    V = derive_velocities(U, 0.1)
    np.testing.assert_allclose(V[0], 2 * t, atol=1e-12)
    np.testing.assert_allclose(V[1], 3.0, atol=1e-12)


def test_romsnap_round_trip_bit_exact(tmp_path):
    s = _snapshot(meta={"generator": {"name": "toy"}, "frame": "centroid"})
    p = tmp_path / "a.romsnap"
    write_snapshot_set(s, p)
    t = read_snapshot_set(p)
    assert t.payload_equal(s)
    assert t.metadata == s.metadata
    assert os.path.getsize(p) > snapshot_size(s.n_nodes, s.n_snapshots)


def test_romsnap_size_without_metadata(tmp_path):
    s = _snapshot(n_nodes=5, N=7)
    assert len(snapshot_bytes(s)) == snapshot_size(5, 7) + len(b"META") + 4 + len(
        b'{"frame":"lab"}')
    theta, n_nodes, N, dt = read_snapshot_header(_write(tmp_path, s))
    assert (theta, n_nodes, N, dt) == (s.theta, 5, 7, s.dt)


def _write(tmp_path, s, name="s.romsnap"):
    p = tmp_path / name
    write_snapshot_set(s, p)
    return p


def test_romsnap_bytes_deterministic():
    assert snapshot_bytes(_snapshot(seed=4)) == snapshot_bytes(_snapshot(seed=4))
    assert rom_record_bytes(_record(seed=2)) == rom_record_bytes(_record(seed=2))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_romsnap_round_trip_property(tmp_path_factory, n_nodes, N, seed):
    s = _snapshot(n_nodes, N, seed)
    p = tmp_path_factory.mktemp("rt") / "s.romsnap"
    write_snapshot_set(s, p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SnapshotWarning)
        assert read_snapshot_set(p).payload_equal(s)


def test_romsnap_rejects_bad_magic(tmp_path):
    blob = bytearray(snapshot_bytes(_snapshot()))
    blob[:8] = b"NOTASNAP"
    (tmp_path / "x").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_snapshot_set(tmp_path / "x")


def test_romsnap_rejects_bad_version(tmp_path):
    blob = bytearray(snapshot_bytes(_snapshot()))
    blob[8:12] = struct.pack("<I", 2)
    (tmp_path / "x").write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        read_snapshot_set(tmp_path / "x")


def test_romsnap_rejects_oversized_dims(tmp_path):
    blob = bytearray(snapshot_bytes(_snapshot()))
    blob[12:20] = struct.pack("<Q", 10**9)
    (tmp_path / "x").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_snapshot_set(tmp_path / "x")
    with pytest.raises(FormatError):
        read_snapshot_header(tmp_path / "x")


def test_romsnap_rejects_truncation_and_trailing_garbage(tmp_path):
    blob = snapshot_bytes(_snapshot())
    (tmp_path / "short").write_bytes(blob[:30])
    with pytest.raises(FormatError):
        read_snapshot_set(tmp_path / "short")
    s = _snapshot()
    raw = snapshot_bytes(s.replace(metadata={}))
    (tmp_path / "tail").write_bytes(raw[:snapshot_size(s.n_nodes, s.n_snapshots)] + b"junk")
    with pytest.raises(FormatError):
        read_snapshot_set(tmp_path / "tail")


def test_romsnap_nonfinite_payload_reports_position(tmp_path):
    s = _snapshot(n_nodes=2, N=3)
    blob = bytearray(snapshot_bytes(s))
    d = 3 * s.n_nodes
    # U[4, 1] in column-major order after the header and X
    offset = _SNAP_HEADER.size + 8 * d + 8 * (1 * d + 4)
    blob[offset:offset + 8] = struct.pack("<d", float("nan"))
    (tmp_path / "x").write_bytes(bytes(blob))
    with pytest.raises(DataError) as info:
        read_snapshot_set(tmp_path / "x")
    assert tuple(info.value.index) == (4, 1)


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=200))
def test_romsnap_fuzz_never_crashes(tmp_path_factory, junk):
    p = tmp_path_factory.mktemp("fz") / "x"
    p.write_bytes(b"ROMSNAP1" + junk)
    try:
        read_snapshot_set(p)
    except (ValidationError, RomIOError):
        pass


def test_kinematic_mismatch_warns(tmp_path):
    s = _snapshot()
    bad = s.replace(velocities=-s.velocities)
    with pytest.warns(SnapshotWarning):
        read_snapshot_set(_write(tmp_path, bad))
    with warnings.catch_warnings():
        warnings.simplefilter("error", SnapshotWarning)
        read_snapshot_set(_write(tmp_path, s, "good"))


def test_csv_bundle_round_trip(tmp_path):
    s = _snapshot(meta={"frame": "centroid"})
    write_csv_bundle(s, tmp_path / "b")
    t = read_csv_bundle(tmp_path / "b")
    assert t.payload_equal(s)
    assert t.metadata["frame"] == "centroid"
    assert read_snapshot_set(tmp_path / "b").payload_equal(s)
    assert b"\r" not in (tmp_path / "b" / "meta.csv").read_bytes()


def test_csv_bundle_single_snapshot(tmp_path):
    s = _snapshot(N=1)
    write_csv_bundle(s, tmp_path / "b")
    assert read_csv_bundle(tmp_path / "b").payload_equal(s)


def test_csv_bundle_missing_key_and_bad_shape(tmp_path):
    s = _snapshot()
    write_csv_bundle(s, tmp_path / "b")
    meta = (tmp_path / "b" / "meta.csv").read_text().splitlines()
    (tmp_path / "b" / "meta.csv").write_text("\n".join(l for l in meta if not l.startswith("dt")))
    with pytest.raises(FormatError):
        read_csv_bundle(tmp_path / "b")
    write_csv_bundle(s, tmp_path / "c")
    np.savetxt(tmp_path / "c" / "X.csv", np.zeros(5), delimiter=",")
    with pytest.raises(ShapeError):
        read_csv_bundle(tmp_path / "c")


def test_io_errors(tmp_path):
    with pytest.raises(RomIOError) as info:
        read_snapshot_set(tmp_path / "missing.romsnap")
    assert info.value.exit_code == 4
    with pytest.raises(RomIOError):
        write_snapshot_set(_snapshot(), tmp_path / "no" / "such" / "dir" / "x.romsnap")


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores file permissions")
def test_write_to_read_only_directory(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    try:
        with pytest.raises(RomIOError):
            write_snapshot_set(_snapshot(), d / "x.romsnap")
    finally:
        d.chmod(0o700)


def test_rom_record_round_trip(tmp_path):
    r = _record()
    write_rom_record(r, tmp_path / "r.romrec")
    t = read_rom_record(tmp_path / "r.romrec")
    assert t.payload_equal(r) and t.metadata == r.metadata
    assert r.rank == 2


def test_rom_record_size_formula():
    d, K = 12, 3
    assert rom_record_reals(d, K) == d * K + K * K + 2 * K + d
    rec = _record(n_nodes=4, K=3)
    blob = rom_record_bytes(rec)
    assert len(blob) > rom_record_size(4, 3)
    assert rom_record_size(4, 3) == _REC_HEADER.size + 8 * rom_record_reals(d, K)


def test_rom_record_validation():
    good = _record()
    with pytest.raises(ValidationError):
        RomRecord(good.theta, 2 * good.modes, good.a_mu, 1e-9, 1e-6, 0.04, good.alpha0,
                  good.beta0, good.initial_positions, 2.0)
    with pytest.raises(ShapeError):
        RomRecord(good.theta, good.modes, np.zeros((3, 3)), 1e-9, 1e-6, 0.04, good.alpha0,
                  good.beta0, good.initial_positions, 2.0)
    with pytest.raises(ValidationError):
        RomRecord(good.theta, good.modes, good.a_mu, -1.0, 1e-6, 0.04, good.alpha0,
                  good.beta0, good.initial_positions, 2.0)


def test_rom_record_bad_magic(tmp_path):
    blob = bytearray(rom_record_bytes(_record()))
    blob[:8] = b"ROMSNAP1"
    (tmp_path / "x").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_rom_record(tmp_path / "x")
