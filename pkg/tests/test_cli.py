import csv
import struct
import subprocess
import sys

import numpy as np
import pytest

from romkit.cli import main
from romkit.snapshots import (_SNAP_HEADER, read_rom_record, read_snapshot_set,
                              write_snapshot_set)
from romkit.synth import ToyCapsule, generate_toy_capsule

CAPSULE = ["--nodes", "42", "--n", "60", "--dt-fom", "0.01"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "capsule", *CAPSULE, "--out", str(d / "fom.romsnap")]) == 0
    return d


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "1e-06" in out and "20" in out and "1e-09" in out and "1e-12:1e-05" in out


def test_console_script_version():
    r = subprocess.run([sys.executable, "-m", "romkit.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "rom" in r.stdout


def test_pipeline(work, capsys):
    fom = str(work / "fom.romsnap")
    assert main(["pod", "--in", fom, "--eps", "1e-8", "--ric-csv", str(work / "ric.csv"),
                 "--out", str(work / "basis.romrec")]) == 0
    ric = _rows(work / "ric.csv")
    assert ric[0] == ["K", "ric"] and int(ric[1][0]) == 1
    assert read_rom_record(work / "basis.romrec").metadata["content"] == "basis"

    assert main(["train", "--in", fom, "--eps", "1e-10", "--out", str(work / "m.romrec"),
                 "--diagnostics", str(work / "diag.csv")]) == 0
    assert "K = " in capsys.readouterr().out
    assert _rows(work / "diag.csv")[0] == ["t", "R"]
    manifest = (work / "m.romrec.manifest").read_text()
    assert "command=train" in manifest and "eps=1e-10" in manifest

    assert main(["simulate", "--model", str(work / "m.romrec"), "--t-end", "2.4",
                 "--dt-out", "0.04", "--out", str(work / "rom.romsnap"),
                 "--diagnostics", str(work / "spec.csv")]) == 0
    sim = read_snapshot_set(work / "rom.romsnap")
    assert sim.n_snapshots == 60 and sim.metadata["velocity_source"] == "rom"
    kinds = {r[0] for r in _rows(work / "spec.csv")[1:]}
    assert kinds == {"A_mu", "A_mu_sym", "spectral_radius_I_plus_dtA"}

    assert main(["simulate", "--model", str(work / "m.romrec"), "--t-end", "1",
                 "--dt-out", "0.04", "--scheme", "euler", "--out",
                 str(work / "euler.romsnap")]) == 0

    assert main(["compare", "--fom", fom, "--model", str(work / "m.romrec"),
                 "--out", str(work / "cmp.csv")]) == 0
    rows = _rows(work / "cmp.csv")
    assert rows[0] == ["t", "eps_shape", "rms_indexed"] and len(rows) == 61
    assert max(float(r[1]) for r in rows[1:]) < 1e-2

    assert main(["study-learning", "--in", fom, "--tl", "1,2", "--eps", "1e-10",
                 "--out", str(work / "learn.csv")]) == 0
    assert [r[0] for r in _rows(work / "learn.csv")] == ["t_learn", "1.0", "2.0"]


def test_train_lcurve_writes_curve(work):
    assert main(["train", "--in", str(work / "fom.romsnap"), "--lcurve",
                 "--out", str(work / "lc.romrec")]) == 0
    rows = _rows(work / "lcurve.csv")
    assert rows[0] == ["mu", "residual", "norm", "selected"] and len(rows) == 30
    assert sum(int(r[3]) for r in rows[1:]) == 1


def test_config_file_and_flag_precedence(work):
    cfg = work / "run.cfg"
    cfg.write_text("eps=1e-3\nmax_modes=3\n")
    assert main(["train", "--in", str(work / "fom.romsnap"), "--config", str(cfg),
                 "--max-modes", "2", "--out", str(work / "c.romrec")]) == 0
    assert read_rom_record(work / "c.romrec").rank <= 2
    assert "max_modes=2" in (work / "c.romrec.manifest").read_text()


def test_interpolate_sweep_storage(tmp_path):
    db, tests = tmp_path / "db", tmp_path / "tests"
    db.mkdir()
    tests.mkdir()
    kw = dict(n_nodes=42, n_snapshots=30, nonlinearity=0.0, dt_fom=0.01)
    for c in (0.1, 0.3):
        for r in (0.5, 0.9):
            write_snapshot_set(generate_toy_capsule(ToyCapsule(ca=c, ratio=r, **kw)),
                               db / f"s_{c}_{r}.romsnap")
    write_snapshot_set(generate_toy_capsule(ToyCapsule(ca=0.2, ratio=0.6, **kw)),
                       tests / "t.romsnap")
    assert main(["interpolate", "--db", str(db), "--ca", "0.2", "--ratio", "0.6",
                 "--eps", "1e-10", "--out", str(tmp_path / "i.romrec"),
                 "--predicted", str(tmp_path / "p.romsnap")]) == 0
    assert read_rom_record(tmp_path / "i.romrec").metadata["interpolation"]["extrapolated"] \
        is False
    assert main(["sweep", "--db", str(db), "--test", str(tests), "--eps", "1e-10",
                 "--out", str(tmp_path / "sw.csv")]) == 0
    rows = _rows(tmp_path / "sw.csv")
    assert rows[0] == ["ca", "ratio", "t", "eps_shape"] and len(rows) == 31
    assert main(["storage", "--db", str(db), "--out", str(tmp_path / "st.csv")]) == 0
    rows = _rows(tmp_path / "st.csv")
    assert rows[-1][0] == "TOTAL" and len(rows) == 6
    assert all(r[4] == "formula_K20" for r in rows[1:-1])


def test_storage_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["storage", "--db", str(tmp_path / "empty"), "--out",
                 str(tmp_path / "s.csv")]) == 0
    assert _rows(tmp_path / "s.csv") == [["sample", "snapshot_bytes", "rom_bytes", "ratio",
                                          "rom_source"]]


def test_bench(work):
    out = work / "bench.csv"
    assert main(["train", "--in", str(work / "fom.romsnap"), "--out",
                 str(work / "b.romrec")]) == 0
    assert main(["bench", "--fom", str(work / "fom.romsnap"), "--model",
                 str(work / "b.romrec"), "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["dt_fom", "t_fom", "t_rom", "speedup"]
    assert float(rows[1][0]) == 0.01 and float(rows[1][3]) > 0
    assert main(["bench", "--fom", str(work / "fom.romsnap"), "--model",
                 str(work / "b.romrec"), "--repetitions", "2", "--out", str(out)]) == 2


def test_exit_codes(tmp_path, work, capsys):
    # validation
    assert main(["train", "--in", str(work / "fom.romsnap"), "--eps", "2",
                 "--out", str(tmp_path / "x.romrec")]) == 2
    # bad magic is a validation (format) error
    (tmp_path / "junk.romsnap").write_bytes(b"garbage!" + bytes(100))
    assert main(["pod", "--in", str(tmp_path / "junk.romsnap")]) == 2
    # missing input is an I/O error
    assert main(["pod", "--in", str(tmp_path / "missing.romsnap")]) == 4
    # rank-deficient reduced data is a numeric failure
    s = read_snapshot_set(work / "fom.romsnap")
    V = np.repeat(s.velocities[:, :1], s.n_snapshots, axis=1)
    U = np.cumsum(V, axis=1) * s.dt
    U[:, -1] += 1e-3 * np.random.default_rng(0).standard_normal(U.shape[0])
    write_snapshot_set(s.replace(displacements=U, velocities=V, metadata={}),
                       tmp_path / "flat.romsnap")
    assert main(["train", "--in", str(tmp_path / "flat.romsnap"), "--eps", "1e-12",
                 "--out", str(tmp_path / "f.romrec")]) == 3
    # unwritable output
    assert main(["synth", "linear", "--k", "2", "--d", "9", "--n", "5", "--out",
                 str(tmp_path / "no" / "dir" / "x.romsnap")]) == 4
    err = capsys.readouterr().err
    assert "error" in err


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["train", "--mu", "1e-9", "--lcurve", "--in", "x", "--out", "y"])
    assert info.value.code == 2


def test_nonfinite_input_reports_location(tmp_path, work, capsys):
    blob = bytearray((work / "fom.romsnap").read_bytes())
    off = _SNAP_HEADER.size + 8 * 126 + 8 * 5  # U[5, 0]
    blob[off:off + 8] = struct.pack("<d", float("inf"))
    (tmp_path / "bad.romsnap").write_bytes(bytes(blob))
    assert main(["pod", "--in", str(tmp_path / "bad.romsnap")]) == 2
    assert "(5, 0)" in capsys.readouterr().err
