"""``rom`` command-line tool.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O error.
``ROM_THREADS`` caps the number of worker threads.
"""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_lcurve, read_config_file, write_manifest
from .dmd import DEFAULT_LCURVE, time_residual
from .errors import RomError, RomIOError, ValidationError
from .metrics import compare_model, learning_time_study, steady_state_time
from .model import (RomModel, continuous_stability, discrete_stability, propagate_euler,
                    propagate_exact, train)
from .numerics import eigenvalues
from .params import ParamDatabase, rom_at, sweep
from .pod import build_basis, ric_curve
from .snapshots import (REC_MAGIC, SNAP_MAGIC, ParamCouple, RomRecord, SnapshotSet,
                        read_rom_record, read_snapshot_header, read_snapshot_set,
                        rom_record_size,
                        write_rom_record, write_snapshot_set)
from .synth import (SPECTRA, ToyCapsule, generate_linear, generate_toy_capsule,
                    make_linear_oracle, regenerate)

log = logging.getLogger("romkit")

_DEFAULTS = RunConfig()
_LCURVE_TEXT = f"{DEFAULT_LCURVE[0]:g}:{DEFAULT_LCURVE[1]:g}"


# -- helpers -------------------------------------------------------------------

def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise RomIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def _file_kind(path) -> str | None:
    p = Path(path)
    if p.is_dir():
        return "csv" if (p / "meta.csv").is_file() else None
    try:
        with open(p, "rb") as fh:
            magic = fh.read(8)
    except OSError as exc:
        raise RomIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return {SNAP_MAGIC: "romsnap", REC_MAGIC: "romrec"}.get(magic)


def _float_list(text: str, name: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}", name) from exc
    if not values:
        raise ValidationError("expected at least one value", name)
    return values


def _resolve(args, keys) -> RunConfig:
    """Defaults <- config file <- explicit flags."""
    cfg = _DEFAULTS
    if getattr(args, "config", None):
        cfg = RunConfig.from_mapping(read_config_file(args.config))
    overrides = {k: getattr(args, k, None) for k in keys}
    if overrides.get("lcurve") is not None:
        overrides["lcurve"] = parse_lcurve(overrides["lcurve"])
    elif getattr(args, "mu", None) is not None and cfg.lcurve is not None:
        overrides["lcurve"] = "none"  # an explicit --mu beats lcurve bounds from a file
    return cfg.merged(overrides)


def _manifest(args, command, cfg, **extra):
    path = getattr(args, "manifest", None)
    if path is None and getattr(args, "out", None):
        path = f"{args.out}.manifest"
    if path:
        paths = {k: str(v) for k, v in vars(args).items()
                 if k in ("inp", "out", "model", "fom", "db", "test", "diagnostics",
                          "predicted", "ric_csv") and v is not None}
        write_manifest(path, command, cfg.merged({"paths": paths}), extra)


def _config_flag(p):
    p.add_argument("--config", metavar="FILE",
                   help="key=value configuration file; command-line flags take precedence")
    p.add_argument("--manifest", metavar="FILE",
                   help="run manifest path (default: OUT.manifest)")


def _training_flags(p, lcurve=True):
    p.add_argument("--eps", type=float,
                   help=f"POD truncation tolerance on the RIC (default: {_DEFAULTS.eps:g})")
    p.add_argument("--max-modes", dest="max_modes", type=int,
                   help=f"upper bound on the POD rank K (default: {_DEFAULTS.max_modes})")
    if lcurve:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--mu", type=float,
                       help=f"Tikhonov parameter (default: {_DEFAULTS.mu:g})")
        g.add_argument("--lcurve", nargs="?", const=_LCURVE_TEXT, metavar="MIN:MAX",
                       help=f"select mu at the L-curve corner over MIN:MAX "
                            f"(default bounds: {_LCURVE_TEXT}; off unless given)")
    else:
        p.add_argument("--mu", type=float,
                       help=f"Tikhonov parameter (default: {_DEFAULTS.mu:g})")


_TRAIN_KEYS = ("eps", "max_modes", "mu", "lcurve")


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.kind == "linear":
        oracle = make_linear_oracle(args.k, args.d, args.n, args.dt, args.spectrum, args.seed)
        s = generate_linear(oracle)
    else:
        cfg = ToyCapsule(n_nodes=args.nodes, n_snapshots=args.n, dt=args.dt, ca=args.ca_like,
                         ratio=args.ratio_like, seed=args.seed, nonlinearity=args.nonlinearity,
                         dt_fom=args.dt_fom)
        s = generate_toy_capsule(cfg)
        tss = steady_state_time(s)
        log.info("steady state (velocity-stationarity proxy) reached at t = %s", tss)
    write_snapshot_set(s, args.out)
    return 0


def cmd_pod(args) -> int:
    cfg = _resolve(args, ("eps", "max_modes"))
    s = read_snapshot_set(args.inp)
    basis = build_basis(s, cfg.eps, cfg.max_modes)
    K = basis.rank
    print(f"K = {K}, RIC(K) = {basis.ric():.3e}")
    if args.ric_csv:
        _write_csv(args.ric_csv, ["K", "ric"], ric_curve(s))
    if args.out:
        # a ROMREC1 file with zero dynamics: only modes and geometry are meaningful
        rec = RomRecord(s.theta, basis.modes, np.zeros((K, K)), 0.0, cfg.eps, s.dt,
                        np.zeros(K), np.zeros(K), s.initial_positions, s.ref_length,
                        {"frame": s.metadata.get("frame", "lab"), "content": "basis"})
        write_rom_record(rec, args.out)
    _manifest(args, "pod", cfg, K=K)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_KEYS)
    s = read_snapshot_set(args.inp)
    result = train(s, cfg.eps, cfg.max_modes, cfg.mu, cfg.lcurve, cfg.points_per_decade,
                   cfg.initial_velocity)
    m = result.model
    cs = continuous_stability(m)
    print(f"K = {m.rank}, mu = {m.mu:g}, cond(X) = {result.data.cond_X:.3e}, "
          f"max Re(lambda) = {cs.max_real:.3e}, min |lambda| = {cs.min_abs:.3e}")
    if result.velocity_ric > 1e-2:
        log.warning("velocity snapshots are poorly represented by the displacement basis "
                    "(relative projection error %.2e)", result.velocity_ric)
    write_rom_record(m.to_record({"cond_X": result.data.cond_X,
                                  "velocity_projection_error": result.velocity_ric}), args.out)
    if args.diagnostics:
        t, R = time_residual(result.data, m.a_mu)
        _write_csv(args.diagnostics, ["t", "R"], zip(t.tolist(), R.tolist()))
    if result.lcurve is not None:
        path = args.lcurve_csv or Path(args.diagnostics or args.out).with_name("lcurve.csv")
        lc = result.lcurve
        sel = lc.selected_index
        _write_csv(path, ["mu", "residual", "norm", "selected"],
                   ((mu, r, n, i == sel) for i, (mu, r, n) in enumerate(lc.points)))
    _manifest(args, "train", cfg.merged({"mu": m.mu}), K=m.rank,
              cond_X=result.data.cond_X)
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve(args, ("t_end", "dt_out", "scheme"))
    m = RomModel.from_record(read_rom_record(args.model))
    n = int(round(cfg.t_end / cfg.dt_out))
    if n < 1 or abs(n * cfg.dt_out - cfg.t_end) > 1e-9 * cfg.t_end:
        raise ValidationError(f"t_end = {cfg.t_end:g} is not a multiple of dt_out = "
                              f"{cfg.dt_out:g}", "t_end")
    if cfg.scheme == "exact":
        traj = propagate_exact(m, cfg.dt_out * np.arange(1, n + 1))
        alphas, betas = traj.alphas, traj.betas
    else:
        ds = discrete_stability(m, cfg.dt_out)
        if not ds.stable:
            log.warning("explicit Euler is unstable at dt = %g (spectral radius %.6f)",
                        cfg.dt_out, ds.spectral_radius)
        traj = propagate_euler(m, cfg.dt_out, n)
        alphas, betas = traj.alphas[:, 1:], traj.betas[:, 1:]
    Q = m.modes
    meta = {"frame": m.metadata.get("frame", "lab"), "velocity_source": "rom",
            "scheme": cfg.scheme}
    s = SnapshotSet(m.theta, cfg.dt_out, m.ref_length, m.initial_positions, Q @ alphas,
                    Q @ betas, meta)
    write_snapshot_set(s, args.out)
    if args.diagnostics:
        rows = [("A_mu", i, z.real, z.imag) for i, z in enumerate(m.spectrum)]
        rows += [("A_mu_sym", i, z.real, 0.0)
                 for i, z in enumerate(eigenvalues(m.symmetric_part))]
        rows.append(("spectral_radius_I_plus_dtA", 0,
                     discrete_stability(m, cfg.dt_out).spectral_radius, 0.0))
        _write_csv(args.diagnostics, ["quantity", "index", "real", "imag"], rows)
    _manifest(args, "simulate", cfg)
    return 0


def cmd_compare(args) -> int:
    fom = read_snapshot_set(args.fom)
    m = RomModel.from_record(read_rom_record(args.model))
    series = compare_model(fom, m)
    _write_csv(args.out, ["t", "eps_shape", "rms_indexed"], series.rows())
    print(f"max eps_shape = {series.max:.3e}, final eps_shape = {series.final:.3e}")
    return 0


def cmd_study_learning(args) -> int:
    cfg = _resolve(args, ("eps", "max_modes", "mu"))
    s = read_snapshot_set(args.inp)
    rows = learning_time_study(s, _float_list(args.tl, "tl"), cfg.eps, cfg.max_modes, cfg.mu)
    _write_csv(args.out, ["t_learn", "eps_shape_end"], rows)
    _manifest(args, "study-learning", cfg, tl=args.tl)
    return 0


def _database(args) -> ParamDatabase:
    scale = _float_list(args.scale, "scale")
    return ParamDatabase.from_directory(args.db, scale=scale, resample=args.resample)


def cmd_interpolate(args) -> int:
    cfg = _resolve(args, _TRAIN_KEYS)
    db = _database(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m, predicted = rom_at(db, ParamCouple(args.ca, args.ratio), cfg.eps, cfg.max_modes,
                              cfg.mu, cfg.lcurve, return_prediction=True)
    for w in caught:
        log.warning("%s", w.message)
    q = m.metadata["interpolation"]
    print(f"vertices {q['vertices']} lambdas {q['lambdas']}"
          + (" (extrapolated)" if q["extrapolated"] else ""))
    write_rom_record(m.to_record(), args.out)
    if args.predicted:
        write_snapshot_set(predicted, args.predicted)
    _manifest(args, "interpolate", cfg, ca=args.ca, ratio=args.ratio,
              extrapolated=q["extrapolated"])
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args, _TRAIN_KEYS)
    db = _database(args)
    tests = ParamDatabase.from_directory(args.test, resample=args.resample)
    rows = sweep(db, [tests.sample(i) for i in range(len(tests))], cfg.eps, cfg.max_modes,
                 cfg.mu, cfg.lcurve)
    _write_csv(args.out, ["ca", "ratio", "t", "eps_shape"], rows)
    _manifest(args, "sweep", cfg, n_tests=len(tests))
    return 0


def _time_rom(m: RomModel, times, repetitions: int) -> float:
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        m.positions(propagate_exact(m, times))
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cmd_bench(args) -> int:
    if args.repetitions < 3:
        raise ValidationError(f"must be >= 3, got {args.repetitions}", "repetitions")
    m = RomModel.from_record(read_rom_record(args.model))
    kind = _file_kind(args.fom)
    dt_fom = float("nan")
    if kind == "romrec":
        ref = RomModel.from_record(read_rom_record(args.fom))
        times = ref.dt_train * np.arange(1, int(round(_DEFAULTS.t_end / ref.dt_train)) + 1)
        t_fom = args.fom_seconds if args.fom_seconds is not None else _time_rom(
            ref, times, args.repetitions)
    elif kind in ("romsnap", "csv"):
        fom = read_snapshot_set(args.fom)
        times = fom.times
        gen = fom.metadata.get("generator") or {}
        if args.fom_seconds is not None:
            t_fom = args.fom_seconds
        elif gen:
            t_fom = statistics.median(regenerate(fom.metadata)[1]
                                      for _ in range(args.fom_repetitions))
        else:
            raise ValidationError("no FOM timing source: the snapshot file records no "
                                  "generator; pass --fom-seconds", "fom_seconds")
        if gen.get("name") == "toy_capsule":
            dt_fom = ToyCapsule(**{k: v for k, v in gen.items() if k != "name"}).dt_fom
        elif gen:
            dt_fom = fom.dt
    else:
        raise ValidationError(f"{args.fom} is neither a snapshot file nor a ROM record", "fom")
    if args.fom_seconds is not None and not args.fom_seconds > 0:
        raise ValidationError("must be > 0", "fom_seconds")
    t_rom = _time_rom(m, times, args.repetitions)
    speedup = t_fom / t_rom
    _write_csv(args.out, ["dt_fom", "t_fom", "t_rom", "speedup"], [(dt_fom, t_fom, t_rom,
                                                                    speedup)])
    print(f"t_fom = {t_fom:.4g} s, t_rom = {t_rom * 1e3:.3f} ms, speedup = {speedup:.1f}")
    return 0


def cmd_storage(args) -> int:
    directory = Path(args.db)
    if not directory.is_dir():
        raise RomIOError(f"{directory} is not a directory")
    rows = []
    tot_snap = tot_rom = 0
    for p in sorted(directory.glob("*.romsnap")):
        if _file_kind(p) != "romsnap":
            continue
        snap_bytes = p.stat().st_size
        rec = p.with_suffix(".romrec")
        if rec.is_file():
            rom_bytes, source = rec.stat().st_size, "file"
        else:
            n_nodes = read_snapshot_header(p)[1]
            rom_bytes = rom_record_size(n_nodes, args.modes)
            source = f"formula_K{args.modes}"
        rows.append((p.name, snap_bytes, rom_bytes, snap_bytes / rom_bytes, source))
        tot_snap += snap_bytes
        tot_rom += rom_bytes
    if rows:
        rows.append(("TOTAL", tot_snap, tot_rom, tot_snap / tot_rom, ""))
    _write_csv(args.out, ["sample", "snapshot_bytes", "rom_bytes", "ratio", "rom_source"],
               rows)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="rom", description="POD + regularized DMD reduced-order models from snapshots.",
        epilog="Exit codes: 0 ok, 2 validation error, 3 numeric failure, 4 I/O error. "
               "ROM_THREADS caps worker threads.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate synthetic snapshot data")
    ssub = p.add_subparsers(dest="kind", required=True, metavar="KIND")
    q = ssub.add_parser("linear", help="exact linear reduced dynamics lifted to node space",
                        formatter_class=fmt)
    q.add_argument("--k", type=int, default=10, help="reduced dimension")
    q.add_argument("--d", type=int, default=7686, help="degrees of freedom (multiple of 3)")
    q.add_argument("--n", type=int, default=250, help="number of snapshots")
    q.add_argument("--dt", type=float, default=0.04, help="snapshot spacing")
    q.add_argument("--spectrum", choices=SPECTRA, default="stable", help="spectrum type")
    q.add_argument("--seed", type=int, default=1, help="random seed")
    q.add_argument("--out", required=True, help="output ROMSNAP1 file or CSV directory")
    q.set_defaults(func=cmd_synth)
    q = ssub.add_parser("capsule", help="nonlinear toy capsule (verification oracle)",
                        formatter_class=fmt)
    toy = ToyCapsule()
    q.add_argument("--nodes", type=int, default=toy.n_nodes, help="number of nodes")
    q.add_argument("--n", type=int, default=toy.n_snapshots, help="number of snapshots")
    q.add_argument("--dt", type=float, default=toy.dt, help="snapshot spacing")
    q.add_argument("--ca-like", dest="ca_like", type=float, default=toy.ca,
                   help="first parameter")
    q.add_argument("--ratio-like", dest="ratio_like", type=float, default=toy.ratio,
                   help="second parameter")
    q.add_argument("--nonlinearity", type=float, default=toy.nonlinearity,
                   help="nonlinear stiffening amplitude")
    q.add_argument("--dt-fom", dest="dt_fom", type=float, default=toy.dt_fom,
                   help="internal Ralston step")
    q.add_argument("--seed", type=int, default=toy.seed, help="random seed")
    q.add_argument("--out", required=True, help="output ROMSNAP1 file or CSV directory")
    q.set_defaults(func=cmd_synth)

    p = sub.add_parser("pod", help="POD basis and RIC curve", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="snapshot file")
    _training_flags(p, lcurve=False)
    p.add_argument("--out", help="basis output (ROMREC1 with zero dynamics)")
    p.add_argument("--ric-csv", dest="ric_csv", help="CSV with columns K,ric")
    _config_flag(p)
    p.set_defaults(func=cmd_pod)

    p = sub.add_parser("train", help="identify a reduced model", formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="snapshot file")
    _training_flags(p)
    p.add_argument("--out", required=True, help="ROMREC1 output")
    p.add_argument("--diagnostics", help="CSV with columns t,R (relative time residual)")
    p.add_argument("--lcurve-csv", dest="lcurve_csv",
                   help="CSV with columns mu,residual,norm,selected "
                        "(default: lcurve.csv beside --diagnostics or --out)")
    _config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="propagate a reduced model", formatter_class=fmt)
    p.add_argument("--model", required=True, help="ROMREC1 file")
    p.add_argument("--t-end", dest="t_end", type=float,
                   help=f"final time (default: {_DEFAULTS.t_end:g})")
    p.add_argument("--dt-out", dest="dt_out", type=float,
                   help=f"output spacing / Euler step (default: {_DEFAULTS.dt_out:g})")
    p.add_argument("--scheme", choices=("exact", "euler"),
                   help=f"time integration (default: {_DEFAULTS.scheme})")
    p.add_argument("--out", required=True, help="trajectory output (ROMSNAP1)")
    p.add_argument("--diagnostics",
                   help="CSV with columns quantity,index,real,imag (spectra, spectral radius)")
    _config_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="shape error of a model against FOM data",
                       formatter_class=fmt)
    p.add_argument("--fom", required=True, help="snapshot file")
    p.add_argument("--model", required=True, help="ROMREC1 file")
    p.add_argument("--out", required=True, help="CSV with columns t,eps_shape,rms_indexed")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study-learning", help="end-horizon error vs learning time",
                       formatter_class=fmt)
    p.add_argument("--in", dest="inp", required=True, help="snapshot file")
    p.add_argument("--tl", default="2,4,6,8", help="comma-separated learning times")
    _training_flags(p, lcurve=False)
    p.add_argument("--out", required=True, help="CSV with columns t_learn,eps_shape_end")
    _config_flag(p)
    p.set_defaults(func=cmd_study_learning)

    for name, helptext in (("interpolate", "reduced model at an unseen parameter couple"),
                           ("sweep", "interpolated-model error over a test database")):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("--db", required=True, help="directory of training snapshot files")
        if name == "interpolate":
            p.add_argument("--ca", type=float, required=True, help="first parameter")
            p.add_argument("--ratio", type=float, required=True, help="second parameter")
            p.add_argument("--out", required=True, help="ROMREC1 output")
            p.add_argument("--predicted", help="write the interpolated trajectory (ROMSNAP1)")
        else:
            p.add_argument("--test", required=True, help="directory of test snapshot files")
            p.add_argument("--out", required=True, help="CSV with columns ca,ratio,t,eps_shape")
        p.add_argument("--scale", default="1,1", help="per-axis distance weights")
        p.add_argument("--resample", action="store_true",
                       help="linearly resample samples onto a common time grid")
        _training_flags(p)
        _config_flag(p)
        p.set_defaults(func=cmd_interpolate if name == "interpolate" else cmd_sweep)

    p = sub.add_parser("bench", help="ROM vs FOM wall-clock speedup", formatter_class=fmt)
    p.add_argument("--fom", required=True,
                   help="snapshot file with generator metadata (or a ROMREC1 file)")
    p.add_argument("--model", required=True, help="ROMREC1 file")
    p.add_argument("--repetitions", type=int, default=5, help="ROM timing repetitions (>= 3)")
    p.add_argument("--fom-repetitions", dest="fom_repetitions", type=int, default=1,
                   help="FOM regeneration repetitions")
    p.add_argument("--fom-seconds", dest="fom_seconds", type=float,
                   help="recorded FOM runtime in seconds (skips regeneration)")
    p.add_argument("--out", required=True, help="CSV with columns dt_fom,t_fom,t_rom,speedup")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("storage", help="snapshot vs ROM storage per sample",
                       formatter_class=fmt)
    p.add_argument("--db", required=True, help="directory of snapshot files")
    p.add_argument("--modes", type=int, default=_DEFAULTS.max_modes,
                   help="K assumed when no .romrec sits beside a sample")
    p.add_argument("--out", required=True,
                   help="CSV with columns sample,snapshot_bytes,rom_bytes,ratio,rom_source")
    p.set_defaults(func=cmd_storage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except RomError as exc:
        print(f"rom {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"rom {args.command}: I/O error: {exc}", file=sys.stderr)
        return 4
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"rom {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"rom {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
