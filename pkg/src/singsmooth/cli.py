"""Command-line front end.

Subcommands::

    singsmooth synth   --out DIR [--seed S]           # fig1 + nav synthetic data
    singsmooth smooth  --input DIR --out DIR [--gap G] # IMU + USBL -> track
    singsmooth compare --input DIR --out DIR           # baselines and ablation

Inputs are headed CSV files (UTF-8, LF): ``imu.csv`` with
``t,ax,ay,az,heading,pitch,roll``, ``usbl.csv`` with ``t,x,y,z`` and an
optional ``truth.csv`` with ``t,x,y,z,vx,vy,vz``.  A JSON file passed with
``--config`` overrides defaults; flags override the file.

Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 model error,
4 solver did not converge (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .blocklinalg import assemble, gram, write_matrix_market
from .errors import ModelError, OracleError, ParameterError, SingSmoothError
from .navigation import (ImuStream, NavConfig, UsblStream, build_problem, fix_velocity,
                         subsample_usbl)
from .penalties import Penalty
from .reference import pinv_huber_smoother
from .scenarios import Fig1Scenario, fig1_problem, fig1_scenario, nav_scenario, rmse
from .solver import SolverConfig, solve, warm_start

log = logging.getLogger("singsmooth")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_MODEL, EXIT_NOCONV = 0, 1, 2, 3, 4

IMU_COLUMNS = ("t", "ax", "ay", "az", "heading", "pitch", "roll")
USBL_COLUMNS = ("t", "x", "y", "z")
TRUTH_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz")
FIG1_MEAS_COLUMNS = ("t", "y")
FIG1_TRUTH_COLUMNS = ("t", "position", "velocity", "outlier")
TRACK_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az")
BIAS_COLUMNS = ("b1", "b2", "b3")
COMPARE_COLUMNS = ("scenario", "method", "rmse", "iterations", "converged")

FMT = "{:.10g}"
NAV_BLOCK_SCALE = (1.0, 3.0, 30.0)


class ConfigError(ParameterError):
    pass


def default_solver():
    """CLI solver defaults: looser tolerance and nav-tuned block scaling."""
    return SolverConfig(tol_rel=1e-6, block_scale=NAV_BLOCK_SCALE)


@dataclass
class SynthConfig:
    """Synthetic scenario settings (see :mod:`singsmooth.scenarios`)."""

    duration: float = 120.0
    imu_rate: float = 5.0
    fix_period: float = 2.0
    accel_std: float = 0.05
    quantization: float = 0.05
    bias: tuple = (0.08, -0.05, 0.12)
    accel_outlier_fraction: float = 0.03
    accel_outlier_std: float = 3.0
    attitude_wobble: float = 0.05
    speed: tuple = (0.05, 0.25)
    period: tuple = (40.0, 120.0)
    fig1_N: int = 100
    fig1_T: float = 1.0
    fig1_vel_std: float = 0.1
    fig1_meas_std: float = 1.0
    fig1_outlier_fraction: float = 0.1
    fig1_outlier_scale: float = 10.0

    def __post_init__(self):
        self.bias = tuple(float(b) for b in np.broadcast_to(self.bias, (3,)))
        self.speed = tuple(float(v) for v in self.speed)
        self.period = tuple(float(v) for v in self.period)
        if len(self.speed) != 2 or len(self.period) != 2 or min(self.period) <= 0:
            raise ConfigError("speed and period are (low, high) ranges, periods positive")
        if self.duration <= 0 or self.imu_rate <= 0 or self.fix_period <= 0:
            raise ConfigError("duration, imu_rate and fix_period must be positive")
        if not 0 <= self.fig1_outlier_fraction <= 1 or not 0 <= self.accel_outlier_fraction <= 1:
            raise ConfigError("outlier fractions must lie in [0, 1]")


@dataclass
class RunConfig:
    """Everything a run needs; ``to_dict`` is what ``--dump-config`` prints."""

    seed: int = 0
    gap: float = 0.0
    input: str = "."
    out: str = "out"
    strict: bool = False
    dump_matrices: bool = False
    record_wall_time: bool = False
    nav: NavConfig = field(default_factory=NavConfig)
    solver: SolverConfig = field(default_factory=default_solver)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.gap < 0:
            raise ConfigError("gap must be nonnegative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            if "nav" in d:
                d["nav"] = NavConfig.from_dict(d["nav"])
            if "solver" in d:
                d["solver"] = SolverConfig.from_dict({**default_solver().to_dict(),
                                                      **d["solver"]})
            if "synth" in d:
                extra = set(d["synth"]) - {f.name for f in fields(SynthConfig)}
                if extra:
                    raise ConfigError(f"unknown synth options: {sorted(extra)}")
                d["synth"] = SynthConfig(**d["synth"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(**d)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (NavConfig, SolverConfig)):
                v = v.to_dict()
            elif isinstance(v, SynthConfig):
                v = {g.name: (list(getattr(v, g.name)) if isinstance(getattr(v, g.name), tuple)
                              else getattr(v, g.name)) for g in fields(v)}
            out[f.name] = v
        return out


# --------------------------------------------------------------------- CSV I/O

def _fmt(x):
    return FMT.format(float(x))


def write_table(path, header, columns):
    """Write equal-length columns under ``header`` with fixed number formatting."""
    rows = zip(*columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def read_table(path, header):
    """Read a headed numeric CSV; the header must match ``header`` exactly."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != tuple(header):
        raise ModelError(f"{path}: expected header {','.join(header)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as e:
        raise ModelError(f"{path}: {e}") from None
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ModelError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise ModelError(f"{path}: non-finite values")
    return data


def load_inputs(directory):
    imu = read_table(os.path.join(directory, "imu.csv"), IMU_COLUMNS)
    usbl = read_table(os.path.join(directory, "usbl.csv"), USBL_COLUMNS)
    tpath = os.path.join(directory, "truth.csv")
    truth = read_table(tpath, TRUTH_COLUMNS) if os.path.exists(tpath) else None
    return (ImuStream(imu[:, 0], imu[:, 1:4], imu[:, 4:7]),
            UsblStream(usbl[:, 0], usbl[:, 1:4]), truth)


def _truth_at(truth, t):
    """Truth position and velocity interpolated onto times ``t``."""
    return np.column_stack([np.interp(t, truth[:, 0], truth[:, j]) for j in range(1, 7)])


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _round(x, digits=10):
    return float(f"{x:.{digits}g}")


# ---------------------------------------------------------------- nav helpers

def smooth_nav(imu, usbl, nav, solver_cfg, gap=0.0):
    """Subsample fixes, build the problem, warm start and solve."""
    fixes = subsample_usbl(usbl, gap) if gap > 0 else usbl
    p = build_problem(imu, fixes, nav)
    init = warm_start(p, fixes.pos[0], fix_velocity(fixes), nav.damping)
    res = solve(p, solver_cfg, init=init)
    return p, res, fixes


def ablation_configs(nav):
    """The nav ablation: plain quadratic model, then bias, then robust losses."""
    quad = dict(process_penalty=Penalty.quadratic(), accel_penalty=Penalty.quadratic())
    base = {k: v for k, v in nav.to_dict().items()
            if k not in ("process_penalty", "accel_penalty", "estimate_bias")}
    base = NavConfig.from_dict(base).__dict__
    return {
        "l2": NavConfig(**{**base, **quad, "estimate_bias": False}),
        "l2+bias": NavConfig(**{**base, **quad, "estimate_bias": True}),
        "hubnik+bias": NavConfig(**{**base, "process_penalty": nav.process_penalty,
                                    "accel_penalty": nav.accel_penalty,
                                    "estimate_bias": True}),
    }


# ----------------------------------------------------------------- commands

def cmd_synth(cfg):
    s = cfg.synth
    os.makedirs(cfg.out, exist_ok=True)
    f1 = fig1_scenario(seed=cfg.seed, N=s.fig1_N, T=s.fig1_T, vel_std=s.fig1_vel_std,
                       meas_std=s.fig1_meas_std, outlier_fraction=s.fig1_outlier_fraction,
                       outlier_scale=s.fig1_outlier_scale)
    write_table(os.path.join(cfg.out, "fig1_meas.csv"), FIG1_MEAS_COLUMNS, [f1.t, f1.y])
    write_table(os.path.join(cfg.out, "fig1_truth.csv"), FIG1_TRUTH_COLUMNS,
                [f1.t, f1.truth[:, 0], f1.truth[:, 1], f1.outliers.astype(float)])

    nav = nav_scenario(seed=cfg.seed, duration=s.duration, imu_rate=s.imu_rate,
                       fix_period=s.fix_period, accel_std=s.accel_std,
                       quantization=s.quantization, U_diag=cfg.nav.U_diag, bias=s.bias,
                       accel_outlier_fraction=s.accel_outlier_fraction,
                       accel_outlier_std=s.accel_outlier_std,
                       attitude_wobble=s.attitude_wobble, speed=s.speed, period=s.period)
    write_table(os.path.join(cfg.out, "imu.csv"), IMU_COLUMNS,
                [nav.imu.t, *nav.imu.accel.T, *nav.imu.attitude.T])
    write_table(os.path.join(cfg.out, "usbl.csv"), USBL_COLUMNS, [nav.usbl.t, *nav.usbl.pos.T])
    write_table(os.path.join(cfg.out, "truth.csv"), TRUTH_COLUMNS,
                [nav.truth_t, *nav.truth_pos.T, *nav.truth_vel.T])
    _dump_json(os.path.join(cfg.out, "scenario.json"), {
        "seed": cfg.seed,
        "bias": [float(b) for b in nav.bias],
        "fig1": {"x0": [float(v) for v in f1.x0], "T": f1.T, "vel_std": f1.vel_std,
                 "meas_std": f1.meas_std},
    })
    log.info("wrote synthetic data to %s", cfg.out)
    return EXIT_OK


def cmd_smooth(cfg):
    imu, usbl, truth = load_inputs(cfg.input)
    p, res, fixes = smooth_nav(imu, usbl, cfg.nav, cfg.solver, cfg.gap)
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.dump_matrices:
        A, _ = assemble(p)
        write_matrix_market(os.path.join(cfg.out, ""), A, gram(A))
    X = res.states
    header = TRACK_COLUMNS + (BIAS_COLUMNS if X.shape[1] > 9 else ())
    write_table(os.path.join(cfg.out, "track.csv"), header, [imu.t, *X.T])
    res.write_diagnostics(os.path.join(cfg.out, "diagnostics.csv"))
    summary = {
        "N": p.N,
        "fixes_used": len(fixes),
        "gap": cfg.gap,
        "iterations": res.iterations,
        "converged": res.converged,
        "objective": _round(res.objective),
        "feas_residual": _round(res.feas_residual, 6),
    }
    if X.shape[1] > 9:
        summary["bias"] = [_round(b) for b in X[0, 9:12]]
    if truth is not None:
        ref = _truth_at(truth, imu.t)
        summary["rmse_position"] = _round(rmse(X[:, :3], ref[:, :3]))
        summary["rmse_velocity"] = _round(rmse(X[:, 3:6], ref[:, 3:6]))
    if cfg.record_wall_time:
        summary["wall_time"] = res.wall_time
    _dump_json(os.path.join(cfg.out, "summary.json"), summary)
    log.info("smoothed %d steps in %d iterations (%.2f s)", p.N, res.iterations, res.wall_time)
    if cfg.strict and not res.converged:
        log.error("solver did not converge")
        return EXIT_NOCONV
    return EXIT_OK


def _load_fig1(directory):
    meas = read_table(os.path.join(directory, "fig1_meas.csv"), FIG1_MEAS_COLUMNS)
    tr = read_table(os.path.join(directory, "fig1_truth.csv"), FIG1_TRUTH_COLUMNS)
    with open(os.path.join(directory, "scenario.json"), encoding="utf-8") as fh:
        info = json.load(fh)["fig1"]
    return Fig1Scenario(meas[:, 0], tr[:, 1:3], meas[:, 1], tr[:, 3] > 0,
                        np.array(info["x0"]), info["T"], info["vel_std"], info["meas_std"])


def cmd_compare(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    not_converged = False

    f1 = _load_fig1(cfg.input)
    tracks = {}
    for name, loss in (("l2-singular", "l2"), ("huber-singular", "huber")):
        r = solve(fig1_problem(f1, loss), cfg.solver)
        tracks[name] = r.states[:, 0]
        rows.append(("fig1", name, rmse(tracks[name][:, None], f1.truth[:, :1]),
                     r.iterations, r.converged))
        not_converged |= not r.converged
    X, info = pinv_huber_smoother(fig1_problem(f1, "huber"))
    tracks["pinv-huber"] = X[:, 0]
    rows.append(("fig1", "pinv-huber", rmse(X[:, :1], f1.truth[:, :1]),
                 info["iterations"], info["converged"]))
    write_table(os.path.join(cfg.out, "fig1_tracks.csv"), ("t", "truth", *tracks),
                [f1.t, f1.truth[:, 0], *tracks.values()])

    imu, usbl, truth = load_inputs(cfg.input)
    cols, names = [imu.t], ["t"]
    ref = _truth_at(truth, imu.t) if truth is not None else None
    if ref is not None:
        cols += list(ref[:, :3].T)
        names += ["truth_x", "truth_y", "truth_z"]
    for name, nav in ablation_configs(cfg.nav).items():
        _, r, _ = smooth_nav(imu, usbl, nav, cfg.solver, cfg.gap)
        X = r.states
        err = rmse(X[:, :3], ref[:, :3]) if ref is not None else float("nan")
        rows.append(("nav", name, err, r.iterations, r.converged))
        not_converged |= not r.converged
        cols += list(X[:, :3].T)
        names += [f"{name}_{a}" for a in "xyz"]
    write_table(os.path.join(cfg.out, "nav_tracks.csv"), names, cols)

    with open(os.path.join(cfg.out, "compare.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for sc, m, e, it, ok in rows:
            w.writerow([sc, m, _fmt(e), it, str(bool(ok)).lower()])
    if cfg.strict and not_converged:
        return EXIT_NOCONV
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "smooth": cmd_smooth, "compare": cmd_compare}


def build_parser():
    ap = argparse.ArgumentParser(prog="singsmooth", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--dump-config", action="store_true",
                        help="print the effective configuration and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name != "synth":
            sp.add_argument("--input", help="directory holding the input CSV files")
            sp.add_argument("--gap", type=float, help="minimum seconds between USBL fixes used")
            sp.add_argument("--strict", action="store_true",
                            help="exit with status 4 if the solver does not converge")
        if name == "smooth":
            sp.add_argument("--dump-matrices", action="store_true",
                            help="write A and A A^T as Matrix Market files")
            sp.add_argument("--timing", action="store_true",
                            help="record wall time in summary.json")
    return ap


def resolve_config(args):
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{args.config}: {e}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    flags = {"seed": args.seed, "out": args.out, "input": getattr(args, "input", None),
             "gap": getattr(args, "gap", None)}
    for k, v in flags.items():
        if v is not None:
            base[k] = v
    for k, attr in (("strict", "strict"), ("dump_matrices", "dump_matrices"),
                    ("record_wall_time", "timing")):
        if getattr(args, attr, False):
            base[k] = True
    return RunConfig.from_dict(base)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        return COMMANDS[args.command](cfg)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, OracleError, SingSmoothError, ValueError) as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
