"""Command-line front end: ``solve``, ``aqr``, ``eval`` and ``export-mesh``.

Runs are described by an INI file.  Every section and key is optional
except the seed, which must come from ``[run] seed`` or ``--seed``::

    [problem]
    name = case1
    gamma_D = 100

    [network]
    layers = 2, 8, 8, 2
    init_checkpoint =             ; warm start from saved weights

    [mesh]
    nx = 100
    ny = 100

    [train]
    iterations = 20000
    lr = 0.01
    decay = 0.1
    interval = 5000
    log_every = 100
    checkpoint_every = 0

    [aqr]
    strategy = average
    gamma2 = 1.0
    gamma_stop = 0.9
    max_runs = 4
    iterations = 1000
    lr = 0.001
    decay = 1.0
    interval = 1

    [eval]
    factor = 2
    grid = 201

    [run]
    seed = 0
    out = runs/case1
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import platform
import shutil
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .adapt import AqrConfig, aqr_run
from .bench import PROBLEMS, eval_mesh_for, problem_by_name, report_errors
from .elasticity import nd_gradient, stress
from .functional import PenaltyConfig
from .mesh import build_uniform, export_mesh_csv, min_cell_size
from .network import CheckpointError, MlpParams, init, load_checkpoint, save_checkpoint
from .optimize import LrSchedule, NumericalError, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

# plane-strain conversions are used for problems defined by Young's modulus and Poisson's ratio
_E_NU_PROBLEMS = {"case2", "case3"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


class OutputCollision(OSError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str
    layers: tuple[int, ...]
    nx: int
    ny: int
    gamma_D: float
    iterations: int
    schedule: LrSchedule
    log_every: int
    checkpoint_every: int
    aqr: AqrConfig
    gamma2_given: bool
    eval_factor: int
    grid: int
    seed: int
    out: str | None
    init_checkpoint: str | None

    def canonical(self) -> dict:
        """Resolved settings as plain data, the basis of the manifest hash."""
        aqr = self.aqr
        return {
            "problem": self.problem, "layers": list(self.layers), "nx": self.nx, "ny": self.ny,
            "gamma_D": self.gamma_D, "iterations": self.iterations,
            "schedule": [self.schedule.initial, self.schedule.decay, self.schedule.interval],
            "log_every": self.log_every, "checkpoint_every": self.checkpoint_every,
            "aqr": {"strategy": aqr.strategy, "gamma1": aqr.gamma1, "gamma2": aqr.gamma2,
                    "gamma_stop": aqr.gamma_stop, "max_runs": aqr.max_runs, "iterations": aqr.iterations,
                    "schedule": [aqr.schedule.initial, aqr.schedule.decay, aqr.schedule.interval],
                    "eta_tol": aqr.eta_tol, "eval_factor": aqr.eval_factor},
            "eval_factor": self.eval_factor, "grid": self.grid, "seed": self.seed,
            "init_checkpoint": self.init_checkpoint,
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Parse and validate a run configuration, reporting every problem at once."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    errors: list[str] = []

    def get(section, key, conv, default):
        if not parser.has_option(section, key) or parser.get(section, key).strip() == "":
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            errors.append(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}")
            return default

    def layers(raw):
        return tuple(int(v) for v in raw.replace(",", " ").split())

    problem = get("problem", "name", str, "case1").strip()
    if problem not in PROBLEMS:
        errors.append(f"[problem] name = {problem!r} is not one of {sorted(PROBLEMS)}")
    gamma_D = get("problem", "gamma_D", float, 100.0)
    net_layers = get("network", "layers", layers, (2, 8, 8, 2))
    if len(net_layers) < 2 or net_layers[0] != 2 or net_layers[-1] != 2 or min(net_layers) < 1:
        errors.append(f"[network] layers = {net_layers} must start and end with 2 and be positive")
    nx = get("mesh", "nx", int, 100)
    ny = get("mesh", "ny", int, nx)
    iterations = get("train", "iterations", int, 20000)
    log_every = get("train", "log_every", int, 100)
    checkpoint_every = get("train", "checkpoint_every", int, 0)
    eval_factor = get("eval", "factor", int, 2)
    grid = get("eval", "grid", int, 201)
    seed_cfg = get("run", "seed", int, None)
    init_ckpt = get("network", "init_checkpoint", str, None)

    def schedule(section, lr, decay, interval):
        try:
            return LrSchedule(get(section, "lr", float, lr), get(section, "decay", float, decay),
                              get(section, "interval", int, interval))
        except ValueError as exc:
            errors.append(f"[{section}] {exc}")
            return LrSchedule(lr, decay, interval)

    sched = schedule("train", 0.01, 0.1, 5000)
    aqr_sched = schedule("aqr", 0.001, 1.0, 1)
    gamma2_given = parser.has_option("aqr", "gamma2")
    try:
        aqr = AqrConfig(strategy=get("aqr", "strategy", str, "average").strip(),
                        gamma1=get("aqr", "gamma1", float, 0.5), gamma2=get("aqr", "gamma2", float, 1.0),
                        gamma_stop=get("aqr", "gamma_stop", float, 0.9),
                        max_runs=get("aqr", "max_runs", int, 4), iterations=get("aqr", "iterations", int, 1000),
                        schedule=aqr_sched, eta_tol=get("aqr", "eta_tol", float, 1e-6),
                        log_every=log_every if log_every >= 1 else 1,
                        eval_factor=get("aqr", "eval_factor", int, eval_factor))
    except ValueError as exc:
        errors.append(f"[aqr] {exc}")
        aqr = AqrConfig()

    if not gamma_D > 0:
        errors.append(f"[problem] gamma_D must be positive, got {gamma_D}")
    if nx < 1 or ny < 1:
        errors.append(f"[mesh] nx and ny must be at least 1, got {nx} x {ny}")
    if iterations < 0:
        errors.append(f"[train] iterations must be non-negative, got {iterations}")
    if log_every < 1:
        errors.append(f"[train] log_every must be at least 1, got {log_every}")
    if checkpoint_every < 0:
        errors.append(f"[train] checkpoint_every must be non-negative, got {checkpoint_every}")
    if eval_factor < 1 or eval_factor & (eval_factor - 1):
        errors.append(f"[eval] factor must be a power of two, got {eval_factor}")
    if grid < 2:
        errors.append(f"[eval] grid must be at least 2, got {grid}")
    seed = seed if seed is not None else seed_cfg
    if seed is None:
        errors.append("a seed is required: set [run] seed or pass --seed")
    elif seed < 0:
        errors.append(f"seed must be non-negative, got {seed}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(problem, net_layers, nx, ny, gamma_D, iterations, sched, log_every, checkpoint_every,
                     aqr, gamma2_given, eval_factor, grid, seed,
                     out if out is not None else get("run", "out", str, None), init_ckpt)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__, "deepritz": __version__}
    try:
        out["threadpoolctl"] = metadata.version("threadpoolctl")
    except metadata.PackageNotFoundError:
        pass
    return out


def _prepare_out(path: str | None, force: bool) -> Path:
    if path is None:
        raise ConfigError(["an output directory is required: set [run] out or pass --out"])
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OutputCollision(f"output directory {out} is not empty; use --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    manifest = {"command": command, "config_sha256": cfg.digest(), "seed": cfg.seed,
                "config": cfg.canonical(), "versions": _versions()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _setup(cfg: RunConfig):
    problem = problem_by_name(cfg.problem)
    if cfg.problem in _E_NU_PROBLEMS:
        _note("note: Lame parameters use the plane-strain conversion from E and nu")
    mesh = build_uniform(problem.geometry, cfg.nx, cfg.ny)
    return problem, mesh, PenaltyConfig(cfg.gamma_D)


def _initial_net(cfg: RunConfig) -> MlpParams:
    if cfg.init_checkpoint:
        net = load_checkpoint(cfg.init_checkpoint)
        if tuple(net.sizes) != cfg.layers:
            raise ConfigError([f"checkpoint layers {net.sizes} do not match [network] layers {list(cfg.layers)}"])
        return net
    return init(cfg.layers, cfg.seed)


def _write_rows(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def export_fields(net, problem, path: Path, n: int = 201, dx: float | None = None) -> Path:
    """Displacement and stress on an ``n x n`` grid over the bounding box, blank outside the closed domain."""
    x0, x1, y0, y1 = problem.geometry.box
    xs, ys = np.linspace(x0, x1, n), np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = problem.geometry.contains(pts, closed=True)
    dx = dx if dx is not None else min(x1 - x0, y1 - y0) / (4 * (n - 1))
    u = np.full((len(pts), 2), np.nan)
    sig = np.full((len(pts), 2, 2), np.nan)
    u[inside] = net(pts[inside])
    sig[inside] = stress(problem.material, nd_gradient(net, pts[inside], dx))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "inside", "u1", "u2", "s11", "s12", "s22"])
        for p, ins, uu, s in zip(pts, inside, u, sig):
            vals = [uu[0], uu[1], s[0, 0], s[0, 1], s[1, 1]] if ins else [""] * 5
            w.writerow([repr(float(p[0])), repr(float(p[1])), int(ins)] +
                       [repr(float(v)) if ins else v for v in vals])
    return path


def _error_row(net, problem, mesh, penalty, cfg: RunConfig) -> dict:
    row = report_errors(net, problem, eval_mesh_for(mesh, cfg.eval_factor), penalty, indicator_mesh=mesh)
    if problem.exact is not None:
        train_row = report_errors(net, problem, mesh, penalty)
        row.update({f"train_mesh_{k}": train_row[k] for k in ("energy_error", "stress_error",
                                                                "displacement_error")})
    return row


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, force: bool = False) -> dict:
    out = _prepare_out(cfg.out, force)
    _write_manifest(out, cfg, "solve")
    problem, mesh, penalty = _setup(cfg)
    net = _initial_net(cfg)
    ckpt_dir = out / "checkpoints" if cfg.checkpoint_every else None
    if ckpt_dir:
        ckpt_dir.mkdir()
    with (out / "train_log.jsonl").open("w") as stream:
        net, log = train(net, mesh, problem, penalty, cfg.iterations, cfg.schedule, log_every=cfg.log_every,
                         checkpoint_every=cfg.checkpoint_every, checkpoint_dir=ckpt_dir, log_stream=stream)
    save_checkpoint(net, out / "weights.txt")
    row = _error_row(net, problem, mesh, penalty, cfg)
    (out / "errors.json").write_text(json.dumps(row, indent=2) + "\n")
    _write_rows(out / "errors.csv", [row])
    export_fields(net, problem, out / "fields.csv", cfg.grid)
    summary = {"final_loss": log.records[-1].loss, "wall_time": log.wall_time, "cells": len(mesh),
               "errors": row}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_aqr(cfg: RunConfig, force: bool = False) -> dict:
    if not cfg.gamma2_given and cfg.aqr.strategy == "average":
        _note("warning: [aqr] gamma2 not set, using 1.0")
    out = _prepare_out(cfg.out, force)
    _write_manifest(out, cfg, "aqr")
    problem, mesh, penalty = _setup(cfg)
    net = _initial_net(cfg)
    if cfg.iterations:
        with (out / "train_log.jsonl").open("w") as stream:
            net, _ = train(net, mesh, problem, penalty, cfg.iterations, cfg.schedule,
                           log_every=cfg.log_every, log_stream=stream)
    elif not cfg.init_checkpoint:
        raise ConfigError(["aqr needs [network] init_checkpoint or a positive [train] iterations budget"])

    def progress(row):
        _note("run {run}: cells={cells} mean_indicator={mean_indicator:.6g}".format(**row))

    result = aqr_run(net, mesh, problem, cfg.aqr, penalty, out_dir=out, progress=progress)
    save_checkpoint(result.net, out / "weights.txt")
    _write_rows(out / "aqr_summary.csv", result.history)
    export_fields(result.net, problem, out / "fields.csv", cfg.grid)
    summary = {"status": result.status, "runs": result.history}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_eval(cfg: RunConfig, checkpoint: str, out: str | None = None) -> dict:
    net = load_checkpoint(checkpoint)
    if tuple(net.sizes) != cfg.layers:
        raise ConfigError([f"checkpoint layers {net.sizes} do not match [network] layers {list(cfg.layers)}"])
    problem, mesh, penalty = _setup(cfg)
    row = _error_row(net, problem, mesh, penalty, cfg)
    if out is not None:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_rows(path, [row])
    return row


def cmd_export_mesh(cfg: RunConfig, out: str | None) -> dict:
    problem = problem_by_name(cfg.problem)
    mesh = build_uniform(problem.geometry, cfg.nx, cfg.ny)
    if out is None:
        raise ConfigError(["export-mesh needs --out"])
    cells, edges = export_mesh_csv(mesh, out)
    return {"cells": len(mesh), "h": min_cell_size(mesh), "files": [str(cells), str(edges)]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepritz", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "train on a fixed uniform mesh"),
                        ("aqr", "train, then refine the quadrature adaptively"),
                        ("eval", "evaluate a saved checkpoint"),
                        ("export-mesh", "write the initial mesh as CSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
        p.add_argument("--out", help="output directory (eval: CSV file)")
        if name in ("solve", "aqr"):
            p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if name == "eval":
            p.add_argument("checkpoint", help="weights file written by solve or aqr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # eval and export-mesh do not train, so a seed is not needed there
        seed = args.seed if args.seed is not None or args.command in ("solve", "aqr") else 0
        cfg = load_config(args.config, seed=seed, out=args.out if args.command in ("solve", "aqr") else None)
        limiter = threadpool_limits(limits=max(1, args.threads)) if args.threads is not None else nullcontext()
        with limiter:
            start = time.perf_counter()
            if args.command == "solve":
                result = cmd_solve(cfg, args.force)
            elif args.command == "aqr":
                result = cmd_aqr(cfg, args.force)
            elif args.command == "eval":
                result = cmd_eval(cfg, args.checkpoint, args.out)
            else:
                result = cmd_export_mesh(cfg, args.out)
            _note(f"done in {time.perf_counter() - start:.1f} s")
        print(json.dumps(result, indent=2))
        return EXIT_OK
    except ConfigError as exc:
        _note(f"error: {exc}")
        return EXIT_CONFIG
    except NumericalError as exc:
        _note(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        _note(f"I/O error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _note(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
