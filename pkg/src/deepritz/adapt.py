"""Residual error indicators, marking strategies and adaptive quadrature refinement."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .elasticity import Material, nd_gradient, stress
from .functional import PenaltyConfig, energy_norm_error
from .mesh import QuadMesh, export_mesh_csv, min_cell_size, refine
from .network import MlpParams, save_checkpoint
from .optimize import LrSchedule, train


@dataclass(frozen=True)
class IndicatorField:
    """Cell ids with their indicator values, and optionally a marked subset."""

    keys: np.ndarray
    eta: np.ndarray
    marked: np.ndarray | None = None

    def __post_init__(self):
        if self.keys.shape != self.eta.shape:
            raise ValueError("one indicator value per cell is required")
        if np.any(self.eta < 0):
            raise ValueError("indicator values must be non-negative")

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def total(self) -> float:
        return math.fsum(self.eta)

    @property
    def mean(self) -> float:
        if not len(self):
            raise ValueError("empty indicator field")
        return self.total / len(self)

    def with_marked(self, ids) -> "IndicatorField":
        ids = np.asarray(ids, dtype=np.int64)
        if not np.isin(ids, self.keys).all():
            raise ValueError("marked ids must be cells of the field")
        return replace(self, marked=ids)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "eta"])
            for k, e in zip(self.keys, self.eta):
                w.writerow([int(k), repr(float(e))])
        return path


def _check_dx(dx):
    if not dx > 0:
        raise ValueError(f"difference step must be positive, got {dx}")


def local_indicator(net, mat: Material, problem, cell, dx: float, mesh: QuadMesh | None = None) -> float:
    """``|sum_faces sigma(x_F) . int_F n dS + f(x_T) |T||`` for one cell.

    ``cell`` is a cell id of ``mesh`` or, on rectangular charts, a
    :class:`~deepritz.mesh.Cell`, whose faces are then taken as straight.
    """
    _check_dx(dx)
    if mesh is not None:
        i = mesh.index_of(cell if isinstance(cell, (int, np.integer)) else cell.key)
        mids, nds = (a[i] for a in mesh.face_geometry)
        centroid, measure = mesh.centroids[i], mesh.measures[i]
    else:
        x0, y0 = cell.lower_corner
        w, h = cell.side_lengths
        corners = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]])
        mids = 0.5 * (corners + np.roll(corners, -1, axis=0))
        chord = np.roll(corners, -1, axis=0) - corners
        nds = np.stack([chord[:, 1], -chord[:, 0]], axis=1)
        centroid, measure = np.array([x0 + w / 2, y0 + h / 2]), w * h
    sig = stress(mat, nd_gradient(net, mids, dx))
    flux = np.einsum("fij,fj->i", sig, nds)
    load = np.asarray(problem.body_force(centroid[None]), dtype=float)[0] * measure
    return float(np.linalg.norm(flux + load))


def indicators(net, mesh: QuadMesh, problem, dx: float | None = None) -> IndicatorField:
    """Indicator of every cell of ``mesh``; ``dx`` defaults to a quarter of the smallest cell size."""
    dx = min_cell_size(mesh) / 4 if dx is None else dx
    _check_dx(dx)
    mids, nds = mesh.face_geometry
    n = len(mesh)
    sig = stress(problem.material, nd_gradient(net, mids.reshape(-1, 2), dx)).reshape(n, 4, 2, 2)
    flux = np.einsum("nfij,nfj->ni", sig, nds)
    load = np.asarray(problem.body_force(mesh.centroids), dtype=float) * mesh.measures[:, None]
    return IndicatorField(mesh.keys.copy(), np.linalg.norm(flux + load, axis=1))


def mark_average(field: IndicatorField, gamma2: float = 1.0) -> np.ndarray:
    """Ids of cells with ``eta_T >= gamma2 * mean(eta)``, ties included."""
    if not gamma2 > 0:
        raise ValueError(f"gamma2 must be positive, got {gamma2}")
    if not len(field):
        raise ValueError("empty indicator field")
    # compare eta * #T with gamma2 * sum so that equal values tie exactly
    return field.keys[field.eta * len(field) >= gamma2 * field.total]


def mark_bulk(field: IndicatorField, gamma1: float = 0.5) -> np.ndarray:
    """Smallest set of cells carrying a ``gamma1`` share of the squared indicator.

    Cells are taken in order of decreasing indicator, ties by increasing id.
    """
    if not 0 < gamma1 < 1:
        raise ValueError(f"gamma1 must lie in (0, 1), got {gamma1}")
    order = np.lexsort((field.keys, -field.eta))
    csum = np.cumsum(field.eta[order] ** 2)
    if not len(csum) or csum[-1] == 0:
        return field.keys[:0]
    count = int(np.searchsorted(csum, gamma1 * csum[-1], side="left")) + 1
    return field.keys[order[:count]]


STRATEGIES = ("average", "bulk")


@dataclass(frozen=True)
class AqrConfig:
    """Settings of the adaptive loop.

    ``eta_tol`` is an absolute floor: when the mean indicator of the current
    approximation is at or below it, nothing is refined.  ``eval_factor``
    subdivides each mesh this many times per axis to measure errors against
    an exact solution (0 skips error evaluation).
    """

    strategy: str = "average"
    gamma1: float = 0.5
    gamma2: float = 1.0
    gamma_stop: float = 0.9
    max_runs: int = 4
    iterations: int = 1000
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.001, 1.0, 1))
    eta_tol: float = 1e-6
    log_every: int = 100
    eval_factor: int = 2

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown marking strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0 < self.gamma1 < 1:
            raise ValueError(f"gamma1 must lie in (0, 1), got {self.gamma1}")
        if not self.gamma2 > 0:
            raise ValueError(f"gamma2 must be positive, got {self.gamma2}")
        if not self.gamma_stop > 0:
            raise ValueError(f"gamma_stop must be positive, got {self.gamma_stop}")
        if self.max_runs < 1:
            raise ValueError(f"max_runs must be at least 1, got {self.max_runs}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")

    def mark(self, field: IndicatorField) -> np.ndarray:
        if self.strategy == "average":
            return mark_average(field, self.gamma2)
        return mark_bulk(field, self.gamma1)


@dataclass
class AqrResult:
    net: MlpParams
    mesh: QuadMesh
    history: list[dict]
    status: str
    indicator: IndicatorField


def _row(run: int, net, mesh: QuadMesh, field: IndicatorField, problem, penalty, cfg: AqrConfig,
         accepted: bool) -> dict:
    row = {"run": run, "cells": len(mesh), "mean_indicator": field.mean, "accepted": accepted}
    if problem.exact is not None and cfg.eval_factor:
        from .bench import eval_mesh_for

        err = energy_norm_error(net, eval_mesh_for(mesh, cfg.eval_factor), problem, penalty)
        row.update(energy_error=err.energy, stress_error=err.stress, displacement_error=err.displacement)
    return row


def _write_run(out: Path | None, run: int, net, mesh, field: IndicatorField, log=None) -> None:
    if out is None:
        return
    d = out / f"run_{run:02d}"
    d.mkdir(parents=True, exist_ok=True)
    field.write_csv(d / "indicators.csv")
    with (d / "marked.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"])
        for k in (field.marked if field.marked is not None else []):
            w.writerow([int(k)])
    export_mesh_csv(mesh, d / "mesh")
    if isinstance(net, MlpParams):
        save_checkpoint(net, d / "weights.txt")
    if log is not None:
        log.write_jsonl(d / "train_log.jsonl")


def aqr_run(net: MlpParams, mesh: QuadMesh, problem, config: AqrConfig,
            penalty: PenaltyConfig | None = None, out_dir=None, progress=None) -> AqrResult:
    """Indicator, mark, refine, retrain; repeat while the mean indicator keeps dropping.

    ``net`` must already be trained on ``mesh``; it is recorded as run 1.  A
    refined run is accepted when its mean indicator is at most
    ``gamma_stop`` times the previous one; otherwise the loop stops and the
    last accepted network and mesh are returned.  ``progress`` is called
    with each history row.
    """
    penalty = penalty or PenaltyConfig(1.0)
    out = Path(out_dir) if out_dir is not None else None
    emit = progress or (lambda row: None)

    field = indicators(net, mesh, problem)
    history = [_row(1, net, mesh, field, problem, penalty, config, True)]
    emit(history[-1])
    status = "max-runs"
    run, run_log = 1, None
    while True:
        if field.mean <= config.eta_tol:
            status = "converged-indicator"
            _write_run(out, run, net, mesh, field, run_log)
            break
        marked = config.mark(field)
        field = field.with_marked(marked)
        _write_run(out, run, net, mesh, field, run_log)
        if not len(marked):
            status = "converged-marking"
            break
        if run >= config.max_runs:
            break
        new_mesh = refine(mesh, marked)
        new_net, log = train(net, new_mesh, problem, penalty, config.iterations, config.schedule,
                             log_every=config.log_every)
        new_field = indicators(new_net, new_mesh, problem)
        accepted = new_field.mean <= config.gamma_stop * field.mean
        run += 1
        history.append(_row(run, new_net, new_mesh, new_field, problem, penalty, config, accepted))
        emit(history[-1])
        if not accepted:
            status = "stopped-by-criterion"
            _write_run(out, run, new_net, new_mesh, new_field, log)
            break
        net, mesh, field, run_log = new_net, new_mesh, new_field, log
    return AqrResult(net, mesh, history, status, field)
