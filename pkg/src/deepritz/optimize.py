"""Adam with step-decay learning rates, and the full-batch training loop."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functional import EnergyPlan, PenaltyConfig
from .mesh import QuadMesh
from .network import MlpParams, save_checkpoint


class NumericalError(RuntimeError):
    """The loss or its gradient became non-finite during training."""

    def __init__(self, message: str, iteration: int, param_norm: float):
        super().__init__(f"{message} at iteration {iteration} (parameter norm {param_norm:.6g})")
        self.iteration = iteration
        self.param_norm = param_norm


@dataclass(frozen=True)
class LrSchedule:
    """``initial * decay ** (iteration // interval)``; ``decay=1`` gives a fixed rate."""

    initial: float = 0.01
    decay: float = 0.1
    interval: int = 50000

    def __post_init__(self):
        if not self.initial > 0:
            raise ValueError(f"learning rate must be positive, got {self.initial}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay factor must lie in (0, 1], got {self.decay}")
        if self.interval < 1:
            raise ValueError(f"decay interval must be at least 1, got {self.interval}")

    def rate(self, iteration: int) -> float:
        if iteration < 0:
            raise ValueError(f"iteration must be non-negative, got {iteration}")
        return self.initial * self.decay ** (iteration // self.interval)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, schedule: LrSchedule | None = None) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, schedule or LrSchedule())


def schedule_lr(state: AdamState, iteration: int) -> float:
    return state.schedule.rate(iteration)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float | None = None) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update of a flat parameter vector.

    The rate defaults to the schedule evaluated at the current step count.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    if lr is None:
        lr = state.schedule.rate(state.t)
    b1, b2 = state.beta1, state.beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.schedule, b1, b2, state.eps)


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    loss: float
    terms: dict
    grad_norm: float
    lr: float

    def to_json(self) -> str:
        return json.dumps({"iteration": self.iteration, "loss": self.loss, "terms": self.terms,
                           "grad_norm": self.grad_norm, "lr": self.lr})


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)
    wall_time: float = 0.0

    def append(self, record: TrainRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("training log iterations must increase")
        self.records.append(record)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.write_text("".join(r.to_json() + "\n" for r in self.records))
        return path


def train(net: MlpParams, mesh: QuadMesh, problem, penalty: PenaltyConfig, iterations: int,
          schedule: LrSchedule | None = None, *, log_every: int = 100, dx: float | None = None,
          checkpoint_every: int = 0, checkpoint_dir=None, plan: EnergyPlan | None = None,
          log_stream=None) -> tuple[MlpParams, TrainLog]:
    """Minimise the discrete energy over the network parameters with full-batch Adam.

    Every iteration evaluates the loss and its exact gradient on all
    quadrature points.  Records are kept for iteration 0, every
    ``log_every`` iterations and the final state; with ``iterations=0`` the
    log holds the loss of the given weights.  ``log_stream`` receives each
    record as a JSON line as soon as it is made.
    """
    import time

    if iterations < 0:
        raise ValueError(f"iterations must be non-negative, got {iterations}")
    if log_every < 1:
        raise ValueError(f"log_every must be at least 1, got {log_every}")
    schedule = schedule or LrSchedule()
    plan = plan or EnergyPlan(mesh, problem, penalty, dx)
    sizes = net.sizes
    theta = net.flatten()
    state = AdamState.fresh(theta.size, schedule)
    log = TrainLog()
    start = time.perf_counter()
    current = net.copy()

    for it in range(iterations + 1):
        breakdown, g = plan.energy_and_gradient(current)
        grad = g.flatten()
        if not (np.isfinite(breakdown.total) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite loss", it, float(np.linalg.norm(theta)))
        lr = schedule.rate(it)
        if it % log_every == 0 or it == iterations:
            rec = TrainRecord(it, breakdown.total, breakdown.to_dict(), float(np.linalg.norm(grad)), lr)
            log.append(rec)
            if log_stream is not None:
                log_stream.write(rec.to_json() + "\n")
        if checkpoint_every and checkpoint_dir is not None and it and it % checkpoint_every == 0:
            save_checkpoint(current, Path(checkpoint_dir) / f"weights_{it:08d}.txt")
        if it == iterations:
            break
        theta, state = adam_step(theta, grad, state, lr)
        current = MlpParams.unflatten(sizes, theta)

    log.wall_time = time.perf_counter() - start
    return current, log
