"""Benchmark problems: smooth square, L-shape corner singularity, plate with a hole."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adapt import indicators
from .elasticity import Material, elastic_from_E_nu, nd_gradient, stress
from .functional import PenaltyConfig, energy_norm_error
from .mesh import Geometry, QuadMesh, l_shape, min_cell_size, plate_with_hole, rectangle, refine

Field = Callable[[np.ndarray], np.ndarray]


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    """Geometry, material and data of a linear elasticity problem.

    ``dirichlet`` and ``traction`` are evaluated on boundary points; which
    components they constrain or load is decided by the geometry's sides.
    """

    name: str
    geometry: Geometry
    material: Material
    body_force: Field
    dirichlet: Field
    traction: Field
    exact: Field | None = None
    exact_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    reference: dict = field(default_factory=dict)

    def exact_stress(self, x) -> np.ndarray:
        if self.exact_gradient is None:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        return stress(self.material, self.exact_gradient(np.atleast_2d(x)))


# --------------------------------------------------------------------------
# Case I: manufactured smooth solution on (-1, 1)^2
# --------------------------------------------------------------------------

def case1(mu: float = 1.0, lam: float = 1.0) -> ProblemSpec:
    """Clamped square loaded on ``x = 1``; exact ``u = (1-x^2)(1-y^2)(1, 1)``."""
    mat = Material(mu, lam)

    def exact(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        v = (1 - x**2) * (1 - y**2)
        return np.stack([v, v], axis=1)

    def gradient(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        vx = -2 * x * (1 - y**2)
        vy = -2 * y * (1 - x**2)
        row = np.stack([vx, vy], axis=1)
        return np.stack([row, row], axis=1)

    def body_force(p):
        p = np.atleast_2d(p)
        x, y = p[:, 0], p[:, 1]
        return np.stack([
            2 * mu * (3 - x**2 - 2 * y**2 - 2 * x * y) + 2 * lam * (1 - y**2 - 2 * x * y),
            2 * mu * (3 - 2 * x**2 - y**2 - 2 * x * y) + 2 * lam * (1 - x**2 - 2 * x * y),
        ], axis=1)

    def traction(p):
        y = np.atleast_2d(p)[:, 1]
        return 2 * (y**2 - 1)[:, None] * np.array([2 * mu + lam, mu])

    return ProblemSpec("case1", rectangle(neumann=("right",)), mat, body_force, _zero, traction,
                       exact=exact, exact_gradient=gradient,
                       reference={"potential_energy": -512.0 / 45.0} if mu == lam == 1 else {})


# --------------------------------------------------------------------------
# Case II: L-shape with a re-entrant corner
# --------------------------------------------------------------------------

OMEGA = 3 * math.pi / 4


def critical_exponent(omega: float = OMEGA, tol: float = 1e-12) -> float:
    """Root in (0, 1) of ``alpha sin(2 omega) + sin(2 omega alpha) = 0`` by bisection."""
    def g(a):
        return a * math.sin(2 * omega) + math.sin(2 * omega * a)

    lo, hi = 0.1, 0.99
    if g(lo) * g(hi) > 0:
        raise ValueError(f"no sign change for omega={omega}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(lo) * g(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


BISECTOR = 3 * math.pi / 4


def _polar_angle(x, y):
    # cut along the diagonal of the removed quadrant, so difference stencils
    # that poke out of the re-entrant edges stay on the smooth branch
    theta = np.arctan2(y, x)
    return np.where(theta <= -math.pi / 4, theta + 2 * math.pi, theta)


class LShapeSolution:
    """Singular corner solution in polar form, with analytic stress.

    The angular profiles are symmetric about the bisector of the domain, so
    they are evaluated at the angle measured from it; this puts the
    traction-free flanks of the mode on the re-entrant edges.
    """

    def __init__(self, mat: Material, alpha: float | None = None, omega: float = OMEGA):
        self.mat = mat
        self.alpha = critical_exponent(omega) if alpha is None else alpha
        self.omega = omega
        a = self.alpha
        self.C1 = -math.cos((a + 1) * omega) / math.cos((a - 1) * omega)
        self.C2 = 2 * (mat.lam + 2 * mat.mu) / (mat.lam + mat.mu)

    def _angular(self, theta):
        """``A, B`` without the ``r^alpha / (2 mu)`` factor, and their theta-derivatives."""
        a, C1, C2 = self.alpha, self.C1, self.C2
        p, m = 1 + a, 1 - a
        A = -p * np.cos(p * theta) + C1 * (C2 - 1 - a) * np.cos(m * theta)
        B = p * np.sin(p * theta) - C1 * (C2 - 1 + a) * np.sin(m * theta)
        dA = p * p * np.sin(p * theta) - C1 * (C2 - 1 - a) * m * np.sin(m * theta)
        dB = p * p * np.cos(p * theta) - C1 * (C2 - 1 + a) * m * np.cos(m * theta)
        return A, B, dA, dB

    def displacement(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        r = np.hypot(x, y)
        th = _polar_angle(x, y)
        A, B, _, _ = self._angular(th - BISECTOR)
        scale = r**self.alpha / (2 * self.mat.mu)
        c, s = np.cos(th), np.sin(th)
        return np.stack([scale * (A * c - B * s), scale * (A * s + B * c)], axis=1)

    def gradient(self, pts):
        """Cartesian displacement gradient from the polar strain components."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        r = np.hypot(x, y)
        th = _polar_angle(x, y)
        A, B, dA, dB = self._angular(th - BISECTOR)
        a = self.alpha
        k = r ** (a - 1) / (2 * self.mat.mu)
        # polar gradient of u_r e_r + u_t e_t, rows (r, t) columns (d/dr, (1/r) d/dt)
        g_rr = a * A * k
        g_rt = (dA - B) * k
        g_tr = a * B * k
        g_tt = (dB + A) * k
        c, s = np.cos(th), np.sin(th)
        Q = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
        Gp = np.stack([np.stack([g_rr, g_rt], axis=1), np.stack([g_tr, g_tt], axis=1)], axis=1)
        return Q @ Gp @ np.swapaxes(Q, 1, 2)


def case2(E: float = 100000.0, nu: float = 0.3) -> ProblemSpec:
    """L-shape with the exact singular solution as Dirichlet data; Neumann on ``{x=1, 0<y<1}``."""
    mat = elastic_from_E_nu(E, nu)
    sol = LShapeSolution(mat)

    def traction(p):
        sig = stress(mat, sol.gradient(p))
        return sig @ np.array([1.0, 0.0])

    return ProblemSpec("case2", l_shape(), mat, _zero, sol.displacement, traction,
                       exact=sol.displacement, exact_gradient=sol.gradient,
                       reference={"alpha": sol.alpha, "C1": sol.C1, "C2": sol.C2})


# --------------------------------------------------------------------------
# Case III: quarter plate with a hole under tension
# --------------------------------------------------------------------------

def case3(E: float = 206900.0, nu: float = 0.29, load: float = 4.5, radius: float = 1.0) -> ProblemSpec:
    """Traction ``(0, load)`` on the top edge, symmetry conditions on the cut edges."""
    mat = elastic_from_E_nu(E, nu)
    geometry = plate_with_hole(radius=radius)
    top = geometry.chart.L

    def traction(p):
        p = np.atleast_2d(p)
        out = np.zeros_like(p)
        out[np.abs(p[:, 1] - top) < 1e-9, 1] = load
        return out

    return ProblemSpec("case3", geometry, mat, _zero, _zero, traction,
                       reference={"max_stress_yy": 13.8876, "max_displacement": 2.288e-4})


PROBLEMS = {"case1": case1, "case2": case2, "case3": case3}


def problem_by_name(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}") from None


# --------------------------------------------------------------------------
# Error reporting
# --------------------------------------------------------------------------

def eval_mesh_for(mesh: QuadMesh, factor: int = 2) -> QuadMesh:
    """Uniformly subdivide every cell ``factor`` times per axis (factor a power of two)."""
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"refinement factor must be a power of two, got {factor}")
    out = mesh
    while factor > 1:
        out = refine(out, out.keys)
        factor //= 2
    return out


def report_errors(net, problem: ProblemSpec, eval_mesh: QuadMesh, penalty=None,
                  indicator_mesh: QuadMesh | None = None) -> dict:
    """One row of an error table for ``net`` on ``eval_mesh``.

    Problems with an exact solution report relative energy, stress and
    displacement errors; otherwise the maxima of ``|u|`` and ``sigma_yy`` at
    the evaluation centroids are reported next to the reference values.  The
    mean indicator is computed on ``indicator_mesh`` (default ``eval_mesh``).
    """
    penalty = penalty or PenaltyConfig(1.0)
    row: dict = {"problem": problem.name, "cells": len(eval_mesh)}
    if problem.exact is not None:
        err = energy_norm_error(net, eval_mesh, problem, penalty)
        row.update(energy_error=err.energy, stress_error=err.stress, displacement_error=err.displacement)
    elif problem.reference:
        c = eval_mesh.centroids
        u = net(c)
        dx = min_cell_size(eval_mesh) / 4
        sig = stress(problem.material, nd_gradient(net, c, dx))
        row.update(max_displacement=float(np.max(np.hypot(u[:, 0], u[:, 1]))),
                   max_stress_yy=float(np.max(sig[:, 1, 1])),
                   ref_max_displacement=problem.reference.get("max_displacement"),
                   ref_max_stress_yy=problem.reference.get("max_stress_yy"))
    else:
        raise ValueError(f"problem {problem.name!r} has neither an exact solution nor reference values")
    ind_mesh = indicator_mesh or eval_mesh
    field = indicators(net, ind_mesh, problem)
    row["mean_indicator"] = field.mean
    return row
