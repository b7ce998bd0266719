"""Pointwise linear elasticity built on central differences of a displacement field.

A *field* is any callable mapping an ``(n, 2)`` array of points to an
``(n, 2)`` array of displacements: a network, an exact solution, a lambda.
Gradients are returned with ``G[..., i, j] = du_i / dx_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_E = np.eye(2)


@dataclass(frozen=True)
class Material:
    """Isotropic Lamé parameters."""

    mu: float
    lam: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"shear modulus must be positive, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


def elastic_from_E_nu(E: float, nu: float) -> Material:
    """Plane-strain Lamé parameters from Young's modulus and Poisson's ratio."""
    if not E > 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    return Material(mu, lam)


@dataclass(frozen=True)
class PointState:
    grad_u: np.ndarray
    strain: np.ndarray
    div_u: float | np.ndarray
    stress: np.ndarray


def _points(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _check_step(dx):
    if not dx > 0:
        raise ValueError(f"difference step must be positive, got {dx}")


def nd_gradient(field, x, dx: float) -> np.ndarray:
    """Central-difference displacement gradient at one point or an array of points."""
    _check_step(dx)
    pts, single = _points(x)
    n = len(pts)
    stencil = np.concatenate([pts + dx * _E[0], pts - dx * _E[0], pts + dx * _E[1], pts - dx * _E[1]])
    u = np.asarray(field(stencil), dtype=float)
    G = np.empty((n, 2, 2))
    G[:, :, 0] = (u[:n] - u[n:2 * n]) / (2 * dx)
    G[:, :, 1] = (u[2 * n:3 * n] - u[3 * n:]) / (2 * dx)
    return G[0] if single else G


def strain(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def divergence(G: np.ndarray) -> np.ndarray:
    return G[..., 0, 0] + G[..., 1, 1]


def stress(mat: Material, G) -> np.ndarray:
    """``2 mu eps + lam (div u) I`` from a displacement gradient."""
    G = np.asarray(G, dtype=float)
    return 2 * mat.mu * strain(G) + mat.lam * divergence(G)[..., None, None] * _E


def point_state(mat: Material, G) -> PointState:
    G = np.asarray(G, dtype=float)
    return PointState(G, strain(G), divergence(G), stress(mat, G))


def nd_stress(field, mat: Material, x, dx: float) -> np.ndarray:
    return stress(mat, nd_gradient(field, x, dx))


def stress_divergence(field, mat: Material, x, dx: float) -> np.ndarray:
    """``div sigma`` by central differences of the difference-based stress."""
    _check_step(dx)
    pts, single = _points(x)
    n = len(pts)
    shifted = np.concatenate([pts + dx * _E[0], pts - dx * _E[0], pts + dx * _E[1], pts - dx * _E[1]])
    S = nd_stress(field, mat, shifted, dx)
    div = (S[:n, :, 0] - S[n:2 * n, :, 0] + S[2 * n:3 * n, :, 1] - S[3 * n:, :, 1]) / (2 * dx)
    return div[0] if single else div
