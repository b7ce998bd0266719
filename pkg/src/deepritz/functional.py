"""Composite midpoint quadrature and the discrete penalised energy.

The discrete energy of a displacement field is assembled from field values at
a fixed set of points: cell centroids and their four central-difference
neighbours, Dirichlet edge midpoints and their two tangential neighbours, and
Neumann edge midpoints.  :class:`EnergyPlan` precomputes those points and all
data terms for a mesh, so that training only needs one forward pass, the
energy, and its gradient with respect to every evaluated displacement.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .elasticity import stress
from .mesh import BoundaryEdge, EdgeSet, QuadMesh, min_cell_size

_E = np.eye(2)


@dataclass(frozen=True)
class PenaltyConfig:
    gamma_D: float

    def __post_init__(self):
        if not self.gamma_D > 0:
            raise ValueError(f"gamma_D must be positive, got {self.gamma_D}")

    def gamma(self, material) -> float:
        return material.mu * self.gamma_D


@dataclass(frozen=True)
class EnergyBreakdown:
    """Terms of the discrete energy, each stored with the sign it carries.

    The load terms hold ``-(f, u)`` and ``-(g_N, u)``, so the six components
    sum to ``total``.
    """

    strain: float
    divergence: float
    penalty_l2: float
    penalty_seminorm: float
    body_load: float
    traction_load: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ErrorNorms:
    energy: float
    stress: float
    displacement: float
    exact_energy_norm: float


# --------------------------------------------------------------------------
# Midpoint rules and the boundary seminorm
# --------------------------------------------------------------------------

def integrate_cells(mesh: QuadMesh, integrand) -> float:
    """``sum_T v(x_T) |T|``."""
    v = np.asarray(integrand(mesh.centroids), dtype=float)
    return float(mesh.measures @ v)


def integrate_edges(edges: EdgeSet, integrand) -> float:
    if len(edges) == 0:
        return 0.0
    v = np.asarray(integrand(edges.midpoint), dtype=float)
    return float(edges.measure @ v)


def _geodesic(edges: EdgeSet, s, t, segment: int):
    d = np.abs(s - t)
    period = dict(edges.periods).get(segment)
    if period is not None:
        d = np.minimum(d, period - d)
    return d


def divided_difference(v, e1: BoundaryEdge, e2: BoundaryEdge) -> np.ndarray:
    """Divided difference of the field ``v`` between two edge midpoints.

    On the diagonal it is the tangential derivative at the midpoint, taken by
    central differences along the boundary with step ``|E|/4``.
    """
    if e1.segment != e2.segment:
        raise ValueError(f"edges lie on different Dirichlet pieces ({e1.segment} and {e2.segment})")
    if e1.index == e2.index:
        delta = e1.measure / 4
        local = e1.side.arc_of(np.asarray([e1.midpoint]))[0]
        pts = e1.side.point_at(np.array([local + delta, local - delta]))
        vals = np.asarray(v(pts), dtype=float)
        return (vals[0] - vals[1]) / (2 * delta)
    vals = np.asarray(v(np.array([e1.midpoint, e2.midpoint])), dtype=float)
    d = abs(e1.arc_midpoint - e2.arc_midpoint)
    if e1.period is not None:
        d = min(d, e1.period - d)
    return (vals[0] - vals[1]) / d


def _pair_weights(edges: EdgeSet):
    """Per Dirichlet piece: edge indices and ``|E||E'| / d(E, E')^2`` off the diagonal."""
    out = []
    for k, idx in edges.by_segment().items():
        s = edges.arc[idx]
        w = edges.measure[idx]
        d = _geodesic(edges, s[:, None], s[None, :], k)
        np.fill_diagonal(d, 1.0)
        W = np.outer(w, w) / d**2
        np.fill_diagonal(W, 0.0)
        out.append((idx, W))
    return out


def _boundary_samples(edges: EdgeSet, v, masked: bool):
    delta = edges.measure / 4
    plus, minus = edges.stencil(delta)
    m = len(edges)
    vals = np.asarray(v(np.concatenate([edges.midpoint, plus, minus])), dtype=float)
    mid, vp, vm = vals[:m], vals[m:2 * m], vals[2 * m:]
    if masked:
        mask = edges.mask.astype(float)
        mid, vp, vm = mid * mask, vp * mask, vm * mask
    return mid, (vp - vm) / (2 * delta[:, None])


def slobodeckij_seminorm_sq(edges: EdgeSet, v, masked: bool = False) -> float:
    """Discrete double-sum seminorm over each Dirichlet piece, diagonal included."""
    if len(edges) == 0:
        return 0.0
    mid, tangential = _boundary_samples(edges, v, masked)
    total = 0.0
    for idx, W in _pair_weights(edges):
        diff = mid[idx][:, None, :] - mid[idx][None, :, :]
        total += float(np.sum(W * np.sum(diff**2, axis=-1)))
    total += float(np.sum(edges.measure**2 * np.sum(tangential**2, axis=-1)))
    return total


def h_half_norm_sq(edges: EdgeSet, v, masked: bool = False) -> float:
    if len(edges) == 0:
        return 0.0
    mid, _ = _boundary_samples(edges, v, masked)
    l2 = float(edges.measure @ np.sum(mid**2, axis=-1))
    return l2 + slobodeckij_seminorm_sq(edges, v, masked)


# --------------------------------------------------------------------------
# Discrete energy
# --------------------------------------------------------------------------

class EnergyPlan:
    """Evaluation points and data of the discrete energy on one mesh.

    ``points`` lists every location where the displacement is needed.  Given
    the displacements ``U`` there, :meth:`evaluate` returns the energy terms
    and optionally ``dJ/dU``, which is exact for the discrete functional
    (difference stencils included).
    """

    def __init__(self, mesh: QuadMesh, problem, penalty: PenaltyConfig, dx: float | None = None):
        if problem.geometry.kind != mesh.geometry.kind:
            raise ValueError(f"mesh geometry {mesh.geometry.kind!r} does not match problem "
                             f"geometry {problem.geometry.kind!r}")
        self.mesh = mesh
        self.problem = problem
        self.penalty = penalty
        self.dx = min_cell_size(mesh) / 4 if dx is None else float(dx)
        if not self.dx > 0:
            raise ValueError(f"difference step must be positive, got {dx}")
        mat = problem.material
        self.material = mat
        self.gamma = penalty.gamma(mat)

        c = mesh.centroids
        n = len(c)
        dx_ = self.dx
        cell_pts = np.concatenate([c, c + dx_ * _E[0], c - dx_ * _E[0], c + dx_ * _E[1], c - dx_ * _E[1]])
        self.n_cells = n
        self.w_cell = mesh.measures
        self.f_cell = np.asarray(problem.body_force(c), dtype=float)

        D = mesh.dirichlet
        self.dirichlet = D
        m = len(D)
        self.n_dir = m
        if m:
            self.delta = D.measure / 4
            plus, minus = D.stencil(self.delta)
            dir_pts = np.concatenate([D.midpoint, plus, minus])
            g = np.asarray(problem.dirichlet(dir_pts), dtype=float)
            self.g_mid, self.g_plus, self.g_minus = g[:m], g[m:2 * m], g[2 * m:]
            self.mask_dir = D.mask.astype(float)
            self.pairs = [(idx, W, W.sum(axis=1)) for idx, W in _pair_weights(D)]
        else:
            dir_pts = np.zeros((0, 2))
            self.pairs = []

        N = mesh.neumann
        self.n_neu = len(N)
        if len(N):
            gN = np.asarray(problem.traction(N.midpoint), dtype=float)
            self.neumann_load = N.measure[:, None] * N.mask * gN
        else:
            self.neumann_load = np.zeros((0, 2))

        self.points = np.ascontiguousarray(np.concatenate([cell_pts, dir_pts, N.midpoint]))
        self._dir_start = 5 * n
        self._neu_start = 5 * n + 3 * m

    def __len__(self) -> int:
        return len(self.points)

    def cell_gradients(self, U: np.ndarray) -> np.ndarray:
        n, dx = self.n_cells, self.dx
        G = np.empty((n, 2, 2))
        G[:, :, 0] = (U[n:2 * n] - U[2 * n:3 * n]) / (2 * dx)
        G[:, :, 1] = (U[3 * n:4 * n] - U[4 * n:5 * n]) / (2 * dx)
        return G

    def _boundary(self, U, with_data: bool):
        m, s = self.n_dir, self._dir_start
        mid, plus, minus = U[s:s + m], U[s + m:s + 2 * m], U[s + 2 * m:s + 3 * m]
        if with_data:
            mid, plus, minus = mid - self.g_mid, plus - self.g_plus, minus - self.g_minus
        mask = self.mask_dir
        return mid * mask, (plus - minus) * mask / (2 * self.delta[:, None])

    def evaluate(self, U, *, grad: bool = False, with_data: bool = True):
        """Energy terms of displacements ``U`` sampled at :attr:`points`.

        With ``with_data=False`` the loads and Dirichlet data are dropped, so
        the total is the quadratic form ``a_T(v, v) / 2``.
        """
        U = np.asarray(U, dtype=float)
        if U.shape != self.points.shape:
            raise ValueError(f"expected displacements of shape {self.points.shape}, got {U.shape}")
        mat, gamma, n, dx = self.material, self.gamma, self.n_cells, self.dx
        w = self.w_cell
        G = self.cell_gradients(U)
        eps = 0.5 * (G + np.swapaxes(G, 1, 2))
        div = G[:, 0, 0] + G[:, 1, 1]
        strain_term = 0.5 * float(w @ (2 * mat.mu * np.einsum("nij,nij->n", eps, eps)))
        div_term = 0.5 * float(w @ (mat.lam * div**2))
        if with_data:
            body = -float(np.sum(w[:, None] * self.f_cell * U[:n]))
            s = self._neu_start
            traction = -float(np.sum(self.neumann_load * U[s:s + self.n_neu]))
        else:
            body = traction = 0.0

        l2 = semi = 0.0
        if self.n_dir:
            R, T = self._boundary(U, with_data)
            wD = self.dirichlet.measure
            l2 = float(wD @ np.sum(R**2, axis=1))
            semi = float(np.sum(wD**2 * np.sum(T**2, axis=1)))
            lap = np.zeros_like(R)
            for idx, W, rs in self.pairs:
                r = R[idx]
                lap[idx] = rs[:, None] * r - W @ r
            semi += 2.0 * float(np.sum(R * lap))
        pen_l2 = 0.5 * gamma * l2
        pen_semi = 0.5 * gamma * semi
        total = strain_term + div_term + pen_l2 + pen_semi + body + traction
        breakdown = EnergyBreakdown(strain_term, div_term, pen_l2, pen_semi, body, traction, total)
        if not grad:
            return breakdown

        dU = np.zeros_like(U)
        sig = w[:, None, None] * stress(mat, G) / (2 * dx)
        dU[n:2 * n] = sig[:, :, 0]
        dU[2 * n:3 * n] = -sig[:, :, 0]
        dU[3 * n:4 * n] = sig[:, :, 1]
        dU[4 * n:5 * n] = -sig[:, :, 1]
        if with_data:
            dU[:n] = -w[:, None] * self.f_cell
            s = self._neu_start
            dU[s:s + self.n_neu] = -self.neumann_load
        if self.n_dir:
            m, s = self.n_dir, self._dir_start
            wD = self.dirichlet.measure
            dR = gamma * wD[:, None] * R + 2.0 * gamma * lap
            dT = gamma * (wD**2)[:, None] * T / (2 * self.delta[:, None])
            mask = self.mask_dir
            dU[s:s + m] = dR * mask
            dU[s + m:s + 2 * m] = dT * mask
            dU[s + 2 * m:s + 3 * m] = -dT * mask
        return breakdown, dU

    def energy_and_gradient(self, net):
        """Energy of a network and its parameter gradient."""
        from .network import value_and_grad

        return value_and_grad(net, self.points, lambda U: self.evaluate(U, grad=True))

    def bilinear(self, U) -> float:
        """``a_T(v, v)`` for displacements sampled at :attr:`points`."""
        return 2.0 * self.evaluate(U, with_data=False).total


def default_dx(mesh: QuadMesh) -> float:
    return min_cell_size(mesh) / 4


def discrete_energy(field, mesh: QuadMesh, problem, penalty: PenaltyConfig, dx: float | None = None) -> EnergyBreakdown:
    plan = EnergyPlan(mesh, problem, penalty, dx)
    return plan.evaluate(field(plan.points))


def energy_norm_error(field, mesh: QuadMesh, problem, penalty: PenaltyConfig, dx: float | None = None,
                      plan: EnergyPlan | None = None) -> ErrorNorms:
    """Relative energy-norm, stress and displacement errors against the exact solution.

    All three use the same midpoint quadrature and difference stencils on
    ``mesh``, applied to the exact field, the approximation and their difference.
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    plan = plan or EnergyPlan(mesh, problem, penalty, dx)
    exact = np.asarray(problem.exact(plan.points), dtype=float)
    approx = np.asarray(field(plan.points), dtype=float)
    err = exact - approx
    a_err = plan.bilinear(err)
    a_exact = plan.bilinear(exact)
    mat = problem.material
    w = plan.w_cell
    n = plan.n_cells
    s_exact = stress(mat, plan.cell_gradients(exact))
    s_err = stress(mat, plan.cell_gradients(err))
    sig_num = float(w @ np.einsum("nij,nij->n", s_err, s_err))
    sig_den = float(w @ np.einsum("nij,nij->n", s_exact, s_exact))
    u_num = float(w @ np.sum(err[:n] ** 2, axis=1))
    u_den = float(w @ np.sum(exact[:n] ** 2, axis=1))
    return ErrorNorms(
        energy=math.sqrt(max(a_err, 0.0) / a_exact),
        stress=math.sqrt(sig_num / sig_den),
        displacement=math.sqrt(u_num / u_den),
        exact_energy_norm=math.sqrt(a_exact),
    )
