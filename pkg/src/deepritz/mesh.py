"""Quadtree integration meshes and their boundary edge partitions.

A mesh is a set of axis-aligned boxes in a *chart* (parameter space) that is
mapped onto the physical domain.  Rectangular and L-shaped domains use the
identity chart; the plate with a circular hole uses a polar-type chart whose
rays run from the hole to the outer square.  Cells carry stable 64-bit keys
that encode their root position and quadtree path.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

ROOT_BITS = 21
MAX_DEPTH = (62 - ROOT_BITS) // 2

# child offsets in units of half the parent size: lower-left, lower-right, upper-left, upper-right
_QUADRANTS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)


# --------------------------------------------------------------------------
# Charts
# --------------------------------------------------------------------------

class IdentityChart:
    name = "identity"

    def map(self, xi: np.ndarray) -> np.ndarray:
        return np.asarray(xi, dtype=float)

    def cell_measure(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        return (hi[:, 0] - lo[:, 0]) * (hi[:, 1] - lo[:, 1])


class PlateHoleChart:
    """Polar-type chart of the quarter square ``(0, L)^2`` minus a disk of radius ``a``.

    Chart coordinates are ``(rho, theta)`` in ``[0, 1] x [0, pi/2]``; the point
    is ``r(rho, theta) (cos theta, sin theta)`` with ``r = a + rho (R(theta) - a)``
    and ``R(theta) = L / max(cos theta, sin theta)`` the distance to the square.
    Cell areas are integrated in closed form, so they are exact and additive.
    """

    name = "polar"

    def __init__(self, radius: float = 1.0, half_width: float = 10.0):
        self.a = float(radius)
        self.L = float(half_width)

    def outer_radius(self, theta):
        return self.L / np.maximum(np.cos(theta), np.sin(theta))

    def map(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        rho, theta = xi[..., 0], xi[..., 1]
        r = self.a + rho * (self.outer_radius(theta) - self.a)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def _antiderivatives(self, theta):
        # integrals of R and R^2 from 0 to theta, continued by symmetry past pi/4
        q = math.pi / 4
        lo = np.minimum(theta, q)
        hi = np.maximum(math.pi / 2 - theta, 0.0)
        first = self.L * np.arcsinh(np.tan(lo))
        second = self.L**2 * np.tan(lo)
        beyond = theta > q
        f_q = self.L * np.arcsinh(1.0)
        s_q = self.L**2
        first = np.where(beyond, 2 * f_q - self.L * np.arcsinh(np.tan(hi)), first)
        second = np.where(beyond, 2 * s_q - self.L**2 * np.tan(hi), second)
        return first, second

    def cell_measure(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        r1, r2 = lo[:, 0], hi[:, 0]
        f1, s1 = self._antiderivatives(lo[:, 1])
        f2, s2 = self._antiderivatives(hi[:, 1])
        i1, i2 = f2 - f1, s2 - s1
        dth = hi[:, 1] - lo[:, 1]
        a = self.a
        return 0.5 * (
            a * a * ((1 - r2) ** 2 - (1 - r1) ** 2) * dth
            + 2 * a * (r2 * (1 - r2) - r1 * (1 - r1)) * i1
            + (r2**2 - r1**2) * i2
        )


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Side:
    """One straight or circular piece of the domain boundary.

    ``axis``/``value`` place the side in the chart (the chart coordinate held
    fixed along it), ``lo``/``hi`` bound the other chart coordinate and
    ``outward`` is +1 when the side lies on the upper chart face of its cells.
    Physically the side runs from ``start`` to ``end``; a ``center`` turns it
    into a circular arc bounding a hole.  Dirichlet sides belong to a connected
    piece ``segment`` and start at arc length ``arc_offset`` within it.
    """

    name: str
    axis: int
    value: float
    lo: float
    hi: float
    outward: int
    start: tuple[float, float]
    end: tuple[float, float]
    normal: tuple[float, float] | None = None
    center: tuple[float, float] | None = None
    dirichlet: tuple[bool, bool] = (False, False)
    segment: int = -1
    arc_offset: float = 0.0

    @property
    def is_dirichlet(self) -> bool:
        return any(self.dirichlet)

    @property
    def is_neumann(self) -> bool:
        return not all(self.dirichlet)

    def _polar(self):
        c = np.asarray(self.center, dtype=float)
        s = np.asarray(self.start, dtype=float) - c
        e = np.asarray(self.end, dtype=float) - c
        radius = float(np.hypot(*s))
        a0 = math.atan2(s[1], s[0])
        a1 = math.atan2(e[1], e[0])
        return c, radius, a0, a1

    @property
    def length(self) -> float:
        if self.center is None:
            return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))
        _, radius, a0, a1 = self._polar()
        return radius * abs(a1 - a0)

    def point_at(self, arc) -> np.ndarray:
        """Physical points at local arc length ``arc`` from ``start``."""
        arc = np.asarray(arc, dtype=float)
        if self.center is None:
            p0 = np.asarray(self.start, dtype=float)
            t = self.tangent_at(arc)
            return p0 + arc[..., None] * t
        c, radius, a0, a1 = self._polar()
        ang = a0 + np.sign(a1 - a0) * arc / radius
        return c + radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    def arc_of(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.center is None:
            p0 = np.asarray(self.start, dtype=float)
            t = (np.asarray(self.end, dtype=float) - p0) / self.length
            return (points - p0) @ t
        c, radius, a0, a1 = self._polar()
        ang = np.arctan2(points[..., 1] - c[1], points[..., 0] - c[0])
        return radius * np.abs(ang - a0)

    def tangent_at(self, arc) -> np.ndarray:
        arc = np.asarray(arc, dtype=float)
        if self.center is None:
            p0 = np.asarray(self.start, dtype=float)
            t = (np.asarray(self.end, dtype=float) - p0) / self.length
            return np.broadcast_to(t, arc.shape + (2,)).copy()
        c, radius, a0, a1 = self._polar()
        sgn = np.sign(a1 - a0)
        ang = a0 + sgn * arc / radius
        return sgn * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)

    def normal_at(self, arc) -> np.ndarray:
        arc = np.asarray(arc, dtype=float)
        if self.center is None:
            return np.broadcast_to(np.asarray(self.normal, dtype=float), arc.shape + (2,)).copy()
        # arcs bound holes: the outward normal of the domain points to the center
        p = self.point_at(arc)
        c, radius, _, _ = self._polar()
        return (c - p) / radius


@dataclass(frozen=True)
class Geometry:
    """Domain description: chart, chart bounding box, boundary sides."""

    kind: str
    chart: object
    bounds: tuple[float, float, float, float]
    sides: tuple[Side, ...]
    area: float
    removed_box: tuple[float, float, float, float] | None = None
    aligned_lines: tuple[tuple[int, float], ...] = ()
    closed_segments: tuple[tuple[int, float], ...] = ()

    def excluded(self, chart_points: np.ndarray) -> np.ndarray:
        if self.removed_box is None:
            return np.zeros(len(chart_points), dtype=bool)
        x0, x1, y0, y1 = self.removed_box
        p = chart_points
        return (p[:, 0] > x0) & (p[:, 0] < x1) & (p[:, 1] > y0) & (p[:, 1] < y1)

    @property
    def box(self) -> tuple[float, float, float, float]:
        """Physical bounding box ``(x0, x1, y0, y1)``."""
        if self.kind == "quarter-annulus-membrane":
            return (0.0, self.chart.L, 0.0, self.chart.L)
        return self.bounds

    def contains(self, points: np.ndarray, closed: bool = False, tol: float = 1e-12) -> np.ndarray:
        """Physical points inside the domain, strictly unless ``closed``."""
        p = np.asarray(points, dtype=float)
        t = tol if closed else -tol
        x0, x1, y0, y1 = self.box
        inside = (p[:, 0] > x0 - t) & (p[:, 0] < x1 + t) & (p[:, 1] > y0 - t) & (p[:, 1] < y1 + t)
        if self.kind == "quarter-annulus-membrane":
            return inside & (np.hypot(p[:, 0], p[:, 1]) > self.chart.a - t)
        if self.removed_box is not None:
            r = self.removed_box
            inside &= ~((p[:, 0] > r[0] + t) & (p[:, 0] < r[1] - t) & (p[:, 1] > r[2] + t) & (p[:, 1] < r[3] - t))
        return inside

    @property
    def dirichlet_length(self) -> float:
        return sum(s.length for s in self.sides if s.is_dirichlet)

    @property
    def neumann_length(self) -> float:
        return sum(s.length for s in self.sides if s.is_neumann)


def rectangle(x0=-1.0, x1=1.0, y0=-1.0, y1=1.0, neumann=("right",)) -> Geometry:
    """Axis-aligned rectangle; sides not listed in ``neumann`` are clamped.

    The Dirichlet sides are chained counter-clockwise into connected pieces so
    that arc length along each piece is continuous.
    """
    corners = {"bottom": ((x1, y0), (x0, y0)), "left": ((x0, y0), (x0, y1)),
               "top": ((x0, y1), (x1, y1)), "right": ((x1, y1), (x1, y0))}
    # chart placement: (axis, value, lo, hi, outward, normal)
    place = {"bottom": (1, y0, x0, x1, -1, (0.0, -1.0)), "left": (0, x0, y0, y1, -1, (-1.0, 0.0)),
             "top": (1, y1, x0, x1, 1, (0.0, 1.0)), "right": (0, x1, y0, y1, 1, (1.0, 0.0))}
    unknown = set(neumann) - set(place)
    if unknown:
        raise ValueError(f"unknown rectangle sides {sorted(unknown)}")
    order = ["bottom", "left", "top", "right"]
    # rotate the cycle so a chain never wraps around the end of the list
    if any(n not in neumann for n in order) and neumann:
        first = next(i for i, n in enumerate(order) if n in neumann)
        order = order[first + 1:] + order[:first + 1]
    sides = []
    segment, offset, prev_dirichlet = -1, 0.0, False
    for name in order:
        axis, value, lo, hi, outward, normal = place[name]
        start, end = corners[name]
        if name in neumann:
            sides.append(Side(name, axis, value, lo, hi, outward, start, end, normal))
            prev_dirichlet = False
            continue
        if not prev_dirichlet:
            segment, offset = segment + 1, 0.0
        side = Side(name, axis, value, lo, hi, outward, start, end, normal,
                    dirichlet=(True, True), segment=segment, arc_offset=offset)
        sides.append(side)
        offset += side.length
        prev_dirichlet = True
    # a fully clamped rectangle is one closed loop; distances wrap around it
    closed = ((0, offset),) if not neumann else ()
    return Geometry("rectangle", IdentityChart(), (x0, x1, y0, y1), tuple(sides),
                    area=(x1 - x0) * (y1 - y0), closed_segments=closed)


def l_shape() -> Geometry:
    """``(-1,1)^2`` minus ``[0,1] x [-1,0]``; Neumann on ``{x=1, 0<y<1}``.

    The Dirichlet boundary is one connected piece running from (1,1) around
    the domain to (1,0).
    """
    d = (True, True)
    specs = [
        ("top", 1, 1.0, -1.0, 1.0, 1, (1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)),
        ("left", 0, -1.0, -1.0, 1.0, -1, (-1.0, 1.0), (-1.0, -1.0), (-1.0, 0.0)),
        ("bottom", 1, -1.0, -1.0, 0.0, -1, (-1.0, -1.0), (0.0, -1.0), (0.0, -1.0)),
        ("notch-vertical", 0, 0.0, -1.0, 0.0, 1, (0.0, -1.0), (0.0, 0.0), (1.0, 0.0)),
        ("notch-horizontal", 1, 0.0, 0.0, 1.0, -1, (0.0, 0.0), (1.0, 0.0), (0.0, -1.0)),
    ]
    sides, offset = [], 0.0
    for name, axis, value, lo, hi, outward, start, end, normal in specs:
        side = Side(name, axis, value, lo, hi, outward, start, end, normal,
                    dirichlet=d, segment=0, arc_offset=offset)
        offset += side.length
        sides.append(side)
    sides.append(Side("right", 0, 1.0, 0.0, 1.0, 1, (1.0, 0.0), (1.0, 1.0), (1.0, 0.0)))
    return Geometry("l-shape", IdentityChart(), (-1.0, 1.0, -1.0, 1.0), tuple(sides), area=3.0,
                    removed_box=(0.0, 1.0, -1.0, 0.0), aligned_lines=((0, 0.0), (1, 0.0)))


def plate_with_hole(radius: float = 1.0, half_width: float = 10.0) -> Geometry:
    """Quarter of a square plate with a centred circular hole.

    Symmetry sides carry one Dirichlet component each: ``u_y`` on the bottom
    (y=0) and ``u_x`` on the left (x=0).
    """
    a, L = radius, half_width
    q = math.pi / 4
    sides = (
        Side("hole", 0, 0.0, 0.0, math.pi / 2, -1, (a, 0.0), (0.0, a), center=(0.0, 0.0)),
        Side("right", 0, 1.0, 0.0, q, 1, (L, 0.0), (L, L), (1.0, 0.0)),
        Side("top", 0, 1.0, q, math.pi / 2, 1, (L, L), (0.0, L), (0.0, 1.0)),
        Side("bottom", 1, 0.0, 0.0, 1.0, -1, (a, 0.0), (L, 0.0), (0.0, -1.0),
             dirichlet=(False, True), segment=0),
        Side("left", 1, math.pi / 2, 0.0, 1.0, 1, (0.0, a), (0.0, L), (-1.0, 0.0),
             dirichlet=(True, False), segment=1),
    )
    return Geometry("quarter-annulus-membrane", PlateHoleChart(a, L), (0.0, 1.0, 0.0, math.pi / 2),
                    sides, area=L * L - math.pi * a * a / 4, aligned_lines=((1, q),))


GEOMETRIES = {"rectangle": rectangle, "l-shape": l_shape, "quarter-annulus-membrane": plate_with_hole}


def geometry_by_name(kind: str) -> Geometry:
    try:
        return GEOMETRIES[kind]()
    except KeyError:
        raise ValueError(f"unknown geometry {kind!r}; expected one of {sorted(GEOMETRIES)}") from None


# --------------------------------------------------------------------------
# Cells and edges
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    key: int
    lower_corner: tuple[float, float]
    side_lengths: tuple[float, float]
    depth: int
    measure: float
    centroid: tuple[float, float]
    active: bool = True


@dataclass(frozen=True)
class BoundaryEdge:
    index: int
    segment: int
    side: Side
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    arc_range: tuple[float, float]
    measure: float
    midpoint: tuple[float, float]
    normal: tuple[float, float]
    period: float | None = None

    @property
    def arc_midpoint(self) -> float:
        return 0.5 * (self.arc_range[0] + self.arc_range[1])


@dataclass(frozen=True)
class EdgeSet:
    """Boundary edges of one kind, stored column-wise.

    ``arc`` is the midpoint arc length within the edge's connected segment,
    ``local`` the same within its side, ``mask`` the constrained (Dirichlet)
    or loaded (Neumann) displacement components.
    """

    midpoint: np.ndarray
    measure: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    segment: np.ndarray
    arc: np.ndarray
    local: np.ndarray
    side: np.ndarray
    mask: np.ndarray
    endpoints: np.ndarray
    sides: tuple[Side, ...]
    periods: tuple[tuple[int, float], ...] = ()

    def __len__(self) -> int:
        return len(self.measure)

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    def edge(self, i: int) -> BoundaryEdge:
        half = 0.5 * self.measure[i]
        return BoundaryEdge(
            index=i,
            segment=int(self.segment[i]),
            side=self.sides[self.side[i]],
            endpoints=(tuple(self.endpoints[i, 0]), tuple(self.endpoints[i, 1])),
            arc_range=(float(self.arc[i] - half), float(self.arc[i] + half)),
            measure=float(self.measure[i]),
            midpoint=tuple(self.midpoint[i]),
            normal=tuple(self.normal[i]),
            period=dict(self.periods).get(int(self.segment[i])),
        )

    def stencil(self, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Points at arc distance ``+delta`` and ``-delta`` from each midpoint."""
        plus = np.empty_like(self.midpoint)
        minus = np.empty_like(self.midpoint)
        for k in np.unique(self.side):
            sel = self.side == k
            side = self.sides[k]
            plus[sel] = side.point_at(self.local[sel] + delta[sel])
            minus[sel] = side.point_at(self.local[sel] - delta[sel])
        return plus, minus

    def by_segment(self) -> dict[int, np.ndarray]:
        return {int(k): np.flatnonzero(self.segment == k) for k in np.unique(self.segment)}


def _empty_edges(sides, periods=()) -> EdgeSet:
    z2 = np.zeros((0, 2))
    zi = np.zeros(0, dtype=np.int64)
    return EdgeSet(z2, np.zeros(0), z2, z2, zi, np.zeros(0), np.zeros(0), zi,
                   np.zeros((0, 2), dtype=bool), np.zeros((0, 2, 2)), sides, periods)


class QuadMesh:
    """Immutable collection of active quadtree cells over a geometry."""

    def __init__(self, geometry: Geometry, lo: np.ndarray, size: np.ndarray,
                 depth: np.ndarray, keys: np.ndarray):
        self.geometry = geometry
        self.lo = np.ascontiguousarray(lo, dtype=float)
        self.size = np.ascontiguousarray(size, dtype=float)
        self.depth = np.ascontiguousarray(depth, dtype=np.int64)
        self.keys = np.ascontiguousarray(keys, dtype=np.int64)
        for arr in (self.lo, self.size, self.depth, self.keys):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def chart(self):
        return self.geometry.chart

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.chart.map(self.lo + 0.5 * self.size)

    @cached_property
    def measures(self) -> np.ndarray:
        return self.chart.cell_measure(self.lo, self.lo + self.size)

    @property
    def total_measure(self) -> float:
        return float(self.measures.sum())

    @cached_property
    def _index(self) -> dict[int, int]:
        return {int(k): i for i, k in enumerate(self.keys)}

    def index_of(self, key: int) -> int:
        try:
            return self._index[int(key)]
        except KeyError:
            raise KeyError(f"cell id {key} is not an active cell of this mesh") from None

    def cell(self, i: int) -> Cell:
        return Cell(int(self.keys[i]), tuple(self.lo[i]), tuple(self.size[i]), int(self.depth[i]),
                    float(self.measures[i]), tuple(self.centroids[i]))

    def cells(self):
        return (self.cell(i) for i in range(len(self)))

    @cached_property
    def face_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Face midpoints and integrated outward normals ``int n dS`` per cell.

        Faces are ordered bottom, right, top, left in the chart.  The integral
        of the normal over a face equals its rotated chord, also on curved faces.
        """
        lo, hi = self.lo, self.lo + self.size
        c00 = lo
        c10 = np.stack([hi[:, 0], lo[:, 1]], axis=1)
        c11 = hi
        c01 = np.stack([lo[:, 0], hi[:, 1]], axis=1)
        corners = [self.chart.map(c) for c in (c00, c10, c11, c01)]
        chart_mid = [0.5 * (c00 + c10), 0.5 * (c10 + c11), 0.5 * (c11 + c01), 0.5 * (c01 + c00)]
        mids = np.stack([self.chart.map(m) for m in chart_mid], axis=1)
        nds = []
        for k in range(4):
            chord = corners[(k + 1) % 4] - corners[k]
            nds.append(np.stack([chord[:, 1], -chord[:, 0]], axis=1))
        return mids, np.stack(nds, axis=1)

    def _edges_of(self, side_filter) -> EdgeSet:
        geom = self.geometry
        sides = geom.sides
        extent = max(abs(b) for b in geom.bounds) + 1.0
        tol = 1e-10 * extent
        parts = []
        for si, side in enumerate(sides):
            if not side_filter(side):
                continue
            ax, other = side.axis, 1 - side.axis
            face = self.lo[:, ax] + (self.size[:, ax] if side.outward > 0 else 0.0)
            t0 = self.lo[:, other]
            t1 = t0 + self.size[:, other]
            on = (np.abs(face - side.value) <= tol) & (t0 >= side.lo - tol) & (t1 <= side.hi + tol)
            idx = np.flatnonzero(on)
            if idx.size == 0:
                continue
            p0 = np.empty((idx.size, 2))
            p1 = np.empty((idx.size, 2))
            p0[:, ax] = p1[:, ax] = side.value
            p0[:, other], p1[:, other] = t0[idx], t1[idx]
            e0, e1 = self.chart.map(p0), self.chart.map(p1)
            a0, a1 = side.arc_of(e0), side.arc_of(e1)
            swap = a1 < a0
            a0, a1 = np.where(swap, a1, a0), np.where(swap, a0, a1)
            e0, e1 = np.where(swap[:, None], e1, e0), np.where(swap[:, None], e0, e1)
            a0, a1 = np.clip(a0, 0.0, side.length), np.clip(a1, 0.0, side.length)
            order = np.argsort(a0, kind="stable")
            a0, a1, e0, e1 = a0[order], a1[order], e0[order], e1[order]
            mid = 0.5 * (a0 + a1)
            parts.append((si, side, a0, a1, mid, e0, e1))
        if not parts:
            return _empty_edges(sides, geom.closed_segments)
        cols = {k: [] for k in ("midpoint", "measure", "normal", "tangent", "segment", "arc",
                                "local", "side", "mask", "endpoints")}
        for si, side, a0, a1, mid, e0, e1 in parts:
            n = len(mid)
            dmask = np.asarray(side.dirichlet, dtype=bool)
            cols["midpoint"].append(side.point_at(mid))
            cols["measure"].append(a1 - a0)
            cols["normal"].append(side.normal_at(mid))
            cols["tangent"].append(side.tangent_at(mid))
            cols["segment"].append(np.full(n, side.segment, dtype=np.int64))
            cols["arc"].append(side.arc_offset + mid)
            cols["local"].append(mid)
            cols["side"].append(np.full(n, si, dtype=np.int64))
            mask = dmask if side_filter is _is_dirichlet else ~dmask
            cols["mask"].append(np.broadcast_to(mask, (n, 2)).copy())
            cols["endpoints"].append(np.stack([e0, e1], axis=1))
        return EdgeSet(**{k: np.concatenate(v) for k, v in cols.items()}, sides=sides,
                       periods=geom.closed_segments)

    @cached_property
    def dirichlet(self) -> EdgeSet:
        return self._edges_of(_is_dirichlet)

    @cached_property
    def neumann(self) -> EdgeSet:
        return self._edges_of(_is_neumann)


def _is_dirichlet(side: Side) -> bool:
    return side.is_dirichlet


def _is_neumann(side: Side) -> bool:
    return side.is_neumann


def _check_alignment(geometry: Geometry, nx: int, ny: int) -> None:
    x0, x1, y0, y1 = geometry.bounds
    for axis, value in geometry.aligned_lines:
        lo, hi, n = (x0, x1, nx) if axis == 0 else (y0, y1, ny)
        pos = (value - lo) / (hi - lo) * n
        if abs(pos - round(pos)) > 1e-9:
            name = "nx" if axis == 0 else "ny"
            raise ValueError(f"{name}={n} does not align the grid with the line at {value} "
                             f"required by the {geometry.kind} geometry")


def build_uniform(domain, nx: int, ny: int) -> QuadMesh:
    """Uniform ``nx x ny`` grid over the chart box of ``domain``.

    ``domain`` is a :class:`Geometry`, anything with a ``geometry`` attribute
    (such as a problem), or a geometry name.  Cells inside the removed box of
    an L-shape are dropped; grids that would cut a cell are rejected.
    """
    if isinstance(domain, str):
        geometry = geometry_by_name(domain)
    else:
        geometry = getattr(domain, "geometry", domain)
    if not isinstance(geometry, Geometry):
        raise ValueError(f"not a geometry: {domain!r}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    if nx * ny >= 1 << ROOT_BITS:
        raise ValueError(f"{nx}x{ny} exceeds the {1 << ROOT_BITS} root cells supported by cell ids")
    _check_alignment(geometry, nx, ny)
    x0, x1, y0, y1 = geometry.bounds
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    lo = np.stack([x0 + (x1 - x0) * ii / nx, y0 + (y1 - y0) * jj / ny], axis=1)
    hi = np.stack([x0 + (x1 - x0) * (ii + 1) / nx, y0 + (y1 - y0) * (jj + 1) / ny], axis=1)
    keep = ~geometry.excluded(0.5 * (lo + hi))
    keys = (np.int64(1) << ROOT_BITS) | (ii + nx * jj).astype(np.int64)
    size = hi - lo
    return QuadMesh(geometry, lo[keep], size[keep], np.zeros(int(keep.sum()), dtype=np.int64), keys[keep])


def refine(mesh: QuadMesh, marked) -> QuadMesh:
    """Split every marked cell (given by id) into four congruent children."""
    ids = np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64)
    if ids.size == 0:
        return mesh
    if np.unique(ids).size != ids.size:
        raise ValueError("duplicate cell ids in marked set")
    idx = np.array([mesh.index_of(k) for k in ids], dtype=np.int64)
    flag = np.zeros(len(mesh), dtype=bool)
    flag[idx] = True
    if mesh.depth[flag].max() >= MAX_DEPTH:
        raise ValueError(f"refinement beyond depth {MAX_DEPTH} is not representable")
    counts = np.where(flag, 4, 1)
    parent = np.repeat(np.arange(len(mesh)), counts)
    # position of each new cell within its parent's block (0 for unrefined cells)
    start = np.cumsum(counts) - counts
    quad = np.arange(len(parent)) - start[parent]
    refined = flag[parent]
    half = np.where(refined[:, None], 0.5, 1.0) * mesh.size[parent]
    lo = mesh.lo[parent] + np.where(refined[:, None], _QUADRANTS[quad] * half, 0.0)
    keys = np.where(refined, (mesh.keys[parent] << 2) | quad, mesh.keys[parent])
    depth = mesh.depth[parent] + refined
    return QuadMesh(mesh.geometry, lo, half, depth, keys)


def min_cell_size(mesh: QuadMesh) -> float:
    """Smallest ``|T|^(1/2)`` over active cells."""
    if len(mesh) == 0:
        raise ValueError("empty mesh")
    return float(math.sqrt(mesh.measures.min()))


def check_mesh(mesh: QuadMesh, tol: float = 1e-10) -> None:
    """Raise if cell measures or boundary lengths fail to match the geometry."""
    geom = mesh.geometry
    if abs(mesh.total_measure - geom.area) > tol * max(1.0, geom.area):
        raise AssertionError(f"cell measures sum to {mesh.total_measure}, domain area is {geom.area}")
    if abs(mesh.dirichlet.total_measure - geom.dirichlet_length) > tol * max(1.0, geom.dirichlet_length):
        raise AssertionError("Dirichlet edges do not cover the Dirichlet boundary")
    if abs(mesh.neumann.total_measure - geom.neumann_length) > tol * max(1.0, geom.neumann_length):
        raise AssertionError("Neumann edges do not cover the Neumann boundary")


def export_mesh_csv(mesh: QuadMesh, directory) -> tuple[Path, Path]:
    """Write ``cells.csv`` and ``edges.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cells_path = directory / "cells.csv"
    edges_path = directory / "edges.csv"
    with cells_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "cx", "cy", "measure", "depth"])
        for k, c, m, d in zip(mesh.keys, mesh.centroids, mesh.measures, mesh.depth):
            w.writerow([int(k), repr(float(c[0])), repr(float(c[1])), repr(float(m)), int(d)])
    with edges_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "segment", "cx", "cy", "measure", "nx", "ny"])
        for kind, edges in (("dirichlet", mesh.dirichlet), ("neumann", mesh.neumann)):
            for s, c, m, n in zip(edges.segment, edges.midpoint, edges.measure, edges.normal):
                w.writerow([kind, int(s), repr(float(c[0])), repr(float(c[1])), repr(float(m)),
                            repr(float(n[0])), repr(float(n[1]))])
    return cells_path, edges_path
