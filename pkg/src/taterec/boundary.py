"""Boundary bookkeeping shared by the simulator, the traces and the Laplace solver.

The boundary nodes of B's grid form a closed loop. Detectors sit anywhere on
that loop. Two sparse linear maps connect them: ``to_nodes`` fills boundary
nodes from detector samples by linear interpolation in arc length, and
``to_detectors`` samples nodal values at the detectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .fields import DomainSpec, Grid, ObservationSurface

__all__ = ["BoundaryLoop", "boundary_loop", "bilinear_matrix", "check_on_grid_lines"]


def _cyclic_linear(query: np.ndarray, samples: np.ndarray, period: float) -> sp.csr_matrix:
    """Matrix mapping values at sorted-or-not ``samples`` to ``query`` (periodic)."""
    order = np.argsort(samples, kind="stable")
    s = samples[order]
    ext = np.concatenate([s[-1:] - period, s, s[:1] + period])
    idx = np.concatenate([order[-1:], order, order[:1]])
    q = np.mod(query - s[0], period) + s[0]
    j = np.searchsorted(ext, q, side="right") - 1
    j = np.clip(j, 0, len(ext) - 2)
    span = ext[j + 1] - ext[j]
    t = np.where(span > 0, (q - ext[j]) / np.where(span > 0, span, 1.0), 0.0)
    rows = np.repeat(np.arange(len(q)), 2)
    cols = np.column_stack([idx[j], idx[j + 1]]).ravel()
    vals = np.column_stack([1.0 - t, t]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(q), len(samples)))


@dataclass(frozen=True, eq=False)
class BoundaryLoop:
    """Boundary nodes of a B-grid in counter-clockwise order.

    ``inner1`` and ``inner2`` hold flat indices of the first and second nodes
    inward along the normal (-1 at corners). ``step`` is the normal spacing and
    ``length`` the boundary length element carried by each node and
    ``weights`` the detector quadrature weights.
    """

    grid: Grid
    nodes: np.ndarray
    arc: np.ndarray
    inner1: np.ndarray
    inner2: np.ndarray
    step: np.ndarray
    length: np.ndarray
    corner: np.ndarray
    to_nodes: sp.csr_matrix
    to_detectors: sp.csr_matrix
    weights: np.ndarray

    @property
    def count(self) -> int:
        return len(self.nodes)


def _build_loop(grid: Grid, surface: ObservationSurface) -> BoundaryLoop:
    domain = surface.domain
    if grid.dim != domain.dim:
        raise GeometryError("surface and grid dimension differ")
    for a in range(grid.dim):
        if (
            abs(grid.origin[a] - domain.lower[a]) > 1e-9 * grid.spacing[a]
            or abs(grid.upper[a] - domain.upper[a]) > 1e-9 * grid.spacing[a]
        ):
            raise GeometryError("grid does not coincide with the closed domain")
    shape = grid.shape
    flat = lambda *ij: np.ravel_multi_index(ij, shape)
    if grid.dim == 1:
        n = shape[0]
        nodes = np.array([0, n - 1])
        arc = np.array([0.0, 1.0])
        inner1 = np.array([1, n - 2])
        inner2 = np.array([2, n - 3])
        step = np.full(2, grid.spacing[0])
        length = np.ones(2)
        corner = np.zeros(2, dtype=bool)
        s_det = surface.arc_parameter()
        to_nodes = sp.csr_matrix((np.ones(2), (np.array([0, 1]), np.argsort(s_det))), shape=(2, 2))
        if not np.allclose(surface.positions[:, 0][np.argsort(s_det)], domain.lower + domain.upper):
            raise GeometryError("1D detectors must sit at the two endpoints")
        return BoundaryLoop(grid, nodes, arc, inner1, inner2, step, length, corner,
                            to_nodes.tocsr(), to_nodes.T.tocsr(), surface.weights)
    nx, ny = shape
    hx, hy = grid.spacing
    a, b = domain.sides
    ids, arc, in1, in2, step, length, corner = [], [], [], [], [], [], []

    def add(i, j, s, d1, d2, h_n, h_t, is_corner):
        ids.append(flat(i, j))
        arc.append(s)
        in1.append(-1 if is_corner else flat(*d1))
        in2.append(-1 if is_corner else flat(*d2))
        step.append(h_n)
        length.append(h_t)
        corner.append(is_corner)

    for i in range(nx - 1):  # bottom, left to right
        add(i, 0, i * hx, (i, 1), (i, 2), hy, hx, i == 0)
    for j in range(ny - 1):  # right, bottom to top
        add(nx - 1, j, a + j * hy, (nx - 2, j), (nx - 3, j), hx, hy, j == 0)
    for i in range(nx - 1, 0, -1):  # top, right to left
        add(i, ny - 1, a + b + (nx - 1 - i) * hx, (i, ny - 2), (i, ny - 3), hy, hx, i == nx - 1)
    for j in range(ny - 1, 0, -1):  # left, top to bottom
        add(0, j, 2 * a + b + (ny - 1 - j) * hy, (1, j), (2, j), hx, hy, j == ny - 1)
    arc = np.asarray(arc)
    s_det = surface.arc_parameter()
    period = domain.perimeter
    to_nodes = _cyclic_linear(arc, s_det, period)
    to_detectors = _cyclic_linear(s_det, arc, period)
    return BoundaryLoop(
        grid, np.asarray(ids), arc, np.asarray(in1), np.asarray(in2), np.asarray(step),
        np.asarray(length), np.asarray(corner), to_nodes, to_detectors, surface.weights,
    )


class _Key:
    """Hashable identity wrapper so loops can be cached per (grid, surface)."""

    def __init__(self, grid: Grid, surface: ObservationSurface) -> None:
        self.grid, self.surface = grid, surface
        self._h = hash((grid, surface.domain, surface.count, surface.positions.tobytes()))

    def __hash__(self) -> int:
        return self._h

    def __eq__(self, other) -> bool:
        return self.grid == other.grid and self.surface.same_layout(other.surface)


@lru_cache(maxsize=32)
def _cached(key: _Key) -> BoundaryLoop:
    return _build_loop(key.grid, key.surface)


def boundary_loop(grid: Grid, surface: ObservationSurface) -> BoundaryLoop:
    """Boundary loop of ``grid`` (which must span closed B exactly) for ``surface``."""
    return _cached(_Key(grid, surface))


def bilinear_matrix(grid: Grid, points: np.ndarray) -> sp.csr_matrix:
    """Sparse (points x nodes) matrix of (bi)linear interpolation weights."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.dim:
        raise GeometryError("point dimension differs from grid")
    if not np.all(grid.contains(pts)):
        raise GeometryError("interpolation point outside the grid")
    idx, frac = [], []
    for a in range(grid.dim):
        u = (pts[:, a] - grid.origin[a]) / grid.spacing[a]
        i = np.clip(np.floor(u).astype(int), 0, grid.counts[a] - 2)
        t = u - i
        # snap roundoff so on-line points use exact weights
        t = np.where(np.abs(t) < 1e-9, 0.0, np.where(np.abs(t - 1) < 1e-9, 1.0, t))
        idx.append(i)
        frac.append(t)
    rows, cols, vals = [], [], []
    n = len(pts)
    corners = [(0,), (1,)] if grid.dim == 1 else [(0, 0), (1, 0), (0, 1), (1, 1)]
    for c in corners:
        w = np.ones(n)
        ij = []
        for a, ca in enumerate(c):
            w = w * (frac[a] if ca else 1.0 - frac[a])
            ij.append(idx[a] + ca)
        rows.append(np.arange(n))
        cols.append(np.ravel_multi_index(tuple(ij), grid.shape))
        vals.append(w)
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, grid.size)
    )
    m.eliminate_zeros()
    return m


def check_on_grid_lines(grid: Grid, surface: ObservationSurface) -> None:
    """Each detector must lie on a grid line normal to its outward normal."""
    for p, nu in zip(surface.positions, surface.normals):
        a = int(np.argmax(np.abs(nu)))
        if grid.locate(p[a], a) is None:
            raise GeometryError(f"detector at {tuple(p)} is not on a grid line of the simulation grid")

