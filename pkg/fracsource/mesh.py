"""Structured triangulation of the unit square and its coarse grid.

Fine nodes are numbered row-major: node ``iy * (m + 1) + ix`` sits at
``(ix * h, iy * h)``. Every fine square ``c = iy * m + ix`` is split along
its lower-left to upper-right diagonal into triangles ``2c`` (below the
diagonal) and ``2c + 1`` (above it), both counter-clockwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from fracsource.errors import ConfigError

logger = logging.getLogger(__name__)

# Nodes closer than this to a grid line are treated as lying on it.
_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class FineMesh:
    cells_per_side: int
    nodes: np.ndarray          # (n_nodes, 2)
    triangles: np.ndarray      # (n_triangles, 3) node indices
    interior_mask: np.ndarray  # (n_nodes,) bool
    interior_nodes: np.ndarray = field(repr=False)  # global indices of interior nodes
    interior_index: np.ndarray = field(repr=False)  # global -> interior dof, -1 on the boundary

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_side

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_interior(self) -> int:
        return len(self.interior_nodes)

    def node_id(self, ix: int, iy: int) -> int:
        return iy * (self.cells_per_side + 1) + ix

    def cell_of_triangle(self, triangle: int) -> int:
        return triangle // 2

    def cell_of_point(self, point: Sequence[float]) -> int:
        """Index of the triangle containing ``point`` (closed triangles, ties go low)."""
        x, y = float(point[0]), float(point[1])
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ConfigError(f"point {tuple(point)} lies outside the unit square", "point_outside_domain")
        m = self.cells_per_side
        ix = min(int(np.floor(x * m)), m - 1)
        iy = min(int(np.floor(y * m)), m - 1)
        a = x * m - ix
        b = y * m - iy
        cell = iy * m + ix
        return 2 * cell if a >= b else 2 * cell + 1

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def extend(self, interior_values: np.ndarray) -> np.ndarray:
        """Lift an interior-dof vector (or a stack of them) to all nodes with zero boundary."""
        interior_values = np.asarray(interior_values)
        shape = (self.n_nodes,) + interior_values.shape[1:]
        full = np.zeros(shape, dtype=interior_values.dtype)
        full[self.interior_nodes] = interior_values
        return full

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        return np.asarray(nodal)[self.interior_nodes]


def build_fine_mesh(cells_per_side: int) -> FineMesh:
    if int(cells_per_side) != cells_per_side or cells_per_side < 2:
        raise ConfigError(f"cells_per_side must be an integer >= 2, got {cells_per_side}", "invalid_mesh")
    m = int(cells_per_side)
    h = 1.0 / m

    iy, ix = np.divmod(np.arange((m + 1) ** 2), m + 1)
    nodes = np.column_stack((ix * h, iy * h))

    cy, cx = np.divmod(np.arange(m * m), m)
    n00 = cy * (m + 1) + cx
    n10 = n00 + 1
    n01 = n00 + (m + 1)
    n11 = n01 + 1
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack((n00, n10, n11))
    triangles[1::2] = np.column_stack((n00, n11, n01))

    interior_mask = (ix > 0) & (ix < m) & (iy > 0) & (iy < m)
    interior_nodes = np.flatnonzero(interior_mask)
    interior_index = np.full(len(nodes), -1, dtype=np.int64)
    interior_index[interior_nodes] = np.arange(len(interior_nodes))

    mesh = FineMesh(
        cells_per_side=m,
        nodes=nodes,
        triangles=triangles,
        interior_mask=interior_mask,
        interior_nodes=interior_nodes,
        interior_index=interior_index,
    )
    logger.debug(f"Built fine mesh: {mesh.n_nodes} nodes, {len(triangles)} triangles, {mesh.n_interior} interior")
    return mesh


###############################################################################
# Coarse grid
###############################################################################

@dataclass(frozen=True)
class Neighborhood:
    """Coarse neighborhood omega_i: the coarse blocks sharing vertex ``vertex``."""

    index: int
    vertex: Tuple[int, int]          # (I, J) coarse vertex position
    blocks: Tuple[Tuple[int, int], ...]
    nodes: np.ndarray                # global fine nodes in the closed neighborhood
    triangles: np.ndarray            # fine triangles inside the neighborhood
    boundary_nodes: np.ndarray       # fine nodes on the neighborhood boundary, not on the domain boundary
    free_nodes: np.ndarray           # fine nodes of the neighborhood that are not on the domain boundary
    inner_nodes: np.ndarray          # free nodes strictly inside the neighborhood

    @property
    def touches_domain_boundary(self) -> bool:
        return len(self.blocks) < 4


@dataclass(frozen=True)
class CoarseGrid:
    blocks_per_side: int
    coarse_nodes: np.ndarray                 # ((n_b+1)^2, 2)
    neighborhoods: List[Neighborhood]
    partition_of_unity: sp.csc_matrix        # (n_fine_nodes, n_coarse) column i = chi_i
    fine_per_block: int

    @property
    def H(self) -> float:
        return 1.0 / self.blocks_per_side

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_nodes)

    def chi(self, i: int) -> np.ndarray:
        return self.partition_of_unity[:, i].toarray().ravel()

    def chi_gradients(self, mesh: FineMesh) -> np.ndarray:
        """Sum over all coarse vertices of |grad chi_i|^2 at each fine triangle centroid."""
        n_b = self.blocks_per_side
        H = self.H
        centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        # Position within the containing coarse block, in [0, 1].
        s = centroids / H
        bx = np.minimum(np.floor(s[:, 0]), n_b - 1)
        by = np.minimum(np.floor(s[:, 1]), n_b - 1)
        px = s[:, 0] - bx
        py = s[:, 1] - by
        # Bilinear hats of the four block corners; gradients in physical units.
        total = np.zeros(len(centroids))
        for hx, dhx in ((1 - px, -1.0), (px, 1.0)):
            for hy, dhy in ((1 - py, -1.0), (py, 1.0)):
                gx = dhx * hy / H
                gy = hx * dhy / H
                total += gx ** 2 + gy ** 2
        return total


def _hat(s: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(s))


def build_coarse_grid(mesh: FineMesh, blocks_per_side: int) -> CoarseGrid:
    m = mesh.cells_per_side
    n_b = int(blocks_per_side)
    if n_b < 1 or m % n_b != 0:
        raise ConfigError(
            f"blocks_per_side={blocks_per_side} must be positive and divide cells_per_side={m}",
            "invalid_coarse_grid",
        )
    r = m // n_b
    H = 1.0 / n_b

    cJ, cI = np.divmod(np.arange((n_b + 1) ** 2), n_b + 1)
    coarse_nodes = np.column_stack((cI * H, cJ * H))

    node_iy, node_ix = np.divmod(np.arange(mesh.n_nodes), m + 1)
    cell_iy, cell_ix = np.divmod(np.arange(m * m), m)
    tri_ix = cell_ix.repeat(2)
    tri_iy = cell_iy.repeat(2)

    rows, cols, vals = [], [], []
    neighborhoods: List[Neighborhood] = []
    for i, (I, J) in enumerate(zip(cI, cJ)):
        blocks = tuple(
            (bx, by)
            for by in (J - 1, J)
            for bx in (I - 1, I)
            if 0 <= bx < n_b and 0 <= by < n_b
        )
        x_lo, x_hi = max(0, (I - 1) * r), min(m, (I + 1) * r)
        y_lo, y_hi = max(0, (J - 1) * r), min(m, (J + 1) * r)

        in_nodes = (node_ix >= x_lo) & (node_ix <= x_hi) & (node_iy >= y_lo) & (node_iy <= y_hi)
        nodes = np.flatnonzero(in_nodes)
        on_rim = (node_ix == x_lo) | (node_ix == x_hi) | (node_iy == y_lo) | (node_iy == y_hi)
        free = nodes[mesh.interior_mask[nodes]]
        boundary = free[on_rim[free]]
        inner = free[~on_rim[free]]
        tris = np.flatnonzero((tri_ix >= x_lo) & (tri_ix < x_hi) & (tri_iy >= y_lo) & (tri_iy < y_hi))

        neighborhoods.append(Neighborhood(
            index=i,
            vertex=(int(I), int(J)),
            blocks=blocks,
            nodes=nodes,
            triangles=tris,
            boundary_nodes=boundary,
            free_nodes=free,
            inner_nodes=inner,
        ))

        chi = _hat(mesh.nodes[nodes, 0] / H - I) * _hat(mesh.nodes[nodes, 1] / H - J)
        keep = chi > _GEOM_TOL
        rows.append(nodes[keep])
        cols.append(np.full(int(keep.sum()), i))
        vals.append(chi[keep])

    pou = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, len(coarse_nodes)),
    )
    logger.debug(f"Built coarse grid: {n_b}x{n_b} blocks, {len(coarse_nodes)} coarse vertices")
    return CoarseGrid(
        blocks_per_side=n_b,
        coarse_nodes=coarse_nodes,
        neighborhoods=neighborhoods,
        partition_of_unity=pou,
        fine_per_block=r,
    )
