"""P1 Galerkin operators on the structured mesh and the linear algebra around them."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fracsource.errors import ConfigError, NumericalError
from fracsource.media import MediumField, read_raster
from fracsource.mesh import FineMesh

logger = logging.getLogger(__name__)

SOLVE_RTOL = 1e-10

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class OperatorPair:
    """Mass and stiffness matrices over the interior nodes (Dirichlet rows eliminated)."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass_full: sp.csr_matrix = field(repr=False)
    stiffness_full: sp.csr_matrix = field(repr=False)
    interior_nodes: np.ndarray = field(repr=False)
    kappa_tri: np.ndarray = field(repr=False)  # kappa per fine triangle

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    @property
    def tag(self) -> str:
        return "fem"

    def project_source(self, f: "SpatialSource") -> np.ndarray:
        return f.values[self.interior_nodes]

    def observation_vector(self, mesh: FineMesh, point: Sequence[float]) -> np.ndarray:
        return observation_vector(mesh, point)

    def prolong(self, coefficients: np.ndarray) -> np.ndarray:
        """Interior nodal values of a solution expressed in this space."""
        return coefficients


@dataclass(frozen=True)
class SpatialSource:
    values: np.ndarray        # per fine node
    support_mask: np.ndarray  # per fine node

    @property
    def bound(self) -> float:
        return float(self.values.max(initial=0.0))

    def interior(self, mesh: FineMesh) -> np.ndarray:
        return mesh.restrict(self.values)


def _element_gradients(mesh: FineMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (n_tri, 3, 2) and triangle areas."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # Rows of the inverse Jacobian give grad(lambda_1), grad(lambda_2).
    g1 = np.column_stack((d2[:, 1], -d2[:, 0])) / det[:, None]
    g2 = np.column_stack((-d1[:, 1], d1[:, 0])) / det[:, None]
    g0 = -(g1 + g2)
    return np.stack((g0, g1, g2), axis=1), 0.5 * det


def assemble_weighted(
    mesh: FineMesh,
    stiff_weight: np.ndarray,
    mass_weight: np.ndarray,
    triangles: Optional[np.ndarray] = None,
):
    """Full-node stiffness and mass with per-triangle weights.

    With ``triangles`` only that subset is integrated; the weights then follow
    the subset order.
    """
    grads, area = _element_gradients(mesh)
    tris = mesh.triangles
    if triangles is not None:
        grads, area, tris = grads[triangles], area[triangles], tris[triangles]
    k_loc = np.einsum("tik,tjk->tij", grads, grads) * (area * stiff_weight)[:, None, None]
    m_loc = _LOCAL_MASS[None] * (area * mass_weight)[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_nodes
    stiffness = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return stiffness, mass


def _symmetrize(matrix: sp.csr_matrix) -> sp.csr_matrix:
    # Summation order makes the coo->csr result symmetric only up to rounding.
    return ((matrix + matrix.T) * 0.5).tocsr()


def assemble(mesh: FineMesh, medium: MediumField) -> OperatorPair:
    if medium.cells_per_side != mesh.cells_per_side:
        raise ConfigError(
            f"medium has {medium.cells_per_side} cells per side, mesh has {mesh.cells_per_side}",
            "dimension_mismatch",
        )
    kappa_tri = medium.per_cell().repeat(2)
    stiffness_full, mass_full = assemble_weighted(mesh, kappa_tri, np.ones_like(kappa_tri))
    stiffness_full = _symmetrize(stiffness_full)
    mass_full = _symmetrize(mass_full)
    idx = mesh.interior_nodes
    ops = OperatorPair(
        mass=mass_full[idx][:, idx].tocsr(),
        stiffness=stiffness_full[idx][:, idx].tocsr(),
        mass_full=mass_full,
        stiffness_full=stiffness_full,
        interior_nodes=idx,
        kappa_tri=kappa_tri,
    )
    logger.info(f"Assembled P1 operators: {ops.size} interior dofs, kappa contrast {medium.contrast:.3g}")
    return ops


###############################################################################
# SPD solves
###############################################################################

class SPDFactor:
    """Factor an SPD matrix once and solve repeatedly.

    Sparse matrices use SuperLU; dense matrices use Cholesky. When SuperLU
    cannot factor the matrix, solves fall back to conjugate gradients.
    """

    def __init__(self, matrix, method: str = "direct"):
        self.matrix = matrix
        self.method = method
        self._dense = None
        self._lu = None
        if method not in ("direct", "cg"):
            raise ConfigError(f"unknown solve method {method!r}", "invalid_solver")
        if method == "cg":
            return
        try:
            if sp.issparse(matrix):
                self._lu = spla.splu(sp.csc_matrix(matrix))
            else:
                self._dense = scipy.linalg.cho_factor(np.asarray(matrix))
        except (RuntimeError, MemoryError, np.linalg.LinAlgError) as e:
            if not sp.issparse(matrix):
                raise NumericalError(f"matrix is not positive definite: {e}", "not_spd") from e
            logger.warning(f"Sparse factorization failed ({e}); falling back to conjugate gradients")
            self.method = "cg"

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is not None:
            x = self._lu.solve(rhs)
        elif self._dense is not None:
            x = scipy.linalg.cho_solve(self._dense, rhs)
        else:
            x = self._cg(rhs)
        if not np.all(np.isfinite(x)):
            raise NumericalError("SPD solve produced non-finite values", "solve_failed")
        return x

    def _cg(self, rhs: np.ndarray) -> np.ndarray:
        if rhs.ndim == 2:
            return np.column_stack([self._cg(rhs[:, j]) for j in range(rhs.shape[1])])
        diag = self.matrix.diagonal()
        precond = sp.diags(1.0 / diag) if np.all(diag > 0) else None
        x, info = spla.cg(self.matrix, rhs, rtol=SOLVE_RTOL * 0.1, atol=0.0, M=precond, maxiter=10 * self.size)
        if info != 0:
            residual = float(np.linalg.norm(self.matrix @ x - rhs))
            raise NumericalError(f"conjugate gradients did not converge (info={info})", "solve_failed", residual)
        return x


def solve_spd(matrix, rhs: np.ndarray, method: str = "direct") -> np.ndarray:
    """Solve ``matrix @ x = rhs`` and verify the relative residual is at most 1e-10."""
    factor = SPDFactor(matrix, method=method)
    x = factor.solve(rhs)
    residual = float(np.linalg.norm(matrix @ x - rhs))
    scale = float(np.linalg.norm(rhs))
    if not np.isfinite(residual) or residual > SOLVE_RTOL * scale:
        # One step of iterative refinement before giving up.
        x = x + factor.solve(rhs - matrix @ x)
        residual = float(np.linalg.norm(matrix @ x - rhs))
        if not np.isfinite(residual) or residual > SOLVE_RTOL * scale:
            raise NumericalError("SPD solve did not reach the requested accuracy", "solve_failed", residual)
    return x


###############################################################################
# Point evaluation
###############################################################################

def point_weights(mesh: FineMesh, point: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Node indices and barycentric weights of P1 interpolation at ``point``."""
    x, y = float(point[0]), float(point[1])
    if not (0.0 < x < 1.0 and 0.0 < y < 1.0):
        raise ConfigError(f"observation point {tuple(point)} must lie strictly inside D", "point_outside_domain")
    tri = mesh.cell_of_point((x, y))
    verts = mesh.triangles[tri]
    p = mesh.nodes[verts]
    T = np.column_stack((p[1] - p[0], p[2] - p[0]))
    l1, l2 = np.linalg.solve(T, np.array([x, y]) - p[0])
    weights = np.array([1.0 - l1 - l2, l1, l2])
    return verts, weights


def evaluate_at_point(mesh: FineMesh, nodal: np.ndarray, point: Sequence[float]) -> float:
    verts, weights = point_weights(mesh, point)
    return float(np.dot(np.asarray(nodal)[verts], weights))


def observation_vector(mesh: FineMesh, point: Sequence[float]) -> np.ndarray:
    """Interior-dof vector ``w`` with ``w @ u_interior == u(point)``."""
    verts, weights = point_weights(mesh, point)
    w = np.zeros(mesh.n_interior)
    for v, c in zip(verts, weights):
        dof = mesh.interior_index[v]
        if dof >= 0:
            w[dof] += c
    return w


###############################################################################
# Spatial sources
###############################################################################

def _bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def bump_source(
    mesh: FineMesh,
    center: Sequence[float] = (0.5, 0.3),
    radius: Union[float, Sequence[float]] = 0.08,
    peak: float = 1.0,
    cf: Optional[float] = None,
) -> SpatialSource:
    """Product of smooth compactly supported bumps, peak value ``peak`` at ``center``."""
    rx, ry = (radius, radius) if np.isscalar(radius) else radius
    if rx <= 0 or ry <= 0:
        raise ConfigError("bump radius must be positive", "invalid_source")
    values = peak * _bump((mesh.nodes[:, 0] - center[0]) / rx) * _bump((mesh.nodes[:, 1] - center[1]) / ry)
    return _finalize_source(mesh, values, cf)


def source_from_raster(mesh: FineMesh, path: Union[str, Path], cf: Optional[float] = None) -> SpatialSource:
    values = read_raster(path)
    side = mesh.cells_per_side + 1
    if values.shape != (side, side):
        raise ConfigError(
            f"source raster {path} must be {side}x{side} (one value per node), got {values.shape}",
            "invalid_source",
        )
    return _finalize_source(mesh, values.ravel(), cf)


def _finalize_source(mesh: FineMesh, values: np.ndarray, cf: Optional[float]) -> SpatialSource:
    values = np.array(values, dtype=float)
    if np.any(values < 0):
        logger.warning("Negative source values clipped to 0")
    upper = np.inf if cf is None else cf
    values = np.clip(values, 0.0, upper)
    values[~mesh.interior_mask] = 0.0
    return SpatialSource(values=values, support_mask=values > 0)
