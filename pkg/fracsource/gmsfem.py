"""Generalized multiscale basis: snapshots, local spectral problems, offline space, reduced operators."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from fracsource.errors import ConfigError, NumericalError
from fracsource.fem import OperatorPair, SPDFactor, SpatialSource, assemble_weighted, observation_vector
from fracsource.mesh import CoarseGrid, FineMesh

logger = logging.getLogger(__name__)

SNAPSHOT_KINDS = ("harmonic", "full-fine")

# Smallest admissible eigenvalue ratio of R^T R before R is declared rank deficient.
_RANK_TOL = 1e-12


@dataclass(frozen=True)
class SnapshotSpace:
    neighborhood_id: int
    kind: str
    free_nodes: np.ndarray        # global fine nodes carrying the local dofs
    basis_vectors: np.ndarray     # (len(free_nodes), count)
    local_stiffness: sp.csr_matrix = field(repr=False)        # kappa-weighted, free conditions on the rim
    local_weighted_mass: sp.csr_matrix = field(repr=False)    # mass weighted by kappa * sum |grad chi|^2

    @property
    def count(self) -> int:
        return self.basis_vectors.shape[1]


@dataclass(frozen=True)
class LocalEigenpairs:
    neighborhood_id: int
    eigenvalues: np.ndarray   # ascending
    functions: np.ndarray     # (len(free_nodes), k) offline functions on the free nodes
    free_nodes: np.ndarray


@dataclass(frozen=True)
class MultiscaleBasis:
    R: sp.csc_matrix            # (n_fine_nodes, total_dof)
    eigenvalues: np.ndarray     # (n_coarse, L) selected eigenvalues
    bases_per_neighborhood: int
    kind: str

    @property
    def total_dof(self) -> int:
        return self.R.shape[1]


@dataclass(frozen=True)
class ReducedOperators:
    """M_H = R^T M R, S_H = R^T S R and the projected source.

    ``load`` is ``R^T M f`` and ``f_H`` solves ``M_H f_H = load``, so the
    reduced recursion carries the same ``M (...)`` structure as the fine one.
    """

    mass_H: np.ndarray
    stiffness_H: np.ndarray
    load: np.ndarray
    f_H: np.ndarray
    R_interior: sp.csr_matrix = field(repr=False)
    fine_mass: sp.csr_matrix = field(repr=False)
    interior_nodes: np.ndarray = field(repr=False)
    bases_per_neighborhood: int = 2

    @property
    def mass(self) -> np.ndarray:
        return self.mass_H

    @property
    def stiffness(self) -> np.ndarray:
        return self.stiffness_H

    @property
    def size(self) -> int:
        return self.mass_H.shape[0]

    @property
    def tag(self) -> str:
        return f"gmsfem-{self.bases_per_neighborhood}"

    def project_source(self, f: SpatialSource) -> np.ndarray:
        load = self.R_interior.T @ (self.fine_mass @ f.values[self.interior_nodes])
        return SPDFactor(self.mass_H).solve(load)

    def observation_vector(self, mesh: FineMesh, point: Sequence[float]) -> np.ndarray:
        return self.R_interior.T @ observation_vector(mesh, point)

    def prolong(self, coefficients: np.ndarray) -> np.ndarray:
        return self.R_interior @ coefficients


###############################################################################
# Snapshots and local spectral problems
###############################################################################

def build_snapshots(
    mesh: FineMesh,
    coarse: CoarseGrid,
    ops: OperatorPair,
    neighborhood_id: int,
    kind: str = "harmonic",
    chi_gradients: Optional[np.ndarray] = None,
) -> SnapshotSpace:
    """Local snapshot space of neighborhood ``neighborhood_id``.

    ``chi_gradients`` may carry a precomputed ``coarse.chi_gradients(mesh)``.
    """
    if kind not in SNAPSHOT_KINDS:
        raise ConfigError(f"unknown snapshot kind {kind!r}; expected one of {SNAPSHOT_KINDS}", "invalid_snapshot")
    if not 0 <= neighborhood_id < coarse.n_coarse:
        raise ConfigError(f"neighborhood {neighborhood_id} does not exist", "invalid_neighborhood")
    nbhd = coarse.neighborhoods[neighborhood_id]
    free = nbhd.free_nodes

    kappa_tri = ops.kappa_tri[nbhd.triangles]
    if chi_gradients is None:
        chi_gradients = coarse.chi_gradients(mesh)
    kappa_tilde = kappa_tri * chi_gradients[nbhd.triangles]
    stiffness, weighted_mass = assemble_weighted(mesh, kappa_tri, kappa_tilde, triangles=nbhd.triangles)
    local_stiffness = stiffness[free][:, free].tocsr()
    local_weighted_mass = weighted_mass[free][:, free].tocsr()

    if kind == "full-fine":
        basis = np.eye(len(free))
    else:
        basis = _harmonic_extensions(local_stiffness, free, nbhd.boundary_nodes, nbhd.inner_nodes)

    return SnapshotSpace(
        neighborhood_id=neighborhood_id,
        kind=kind,
        free_nodes=free,
        basis_vectors=basis,
        local_stiffness=local_stiffness,
        local_weighted_mass=local_weighted_mass,
    )


def _harmonic_extensions(
    local_stiffness: sp.csr_matrix,
    free: np.ndarray,
    boundary: np.ndarray,
    inner: np.ndarray,
) -> np.ndarray:
    """Discrete kappa-harmonic extensions of each boundary delta, on the free nodes."""
    pos = {int(node): i for i, node in enumerate(free)}
    b_idx = np.array([pos[int(n)] for n in boundary], dtype=np.int64)
    i_idx = np.array([pos[int(n)] for n in inner], dtype=np.int64)

    basis = np.zeros((len(free), len(b_idx)))
    basis[b_idx, np.arange(len(b_idx))] = 1.0
    if len(i_idx) == 0:
        return basis
    A_ii = local_stiffness[i_idx][:, i_idx]
    A_ib = local_stiffness[i_idx][:, b_idx].toarray()
    try:
        basis[i_idx] = SPDFactor(A_ii).solve(-A_ib)
    except NumericalError as e:
        raise NumericalError(f"local harmonic extension failed: {e.message}", "singular_local_system") from e
    return basis


def local_spectral(snapshots: SnapshotSpace) -> LocalEigenpairs:
    """Generalized eigenpairs of (local stiffness, kappa-tilde mass) on the snapshot span, ascending."""
    if snapshots.count == 0:
        raise ConfigError(f"neighborhood {snapshots.neighborhood_id} has an empty snapshot space", "empty_snapshots")
    Psi = snapshots.basis_vectors
    A = Psi.T @ (snapshots.local_stiffness @ Psi)
    B = Psi.T @ (snapshots.local_weighted_mass @ Psi)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        eigenvalues, vectors = scipy.linalg.eigh(A, B)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"weighted mass is not positive definite on the snapshots of neighborhood {snapshots.neighborhood_id}",
            "not_spd",
        ) from e
    return LocalEigenpairs(
        neighborhood_id=snapshots.neighborhood_id,
        eigenvalues=eigenvalues,
        functions=Psi @ vectors,
        free_nodes=snapshots.free_nodes,
    )


###############################################################################
# Offline space
###############################################################################

def assemble_offline(
    mesh: FineMesh,
    coarse: CoarseGrid,
    eigenpairs: Sequence[LocalEigenpairs],
    bases_per_neighborhood: int,
    kind: str = "harmonic",
) -> MultiscaleBasis:
    L = int(bases_per_neighborhood)
    if L < 1:
        raise ConfigError(f"bases_per_neighborhood must be >= 1, got {bases_per_neighborhood}", "invalid_bases")
    if len(eigenpairs) != coarse.n_coarse:
        raise ConfigError(f"expected eigenpairs for {coarse.n_coarse} neighborhoods, got {len(eigenpairs)}",
                          "invalid_bases")
    rows, cols, vals = [], [], []
    selected = np.zeros((coarse.n_coarse, L))
    for pairs in sorted(eigenpairs, key=lambda p: p.neighborhood_id):
        i = pairs.neighborhood_id
        if len(pairs.eigenvalues) < L:
            raise ConfigError(
                f"neighborhood {i} has only {len(pairs.eigenvalues)} eigenpairs, {L} requested", "invalid_bases"
            )
        chi = coarse.partition_of_unity[pairs.free_nodes, i].toarray().ravel()
        selected[i] = pairs.eigenvalues[:L]
        for l in range(L):
            column = chi * pairs.functions[:, l]
            keep = column != 0.0
            rows.append(pairs.free_nodes[keep])
            cols.append(np.full(int(keep.sum()), i * L + l))
            vals.append(column[keep])

    R = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_nodes, coarse.n_coarse * L),
    )
    gram = (R.T @ R).toarray()
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= _RANK_TOL * ev[-1]:
        raise NumericalError(
            f"multiscale basis is rank deficient (eigenvalue ratio {ev[0] / ev[-1]:.3e})", "rank_deficient"
        )
    logger.info(f"Assembled multiscale basis: {R.shape[1]} dofs ({coarse.n_coarse} neighborhoods x {L})")
    return MultiscaleBasis(R=R, eigenvalues=selected, bases_per_neighborhood=L, kind=kind)


def build_basis(
    mesh: FineMesh,
    coarse: CoarseGrid,
    ops: OperatorPair,
    bases_per_neighborhood: int,
    kind: str = "harmonic",
    workers: int = 4,
) -> MultiscaleBasis:
    """Snapshots and spectral problems for every neighborhood, then the offline space."""

    chi_gradients = coarse.chi_gradients(mesh)

    def _one(i: int) -> LocalEigenpairs:
        pairs = local_spectral(build_snapshots(mesh, coarse, ops, i, kind, chi_gradients))
        logger.debug(f"Neighborhood {i}: {len(pairs.eigenvalues)} eigenpairs, "
                     f"lambda_min={pairs.eigenvalues[0]:.4g}")
        return pairs

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        eigenpairs: List[LocalEigenpairs] = list(executor.map(_one, range(coarse.n_coarse)))
    return assemble_offline(mesh, coarse, eigenpairs, bases_per_neighborhood, kind)


def reduce(ops: OperatorPair, basis: MultiscaleBasis, f: Optional[SpatialSource] = None) -> ReducedOperators:
    if basis.R.shape[0] != ops.mass_full.shape[0]:
        raise ConfigError("basis and operators live on different fine meshes", "dimension_mismatch")
    R_int = basis.R[ops.interior_nodes].tocsr()
    mass_H = (R_int.T @ ops.mass @ R_int).toarray()
    stiffness_H = (R_int.T @ ops.stiffness @ R_int).toarray()
    mass_H = 0.5 * (mass_H + mass_H.T)
    stiffness_H = 0.5 * (stiffness_H + stiffness_H.T)

    if f is None:
        load = np.zeros(R_int.shape[1])
        f_H = load.copy()
    else:
        load = R_int.T @ (ops.mass @ f.values[ops.interior_nodes])
        f_H = SPDFactor(mass_H).solve(load)
    return ReducedOperators(
        mass_H=mass_H,
        stiffness_H=stiffness_H,
        load=load,
        f_H=f_H,
        R_interior=R_int,
        bases_per_neighborhood=basis.bases_per_neighborhood,
        fine_mass=ops.mass,
        interior_nodes=ops.interior_nodes,
    )
