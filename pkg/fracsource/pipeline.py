"""Builds meshes, media, sources, signals and solvers from a ``RunConfig``."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from fracsource.cache import BasisCache
from fracsource.errors import ConfigError
from fracsource.fem import OperatorPair, SpatialSource, assemble, bump_source, evaluate_at_point, source_from_raster
from fracsource.fractime import SpaceOperators, TimeGrid
from fracsource.gmsfem import MultiscaleBasis, build_basis, reduce
from fracsource.io import read_table
from fracsource.media import MediumField, channels, homogeneous, inclusions, load_medium
from fracsource.mesh import CoarseGrid, FineMesh, build_coarse_grid, build_fine_mesh
from fracsource.models import RunConfig, SignalConfig
from fracsource.stochastic import ForwardModel, SourceTimeSpec, TimeFunction, time_function

logger = logging.getLogger(__name__)


@dataclass
class Problem:
    """Everything a command needs that does not depend on the solver choice."""

    config: RunConfig
    mesh: FineMesh
    medium: MediumField
    fine_ops: OperatorPair
    source: SpatialSource
    grid: TimeGrid
    spec: SourceTimeSpec
    coarse: Optional[CoarseGrid] = field(default=None, repr=False)

    @property
    def x0(self) -> Tuple[float, float]:
        return tuple(self.config.observation.x0)

    @property
    def Cf(self) -> float:
        return self.config.source.cf if self.config.source.cf is not None else self.source.bound

    def coarse_grid(self) -> CoarseGrid:
        if self.coarse is None:
            self.coarse = build_coarse_grid(self.mesh, self.config.mesh.blocks_per_side)
        return self.coarse


def build_medium(config: RunConfig) -> MediumField:
    m = config.mesh.cells_per_side
    medium = config.medium
    if medium.kind == "homogeneous":
        return homogeneous(m, medium.value)
    if medium.kind == "channels":
        return channels(m, seed=medium.seed, contrast=medium.contrast, width=medium.width,
                        levels=medium.levels, amplitude=medium.amplitude)
    if medium.kind == "inclusions":
        return inclusions(m, seed=medium.seed, contrast=medium.contrast)
    return load_medium(medium.path, cells_per_side=m)


def build_source(config: RunConfig, mesh: FineMesh) -> SpatialSource:
    source = config.source
    if source.kind == "file":
        return source_from_raster(mesh, source.path, cf=source.cf)
    return bump_source(mesh, center=source.center, radius=source.radius, peak=source.peak, cf=source.cf)


def _signal(signal: SignalConfig, role: str) -> TimeFunction:
    table = getattr(signal, f"{role}_table")
    if table is not None:
        _, columns, data = read_table(table)
        if len(columns) < 2:
            raise ConfigError(f"signal table {table} needs 't' and a value column", "invalid_signal")
        return TimeFunction.from_table(data[:, 0], data[:, 1], name=Path(table).stem)
    return time_function(getattr(signal, role), role, value=getattr(signal, f"{role}_value"))


def build_signals(config: RunConfig) -> SourceTimeSpec:
    return SourceTimeSpec(
        g1=_signal(config.signal, "g1"),
        g2=_signal(config.signal, "g2"),
        T=config.time.T,
        M_bound=config.signal.M_bound,
    )


def check_source_at_observation(mesh: FineMesh, source: SpatialSource, x0) -> None:
    value = evaluate_at_point(mesh, source.values, x0)
    if value != 0.0:
        raise ConfigError(
            f"the source does not vanish at the observation point: f({x0[0]}, {x0[1]}) = {value:.3e}",
            "source_at_observation",
        )


def build_problem(config: RunConfig) -> Problem:
    mesh = build_fine_mesh(config.mesh.cells_per_side)
    medium = build_medium(config)
    source = build_source(config, mesh)
    check_source_at_observation(mesh, source, config.observation.x0)
    grid = TimeGrid(T=config.time.T, N=config.time.N, alpha=config.time.alpha)
    return Problem(
        config=config,
        mesh=mesh,
        medium=medium,
        fine_ops=assemble(mesh, medium),
        source=source,
        grid=grid,
        spec=build_signals(config),
    )


def basis_for(problem: Problem, bases: int, kind: str, cache: Optional[BasisCache] = None) -> MultiscaleBasis:
    """Offline GMsFEM basis, read from ``cache`` when an entry for this medium exists."""
    config = problem.config
    key = None
    if cache is not None:
        key = BasisCache.key(config.mesh.cells_per_side, config.mesh.blocks_per_side, problem.medium, kind, bases)
        basis = cache.load(key)
        if basis is not None:
            return basis
    started = time.perf_counter()
    basis = build_basis(problem.mesh, problem.coarse_grid(), problem.fine_ops, bases, kind,
                        workers=config.solver.workers)
    logger.info(f"Offline stage took {time.perf_counter() - started:.2f}s")
    if cache is not None:
        cache.store(key, basis)
    return basis


def build_operators(
    problem: Problem,
    solver: Optional[str] = None,
    bases: Optional[int] = None,
    cache: Optional[BasisCache] = None,
) -> SpaceOperators:
    solver = solver or problem.config.solver.kind
    if solver == "fem":
        return problem.fine_ops
    if solver != "gmsfem":
        raise ConfigError(f"unknown solver {solver!r}; expected 'fem' or 'gmsfem'", "invalid_solver")
    bases = bases or problem.config.solver.bases_per_neighborhood
    basis = basis_for(problem, bases, problem.config.solver.snapshots, cache)
    return reduce(problem.fine_ops, basis, problem.source)


def open_cache(config: RunConfig) -> Optional[BasisCache]:
    return BasisCache(config.output.cache_dir) if config.output.cache_dir else None


def build_model(problem: Problem, ops: SpaceOperators) -> ForwardModel:
    return ForwardModel.build(problem.mesh, ops, problem.grid, problem.source, problem.x0,
                              method=problem.config.solver.linear_solver)


def mean_trajectory(model: ForwardModel, spec: SourceTimeSpec) -> np.ndarray:
    """u(x0, t_0..t_N) driven by g1 alone, the expectation of every realization."""
    g1, _ = spec.samples(model.grid)
    return model.stepper.march(model.load, g1[1:], observation=model.observation, keep_fields=False).trace
