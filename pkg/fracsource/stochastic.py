"""Monte Carlo ensembles of single-point observations u(x0, t_n, omega_r)."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from fracsource.ensemble import EnsembleRunner, RealizationSource, ResponseBackend, StepperBackend
from fracsource.errors import ConfigError, NumericalError
from fracsource.fem import SpatialSource
from fracsource.fractime import L1Stepper, SpaceOperators, TimeGrid, deterministic_trace
from fracsource.mesh import FineMesh

logger = logging.getLogger(__name__)

STRATEGIES = ("response", "direct")


###############################################################################
# Time signals
###############################################################################

@dataclass(frozen=True)
class TimeFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, t) -> np.ndarray:
        values = np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)
        return np.broadcast_to(values, np.shape(t)).copy()

    @classmethod
    def from_table(cls, times, values, name: str = "table") -> "TimeFunction":
        """Piecewise-linear interpolation of a (t, value) table; constant beyond its ends."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 2:
            raise ConfigError("a time table needs at least two (t, value) rows", "invalid_signal")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("time table must be strictly increasing in t", "invalid_signal")
        if not np.all(np.isfinite(values)):
            raise ConfigError("time table holds non-finite values", "invalid_signal")
        return cls(name, lambda t: np.interp(t, times, values))


def _thirds(t: np.ndarray, first, middle, last) -> np.ndarray:
    return np.where(t < 1 / 3, first, np.where(t < 2 / 3, middle, last))


_CATALOG: Dict[str, Dict[str, Callable[[np.ndarray], np.ndarray]]] = {
    "smooth": {
        "g1": lambda t: t + np.sin(2 * np.pi * t) + np.sin(3 * np.pi * t),
        "g2": lambda t: 0.5 * t + np.sin(np.pi * t) - np.sin(2 * np.pi * t),
    },
    "nonsmooth": {
        "g1": lambda t: _thirds(t, 1.5, 0.9, 1.5) + 0.8 * np.sin(3 * np.pi * t),
        "g2": lambda t: _thirds(t, 1.0, -2.0, 1.5),
    },
}


def time_function(name: str, role: str, value: Optional[float] = None) -> TimeFunction:
    """Catalog signal ``name`` for ``role`` ("g1" or "g2").

    Names: ``smooth``, ``nonsmooth``, ``constant`` (needs ``value``) and ``zero``.
    """
    if role not in ("g1", "g2"):
        raise ValueError(f"role must be 'g1' or 'g2', got {role!r}")
    if name == "zero":
        return TimeFunction("zero", lambda t: np.zeros_like(t))
    if name == "constant":
        if value is None:
            raise ConfigError("constant signal needs a value", "invalid_signal")
        c = float(value)
        return TimeFunction(f"constant({c:g})", lambda t: np.full_like(t, c))
    if name not in _CATALOG:
        raise ConfigError(
            f"unknown signal {name!r}; expected one of {sorted(_CATALOG) + ['constant', 'zero']} or a table",
            "invalid_signal",
        )
    return TimeFunction(f"{name}-{role}", _CATALOG[name][role])


@dataclass(frozen=True)
class SourceTimeSpec:
    g1: TimeFunction
    g2: TimeFunction
    T: float = 1.0
    M_bound: Optional[float] = None

    def __post_init__(self):
        ts = np.linspace(0.0, self.T, 10_001)
        v1, v2 = self.g1(ts), self.g2(ts)
        if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
            raise ConfigError("g1 and g2 must be finite on [0, T]", "invalid_signal")
        sup = float(np.abs(v1).max())
        if self.M_bound is None:
            object.__setattr__(self, "M_bound", sup)
        elif sup > self.M_bound * (1 + 1e-12):
            raise ConfigError(f"|g1| reaches {sup:.6g} on [0, T], above the declared bound M={self.M_bound}",
                              "invalid_signal")

    @classmethod
    def from_catalog(cls, g1: str, g2: str, T: float = 1.0, M_bound: Optional[float] = None) -> "SourceTimeSpec":
        return cls(time_function(g1, "g1"), time_function(g2, "g2"), T=T, M_bound=M_bound)

    def samples(self, grid: TimeGrid):
        """(g1, g2) at t_0..t_N."""
        t = grid.times
        return self.g1(t), self.g2(t)


###############################################################################
# Noise
###############################################################################

def realization_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator of realization ``index``, fixed by (seed, index) alone."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def measurement_stream(seed: int) -> np.random.Generator:
    """Generator for moment noise; its key never coincides with a realization key."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0, 1)))


def brownian_increments(grid: TimeGrid, stream: np.random.Generator) -> np.ndarray:
    """xi_1..xi_N i.i.d. N(0, 1); white noise at t_n is xi_n / sqrt(dt)."""
    return stream.standard_normal(grid.N)


###############################################################################
# Forward model and ensembles
###############################################################################

class ForwardModel:
    """A factorized solver configuration: operators, time grid, source and observation point."""

    def __init__(
        self,
        ops: SpaceOperators,
        grid: TimeGrid,
        source: SpatialSource,
        observation: np.ndarray,
        method: str = "direct",
    ):
        self.ops = ops
        self.grid = grid
        self.source = source
        self.observation = np.asarray(observation, dtype=float)
        self.stepper = L1Stepper(ops, grid, method=method)
        self.load = ops.project_source(source)

    @classmethod
    def build(cls, mesh: FineMesh, ops: SpaceOperators, grid: TimeGrid, source: SpatialSource, x0,
              method: str = "direct") -> "ForwardModel":
        return cls(ops, grid, source, ops.observation_vector(mesh, x0), method=method)

    @property
    def solver_tag(self) -> str:
        return getattr(self.ops, "tag", "fem")

    @property
    def dof(self) -> int:
        return self.ops.size

    def v_trace(self) -> np.ndarray:
        return deterministic_trace(self.ops, self.grid, self.source, self.observation, self.stepper)


@dataclass
class Ensemble:
    trajectories: np.ndarray      # (R, N+1)
    seed: int
    solver_tag: str
    grid: TimeGrid
    strategy: str = "response"
    final_fields: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        traj = np.asarray(self.trajectories, dtype=float)
        if traj.ndim != 2 or traj.shape[1] != self.grid.N + 1:
            raise ValueError(f"trajectories must be (R, N+1={self.grid.N + 1}), got {traj.shape}")
        if not np.all(np.isfinite(traj)):
            raise NumericalError("ensemble holds non-finite values", "non_finite_ensemble")
        if np.any(traj[:, 0] != 0.0):
            raise NumericalError("trajectories must start from zero", "nonzero_initial_value")
        self.trajectories = traj

    @property
    def realization_count(self) -> int:
        return self.trajectories.shape[0]


def run_ensemble(
    model: ForwardModel,
    spec: SourceTimeSpec,
    realizations: int,
    seed: int,
    strategy: str = "response",
    workers: int = 4,
    batch_size: int = 64,
    keep_final: bool = False,
) -> Ensemble:
    """R independent realizations of u(x0, t_0..t_N); noise depends only on (seed, index)."""
    if realizations < 1:
        raise ConfigError(f"realizations must be >= 1, got {realizations}", "invalid_ensemble")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown ensemble strategy {strategy!r}; expected one of {STRATEGIES}",
                          "invalid_ensemble")
    if keep_final and strategy != "direct":
        raise ConfigError("final fields are only available with the direct strategy", "invalid_ensemble")

    grid = model.grid
    g1, g2 = spec.samples(grid)
    g1, g2 = g1[1:], g2[1:]
    if strategy == "response":
        backend = ResponseBackend(model.stepper, model.load, model.observation, g1, g2)
    else:
        backend = StepperBackend(model.stepper, model.load, model.observation, g1, g2, keep_final=keep_final)

    source = RealizationSource(
        count=realizations,
        steps=grid.N,
        noise_fn=lambda i: brownian_increments(grid, realization_stream(seed, i)),
        batch_size=batch_size,
        keep_final=keep_final,
        field_size=model.dof,
    )
    logger.info(f"Ensemble: R={realizations}, seed={seed}, solver={model.solver_tag}, dof={model.dof}, "
                f"N={grid.N}, strategy={strategy}")
    started = time.perf_counter()
    EnsembleRunner(num_workers=workers).run(source, backend)
    logger.debug(f"Ensemble wall time {time.perf_counter() - started:.3f}s")
    return Ensemble(
        trajectories=source.trajectories,
        seed=seed,
        solver_tag=model.solver_tag,
        grid=grid,
        strategy=strategy,
        final_fields=source.final_fields,
    )
