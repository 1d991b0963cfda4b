"""Moments E(t_n), V(t_n) of the fractional-integrated observations, and measurement noise."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from fracsource.errors import ConfigError
from fracsource.fractime import TimeGrid, frac_integral_matrix, impulse_response, response_matrix, volterra_matrix
from fracsource.stochastic import Ensemble, ForwardModel, SourceTimeSpec

logger = logging.getLogger(__name__)

PROVENANCES = ("monte-carlo", "quadrature-exact", "scheme-exact")


@dataclass(frozen=True)
class MomentSeries:
    E: np.ndarray   # at t_1..t_N
    V: np.ndarray   # at t_1..t_N
    grid: TimeGrid
    provenance: str
    noise_level: float = 0.0
    realizations: Optional[int] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if len(self.E) != self.grid.N or len(self.V) != self.grid.N:
            raise ValueError(f"E and V must hold N={self.grid.N} values (t_1..t_N)")

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[1:]


def estimate_moments(ensemble: Ensemble, grid: TimeGrid) -> MomentSeries:
    """Sample mean and unbiased variance of I^{1-alpha} u(x0, ., omega_r) over realizations."""
    R = ensemble.realization_count
    if R < 2:
        raise ConfigError("variance needs at least two realizations", "too_few_realizations")
    if ensemble.trajectories.shape[1] != grid.N + 1:
        raise ConfigError("ensemble and time grid disagree on N", "dimension_mismatch")
    W = frac_integral_matrix(grid, 1.0 - grid.alpha)
    integrated = ensemble.trajectories @ W.T
    E = integrated.mean(axis=0)
    V = integrated.var(axis=0, ddof=1)
    logger.info(f"Estimated moments from R={R} realizations (max V={V[1:].max():.3e})")
    return MomentSeries(E=E[1:], V=V[1:], grid=grid, provenance="monte-carlo", realizations=R)


def exact_moments(v_trace: np.ndarray, spec: SourceTimeSpec, grid: TimeGrid) -> MomentSeries:
    """Trapezoid evaluation of E = int g1(s) v(t-s) ds and V = int g2^2(s) v^2(t-s) ds."""
    v_trace = np.asarray(v_trace, dtype=float)
    if len(v_trace) != grid.N + 1:
        raise ConfigError(f"v trace must hold N+1={grid.N + 1} values, got {len(v_trace)}", "dimension_mismatch")
    if v_trace[0] != 0.0:
        raise ConfigError(f"v(x0, 0) = f(x0) must vanish, got {v_trace[0]:.3e}", "source_at_observation")
    g1, g2 = spec.samples(grid)
    E = volterra_matrix(v_trace, grid.dt) @ g1[:-1]
    V = volterra_matrix(v_trace ** 2, grid.dt) @ (g2[:-1] ** 2)
    return MomentSeries(E=E, V=V, grid=grid, provenance="quadrature-exact")


def scheme_moments(model: ForwardModel, spec: SourceTimeSpec) -> MomentSeries:
    """E and V that an infinite ensemble of the discrete scheme would produce.

    With G = W H (fractional quadrature times the single-point impulse
    response) the integrated observation is ``G (g1 + g2 xi / sqrt(dt))``,
    so ``E = G g1`` and ``V = G^2 (g2^2 / dt)`` entrywise.
    """
    grid = model.grid
    H = response_matrix(impulse_response(model.stepper, model.load, model.observation))
    G = frac_integral_matrix(grid, 1.0 - grid.alpha)[1:, 1:] @ H
    g1, g2 = spec.samples(grid)
    E = G @ g1[1:]
    V = (G ** 2) @ (g2[1:] ** 2 / grid.dt)
    return MomentSeries(E=E, V=V, grid=grid, provenance="scheme-exact")


def inject_noise(series: MomentSeries, delta: float, stream: np.random.Generator) -> MomentSeries:
    """E_delta = E (1 + delta xi), V_delta = V (1 + delta xi') with xi, xi' ~ U(-1, 1)."""
    if delta < 0:
        raise ConfigError(f"noise level must be >= 0, got {delta}", "invalid_noise")
    if delta == 0:
        return series
    N = series.grid.N
    xi = stream.uniform(-1.0, 1.0, size=N)
    xi_v = stream.uniform(-1.0, 1.0, size=N)
    return replace(
        series,
        E=series.E * (1.0 + delta * xi),
        V=series.V * (1.0 + delta * xi_v),
        noise_level=float(delta),
    )
