"""Volterra systems for g1 and g2^2 and their regularized Levenberg-Marquardt reconstruction.

Both unknowns are recovered on t_0..t_{N-1} only: the trapezoid rule never
weights the final node, so values on the last subinterval are not determined
by the data.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from fracsource.errors import ConfigError, NumericalError
from fracsource.fractime import TimeGrid, volterra_matrix
from fracsource.moments import MomentSeries
from fracsource.stochastic import SourceTimeSpec

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100_000
DEFAULT_STOP_TOL = 1e-10
# gamma = GAMMA_SCALE * ||A^T A||_inf when no value is configured.
GAMMA_SCALE = 1e-8


@dataclass(frozen=True)
class VolterraSystem:
    A1: np.ndarray
    A2: np.ndarray
    v_trace: np.ndarray   # v(x0, t_1..t_N)
    dt: float

    @property
    def N(self) -> int:
        return self.A1.shape[0]


@dataclass(frozen=True)
class IterationOutcome:
    solution: np.ndarray
    iterations: int
    last_change: float
    residual: float
    gamma: float
    spectral_radius: float
    converged: bool


@dataclass(frozen=True)
class ReconstructionResult:
    times: np.ndarray        # t_0..t_{N-1}
    g1_rec: np.ndarray
    g2sq_rec: np.ndarray
    g2abs_rec: np.ndarray
    clipped: int
    g1: IterationOutcome
    g2sq: IterationOutcome

    @property
    def iterations_used(self) -> Tuple[int, int]:
        return self.g1.iterations, self.g2sq.iterations

    @property
    def gamma1(self) -> float:
        return self.g1.gamma

    @property
    def gamma2(self) -> float:
        return self.g2sq.gamma

    @property
    def spectral_radius_1(self) -> float:
        return self.g1.spectral_radius

    @property
    def spectral_radius_2(self) -> float:
        return self.g2sq.spectral_radius


def assemble_volterra(v_trace: np.ndarray, grid: TimeGrid) -> VolterraSystem:
    v_trace = np.asarray(v_trace, dtype=float)
    if len(v_trace) != grid.N + 1:
        raise ConfigError(f"v trace must hold N+1={grid.N + 1} values, got {len(v_trace)}", "dimension_mismatch")
    if v_trace[0] != 0.0:
        raise ConfigError(f"v(x0, 0) = f(x0) must vanish, got {v_trace[0]:.3e}", "source_at_observation")
    if not v_trace[1] > 0.0:
        raise NumericalError(
            f"v(x0, t_1) = {v_trace[1]:.3e} is not positive; the Volterra system is singular. "
            "Refine the time step or move the observation point closer to the source support",
            "nonpositive_v1",
        )
    return VolterraSystem(
        A1=volterra_matrix(v_trace, grid.dt),
        A2=volterra_matrix(v_trace ** 2, grid.dt),
        v_trace=v_trace[1:],
        dt=grid.dt,
    )


def default_gamma(A: np.ndarray) -> float:
    return GAMMA_SCALE * float(np.abs(A.T @ A).sum(axis=1).max())


def spectral_radius(A: np.ndarray, gamma: float) -> float:
    """rho(I - (A^T A + gamma I)^{-1} A^T A) = gamma / (sigma_min^2 + gamma)."""
    if gamma <= 0:
        raise ConfigError(f"regularization gamma must be positive, got {gamma}", "invalid_gamma")
    sigma_min = float(scipy.linalg.svdvals(A).min())
    return gamma / (sigma_min ** 2 + gamma)


def power_iteration_radius(
    A: np.ndarray,
    gamma: float,
    tol: float = 1e-12,
    max_iter: int = 20_000,
    seed: int = 0,
) -> float:
    """Rayleigh-quotient power iteration on the iteration matrix gamma (A^T A + gamma I)^{-1}."""
    AtA = A.T @ A
    factor = scipy.linalg.cho_factor(AtA + gamma * np.eye(len(AtA)))
    x = np.random.default_rng(seed).standard_normal(len(AtA))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = gamma * scipy.linalg.cho_solve(factor, x)
        new_estimate = float(x @ y)
        x = y / np.linalg.norm(y)
        if abs(new_estimate - estimate) <= tol * max(new_estimate, 1e-300):
            return new_estimate
        estimate = new_estimate
    return estimate


def _fixed_point(
    A: np.ndarray,
    data: np.ndarray,
    gamma: float,
    max_iter: int,
    stop_tol: float,
    label: str,
) -> IterationOutcome:
    """g_{k+1} = g_k + (A^T A + gamma I)^{-1} A^T (data - A g_k) from g_0 = 0."""
    if gamma <= 0:
        raise ConfigError(f"regularization gamma must be positive, got {gamma}", "invalid_gamma")
    AtA = A.T @ A
    try:
        factor = scipy.linalg.cho_factor(AtA + gamma * np.eye(len(AtA)))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"normal equations for {label} could not be factored: {e}", "solve_failed") from e
    rho = spectral_radius(A, gamma)
    if not rho < 1.0:
        raise NumericalError(f"iteration for {label} is not contractive (rho={rho})", "not_contractive")

    g = np.zeros(A.shape[1])
    change = np.inf
    iterations = 0
    while iterations < max_iter:
        step = scipy.linalg.cho_solve(factor, A.T @ (data - A @ g))
        g = g + step
        iterations += 1
        change = float(np.abs(step).max())
        if change < stop_tol:
            break
    converged = change < stop_tol
    residual = float(np.linalg.norm(A @ g - data))
    if not converged:
        logger.warning(f"{label}: stopped at max_iter={max_iter} with last change {change:.3e} (rho={rho:.6f})")
    else:
        logger.debug(f"{label}: converged in {iterations} iterations, residual {residual:.3e}")
    return IterationOutcome(
        solution=g,
        iterations=iterations,
        last_change=change,
        residual=residual,
        gamma=gamma,
        spectral_radius=rho,
        converged=converged,
    )


def reconstruct_g2_abs(g2sq_rec: np.ndarray) -> Tuple[np.ndarray, int]:
    """|g2| from the g2^2 reconstruction; negative entries are clipped to zero and counted."""
    g2sq_rec = np.asarray(g2sq_rec, dtype=float)
    negative = g2sq_rec < 0
    clipped = int(negative.sum())
    if clipped:
        logger.warning(f"Clipped {clipped} negative g2^2 entries to zero")
    return np.sqrt(np.where(negative, 0.0, g2sq_rec)), clipped


def lm_iterate(
    system: VolterraSystem,
    E_delta: np.ndarray,
    V_delta: np.ndarray,
    gamma1: Optional[float] = None,
    gamma2: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    stop_tol: float = DEFAULT_STOP_TOL,
) -> ReconstructionResult:
    """Run the g1 and g2^2 iterations (concurrently) and collect the reconstruction."""
    N = system.N
    if N < 2:
        raise ConfigError("at least two time steps are required", "invalid_time_grid")
    if len(E_delta) != N or len(V_delta) != N:
        raise ConfigError(f"moment data must hold N={N} values", "dimension_mismatch")
    gamma1 = default_gamma(system.A1) if gamma1 is None else float(gamma1)
    gamma2 = default_gamma(system.A2) if gamma2 is None else float(gamma2)

    with ThreadPoolExecutor(max_workers=2) as executor:
        f1 = executor.submit(_fixed_point, system.A1, np.asarray(E_delta, float), gamma1, max_iter, stop_tol, "g1")
        f2 = executor.submit(_fixed_point, system.A2, np.asarray(V_delta, float), gamma2, max_iter, stop_tol, "g2^2")
        out1, out2 = f1.result(), f2.result()

    g2abs, clipped = reconstruct_g2_abs(out2.solution)
    logger.info(f"Reconstruction: g1 {out1.iterations} iterations (rho={out1.spectral_radius:.4g}), "
                f"g2^2 {out2.iterations} iterations (rho={out2.spectral_radius:.4g}), {clipped} clipped")
    return ReconstructionResult(
        times=np.arange(N) * system.dt,
        g1_rec=out1.solution,
        g2sq_rec=out2.solution,
        g2abs_rec=g2abs,
        clipped=clipped,
        g1=out1,
        g2sq=out2,
    )


def reconstruct(
    v_trace: np.ndarray,
    moments: MomentSeries,
    gamma1: Optional[float] = None,
    gamma2: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    stop_tol: float = DEFAULT_STOP_TOL,
) -> ReconstructionResult:
    system = assemble_volterra(v_trace, moments.grid)
    return lm_iterate(system, moments.E, moments.V, gamma1, gamma2, max_iter, stop_tol)


def truth_errors(result: ReconstructionResult, spec: SourceTimeSpec) -> Dict[str, float]:
    """Relative l2 and max-norm errors of g1 and |g2| against the known signals."""
    g1_true = spec.g1(result.times)
    g2_true = np.abs(spec.g2(result.times))
    errors = {}
    for name, rec, true in (("g1", result.g1_rec, g1_true), ("g2abs", result.g2abs_rec, g2_true)):
        scale_2 = np.linalg.norm(true)
        scale_inf = np.abs(true).max()
        diff = rec - true
        errors[f"{name}_rel_l2"] = float(np.linalg.norm(diff) / scale_2) if scale_2 > 0 else float(np.linalg.norm(diff))
        errors[f"{name}_rel_inf"] = float(np.abs(diff).max() / scale_inf) if scale_inf > 0 else float(np.abs(diff).max())
    return errors


def plateau_means(times: np.ndarray, values: np.ndarray, T: float, pieces: int = 3) -> np.ndarray:
    """Mean of ``values`` over each of ``pieces`` equal parts of [0, T)."""
    edges = np.linspace(0.0, T, pieces + 1)
    means = np.full(pieces, np.nan)
    for i in range(pieces):
        inside = (times >= edges[i]) & (times < edges[i + 1])
        if inside.any():
            means[i] = float(np.mean(values[inside]))
    return means
