"""Convergence and cost studies: L1 time order, Monte Carlo rate, FEM vs GMsFEM cost, noise trend."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import gamma

from fracsource.fractime import L1Stepper, TimeGrid
from fracsource.inverse import DEFAULT_MAX_ITER, DEFAULT_STOP_TOL, reconstruct, truth_errors
from fracsource.moments import MomentSeries, estimate_moments, exact_moments, inject_noise, scheme_moments
from fracsource.pipeline import Problem, build_model, build_operators
from fracsource.stochastic import Ensemble, ForwardModel, SourceTimeSpec, measurement_stream, run_ensemble
from fracsource.verify import l2_norm

logger = logging.getLogger(__name__)

STUDY_KINDS = ("time-order", "mc-rate", "dof-speedup", "noise-trend")
DEFAULT_DELTAS = (0.04, 0.02, 0.01, 0.005)


@dataclass
class StudyTable:
    name: str
    columns: List[str]
    rows: List[List[float]] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)

    def as_rows(self) -> List[List[str]]:
        out = [list(self.columns)]
        for row in self.rows:
            out.append([format(v, ".10g") if isinstance(v, float) else str(v) for v in row])
        return out


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


###############################################################################
# Time order
###############################################################################

@dataclass(frozen=True)
class ScalarOperators:
    """One-dof operators for the scalar equation ``d^alpha u + lam u = q``."""

    lam: float = 1.0

    @property
    def mass(self) -> np.ndarray:
        return np.ones((1, 1))

    @property
    def stiffness(self) -> np.ndarray:
        return np.full((1, 1), self.lam)

    @property
    def size(self) -> int:
        return 1

    def project_source(self, f) -> np.ndarray:
        return np.ones(1)


def scalar_l1_error(alpha: float, N: int, T: float = 1.0, lam: float = 1.0) -> float:
    """Max nodal error of the L1 scheme for u = t^2, forced by q = 2 t^{2-alpha} / Gamma(3-alpha) + lam t^2."""
    grid = TimeGrid(T=T, N=N, alpha=alpha)
    t = grid.times[1:]
    q = 2.0 * t ** (2.0 - alpha) / gamma(3.0 - alpha) + lam * t ** 2
    trace = L1Stepper(ScalarOperators(lam), grid).march(np.ones(1), q, observation=np.ones(1),
                                                        keep_fields=False).trace
    return float(np.abs(trace - grid.times ** 2).max())


def time_order_study(
    alphas: Sequence[float] = (0.6, 0.75, 0.9),
    steps: Sequence[int] = (40, 80, 160),
    T: float = 1.0,
) -> StudyTable:
    table = StudyTable("time-order", ["alpha", "N", "dt", "max_error", "observed_order", "expected_order"])
    for alpha in alphas:
        previous = None
        for N in steps:
            err = scalar_l1_error(alpha, N, T)
            order = float(np.log2(previous / err)) if previous is not None else float("nan")
            table.rows.append([float(alpha), int(N), T / N, err, order, 2.0 - alpha])
            previous = err
        table.summary[f"order_alpha_{alpha:g}"] = order
        logger.info(f"alpha={alpha}: observed L1 order {order:.3f} (expected {2 - alpha:.3f})")
    return table


###############################################################################
# Monte Carlo rate
###############################################################################

def _relative_rms(estimate: np.ndarray, reference: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - reference) / np.linalg.norm(reference))


def mc_rate_study(
    model: ForwardModel,
    spec: SourceTimeSpec,
    realizations: Sequence[int] = (250, 500, 1000, 2000, 4000),
    seed: int = 0,
    workers: int = 4,
    batch_size: int = 256,
) -> StudyTable:
    """Moment errors against the scheme's own infinite-ensemble moments, for nested ensembles."""
    realizations = sorted(int(r) for r in realizations)
    reference = scheme_moments(model, spec)
    ensemble = run_ensemble(model, spec, realizations[-1], seed, workers=workers, batch_size=batch_size)
    table = StudyTable("mc-rate", ["R", "rel_error_E", "rel_error_V"])
    for R in realizations:
        subset = Ensemble(
            trajectories=ensemble.trajectories[:R],
            seed=ensemble.seed,
            solver_tag=ensemble.solver_tag,
            grid=ensemble.grid,
            strategy=ensemble.strategy,
        )
        series = estimate_moments(subset, model.grid)
        table.rows.append([R, _relative_rms(series.E, reference.E), _relative_rms(series.V, reference.V)])
    table.summary["slope_E"] = loglog_slope(realizations, [r[1] for r in table.rows])
    table.summary["slope_V"] = loglog_slope(realizations, [r[2] for r in table.rows])
    logger.info(f"Monte Carlo rate: slope E {table.summary['slope_E']:.3f}, V {table.summary['slope_V']:.3f}")
    return table


###############################################################################
# FEM vs GMsFEM
###############################################################################

def dof_speedup_study(problem: Problem, realizations: int = 1000, seed: int = 0, bases: Sequence[int] = (1, 2),
                      cache=None) -> StudyTable:
    """Degrees of freedom and ensemble wall time of fine FEM and GMsFEM on one configuration.

    Every solver steps each realization through the recursion (``direct``
    strategy), so wall time scales with the system size.
    """
    config = problem.config
    table = StudyTable("dof-speedup", ["solver", "dof", "offline_s", "ensemble_s", "speedup", "v_rel_l2_vs_fem"])
    reference_v = None
    reference_time = None
    for solver, L in [("fem", None)] + [("gmsfem", L) for L in bases]:
        started = time.perf_counter()
        ops = build_operators(problem, solver, L, cache)
        model = build_model(problem, ops)
        offline = time.perf_counter() - started

        v = model.v_trace()
        started = time.perf_counter()
        run_ensemble(model, problem.spec, realizations, seed, strategy="direct",
                     workers=config.ensemble.workers, batch_size=config.ensemble.batch_size)
        elapsed = time.perf_counter() - started
        if reference_v is None:
            reference_v, reference_time = v, elapsed
        diff = l2_norm(v - reference_v, problem.grid.dt) / l2_norm(reference_v, problem.grid.dt)
        speedup = reference_time / elapsed
        table.rows.append([model.solver_tag, model.dof, offline, elapsed, speedup, diff])
        table.summary[f"dof_{model.solver_tag}"] = float(model.dof)
        table.summary[f"speedup_{model.solver_tag}"] = speedup
        table.summary[f"v_rel_l2_{model.solver_tag}"] = diff
        logger.info(f"{model.solver_tag}: {model.dof} dofs, ensemble {elapsed:.2f}s, v rel L2 diff {diff:.3e}")
    return table


###############################################################################
# Noise trend
###############################################################################

def noise_trend_study(
    v_trace: np.ndarray,
    spec: SourceTimeSpec,
    grid: TimeGrid,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    seed: int = 0,
    moments: Optional[MomentSeries] = None,
    gamma1: Optional[float] = None,
    gamma2: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    stop_tol: float = DEFAULT_STOP_TOL,
) -> StudyTable:
    """Reconstruction errors for each noise level; every level reuses the draws of ``seed``."""
    base = moments if moments is not None else exact_moments(v_trace, spec, grid)
    table = StudyTable("noise-trend", ["delta", "g1_rel_l2", "g2abs_rel_l2", "g1_rel_inf", "g2abs_rel_inf"])
    for delta in deltas:
        noisy = inject_noise(base, float(delta), measurement_stream(seed))
        result = reconstruct(v_trace, noisy, gamma1, gamma2, max_iter, stop_tol)
        errors = truth_errors(result, spec)
        table.rows.append([float(delta), errors["g1_rel_l2"], errors["g2abs_rel_l2"],
                           errors["g1_rel_inf"], errors["g2abs_rel_inf"]])
    deltas = [r[0] for r in table.rows]
    table.summary["slope_g1"] = float(np.polyfit(deltas, [r[1] for r in table.rows], 1)[0])
    table.summary["slope_g2abs"] = float(np.polyfit(deltas, [r[2] for r in table.rows], 1)[0])
    logger.info(f"Noise trend: slope g1 {table.summary['slope_g1']:.4g}, |g2| {table.summary['slope_g2abs']:.4g}")
    return table
