"""L1 time discretization of the Caputo derivative and the fractional time steppers.

On a uniform grid every L1 weight depends only on the lag ``j = n - k``, so the
whole table is carried as the vector ``a_j = b_{n, n-j}``:

    a_j = dt^{-alpha} / Gamma(2 - alpha) * (j^{1-alpha} - (j-1)^{1-alpha}),  j >= 1.

Steppers solve ``(a_1 M + S) u_n = M (q_n + sum_{k=1}^{n-1} (a_{n-k} - a_{n-k+1}) u_k + a_n u_0)``
with one factorization of ``a_1 M + S`` reused for every step and every
right-hand side.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
import scipy.linalg
from scipy.special import gamma

from fracsource.errors import ConfigError, NumericalError
from fracsource.fem import SPDFactor, SpatialSource

logger = logging.getLogger(__name__)

# Largest |v(x0, 0)| accepted, relative to max f, before the space is said to smear f onto x0.
SOURCE_LEAK_RTOL = 0.05


class SpaceOperators(Protocol):
    """Anything with a mass and a stiffness matrix: fine FEM or reduced GMsFEM operators."""

    mass: object
    stiffness: object

    @property
    def size(self) -> int: ...

    def project_source(self, f: SpatialSource) -> np.ndarray: ...


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int
    alpha: float

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"final time T must be positive, got {self.T}", "invalid_time_grid")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError(f"number of steps N must be an integer >= 2, got {self.N}", "invalid_time_grid")
        if not 0.5 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (1/2, 1), got {self.alpha}", "invalid_alpha")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        """t_0 .. t_N."""
        return np.arange(self.N + 1) * self.dt

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(T=self.T, N=self.N * factor, alpha=self.alpha)


@dataclass(frozen=True)
class L1Coefficients:
    grid: TimeGrid
    a: np.ndarray  # a[j] for lag j = 0..N; a[0] is unused and zero

    def b(self, n: int, k: int) -> float:
        if not 0 <= k <= n - 1 or n > self.grid.N:
            raise IndexError(f"b_{{{n},{k}}} is defined for 1 <= n <= N, 0 <= k <= n-1")
        return float(self.a[n - k])

    @property
    def table(self) -> np.ndarray:
        """Dense lower-triangular table, ``table[n-1, k] = b_{n,k}``."""
        N = self.grid.N
        n = np.arange(1, N + 1)[:, None]
        k = np.arange(N)[None, :]
        lag = np.where(k <= n - 1, n - k, 0)
        return np.where(k <= n - 1, self.a[lag], 0.0)

    @property
    def memory_weights(self) -> np.ndarray:
        """``w[j] = a_j - a_{j+1}`` for j = 1..N-1, the weight of a history term at lag j."""
        w = np.zeros(self.grid.N)
        w[1:] = self.a[1:-1] - self.a[2:]
        return w


def l1_coefficients(grid: TimeGrid) -> L1Coefficients:
    j = np.arange(grid.N + 1, dtype=float)
    a = np.zeros(grid.N + 1)
    a[1:] = (j[1:] ** (1 - grid.alpha) - (j[1:] - 1) ** (1 - grid.alpha))
    a *= grid.dt ** (-grid.alpha) / gamma(2 - grid.alpha)
    return L1Coefficients(grid=grid, a=a)


def caputo_apply(coeffs: L1Coefficients, history: np.ndarray) -> float:
    """L1 approximation of the Caputo derivative at t_n from psi(t_0..t_n)."""
    history = np.asarray(history, dtype=float)
    n = len(history) - 1
    if n < 1 or n > coeffs.grid.N:
        raise ValueError(f"history must hold between 2 and N+1={coeffs.grid.N + 1} values, got {len(history)}")
    # Written as sum_j b_{n,j-1} (psi_j - psi_{j-1}) so constant histories give exactly 0.
    increments = np.diff(history)
    return float(np.dot(coeffs.a[n:0:-1], increments))


###############################################################################
# Riemann-Liouville fractional integral
###############################################################################

def frac_integral_matrix(grid: TimeGrid, order: float) -> np.ndarray:
    """Product-trapezoid weights W with ``(I^order psi)(t_n) = (W @ psi)[n]``, row 0 zero.

    The quadrature integrates the piecewise-linear interpolant of psi exactly.
    """
    if not 0.0 < order < 1.0:
        raise ValueError(f"fractional integral order must lie in (0, 1), got {order}")
    N, beta = grid.N, order
    W = np.zeros((N + 1, N + 1))
    p = beta + 1.0
    scale = grid.dt ** beta / gamma(beta + 2.0)
    for n in range(1, N + 1):
        k = np.arange(1, n)
        lag = (n - k).astype(float)
        W[n, 0] = (n - 1) ** p - (n - 1 - beta) * n ** beta
        W[n, 1:n] = (lag + 1) ** p - 2 * lag ** p + (lag - 1) ** p
        W[n, n] = 1.0
    return W * scale


def frac_integral_series(grid: TimeGrid, order: float, series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if series.shape[-1] != grid.N + 1:
        raise ValueError(f"series must be sampled on t_0..t_N ({grid.N + 1} values), got {series.shape[-1]}")
    return series @ frac_integral_matrix(grid, order).T


def volterra_matrix(kernel: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid discretization of ``t_n -> int_0^{t_n} g(s) kernel(t_n - s) ds`` on g(t_0..t_{N-1}).

    ``kernel`` holds kernel(t_0..t_N) with kernel(t_0) = 0, so the endpoint
    s = t_n drops out and only the s = 0 endpoint is halved.
    """
    kernel = np.asarray(kernel, dtype=float)
    N = len(kernel) - 1
    A = scipy.linalg.toeplitz(kernel[1:], np.zeros(N))
    A[:, 0] *= 0.5
    return dt * A


###############################################################################
# Time stepping
###############################################################################

@dataclass
class Trajectory:
    trace: np.ndarray                    # (N+1,) or (N+1, B) observed values
    fields: Optional[np.ndarray] = None  # (N+1, m) or (N+1, m, B) when retained


class L1Stepper:
    """Marches ``M d^alpha u + S u = M q`` with the L1 scheme.

    The stepper owns a factorization of ``a_1 M + S`` and can be shared
    read-only by concurrent callers; every ``march`` keeps its own history.
    """

    def __init__(self, ops: SpaceOperators, grid: TimeGrid, method: str = "direct"):
        self.ops = ops
        self.grid = grid
        self.coeffs = l1_coefficients(grid)
        self._weights = self.coeffs.memory_weights
        self.system = SPDFactor(self.coeffs.a[1] * ops.mass + ops.stiffness, method=method)
        self.logger = logging.getLogger(__name__)
        self.logger.debug(f"L1 stepper ready: {ops.size} dofs, N={grid.N}, alpha={grid.alpha}")

    def march(
        self,
        load: np.ndarray,
        amplitudes: np.ndarray,
        initial: Optional[np.ndarray] = None,
        observation: Optional[np.ndarray] = None,
        keep_fields: bool = True,
    ) -> Trajectory:
        """Step with forcing ``q_n = amplitudes[n] * load`` for n = 1..N.

        ``amplitudes`` has N rows (t_1..t_N), optionally with a trailing batch
        axis. Returns the observed trace ``observation @ u_n`` and, when
        ``keep_fields`` is set, all fields u_0..u_N.
        """
        N = self.grid.N
        a = self.coeffs.a
        w = self._weights
        amplitudes = np.asarray(amplitudes, dtype=float)
        if amplitudes.shape[0] != N:
            raise ValueError(f"amplitudes must hold N={N} rows (t_1..t_N), got {amplitudes.shape[0]}")
        batch_shape = amplitudes.shape[1:]
        m = self.ops.size

        history = np.zeros((N + 1, m) + batch_shape)
        if initial is not None:
            history[0] = np.asarray(initial, dtype=float).reshape((m,) + (1,) * len(batch_shape))
        mass = self.ops.mass
        mass_load = mass @ np.asarray(load, dtype=float)
        mass_load = mass_load.reshape((m,) + (1,) * len(batch_shape))

        for n in range(1, N + 1):
            memory = a[n] * history[0]
            if n > 1:
                # sum_{k=1}^{n-1} w[n-k] u_k
                memory = memory + np.tensordot(w[n - 1:0:-1], history[1:n], axes=(0, 0))
            rhs = amplitudes[n - 1] * mass_load + _apply(mass, memory)
            history[n] = self.system.solve(rhs)

        if not np.all(np.isfinite(history[-1])):
            raise NumericalError("time stepping produced non-finite values", "solver_breakdown")
        trace = None
        if observation is not None:
            trace = np.tensordot(history, np.asarray(observation, dtype=float), axes=(1, 0))
        return Trajectory(trace=trace, fields=history if keep_fields else None)


def _apply(matrix, block: np.ndarray) -> np.ndarray:
    if block.ndim <= 2:
        return matrix @ block
    flat = block.reshape(block.shape[0], -1)
    return (matrix @ flat).reshape(block.shape)


def step_deterministic_v(
    ops: SpaceOperators,
    grid: TimeGrid,
    f: SpatialSource,
    stepper: Optional[L1Stepper] = None,
) -> np.ndarray:
    """Fields v(., t_0..t_N) of the homogeneous problem started from v_0 = f."""
    stepper = stepper or L1Stepper(ops, grid)
    f_vec = ops.project_source(f)
    result = stepper.march(load=np.zeros_like(f_vec), amplitudes=np.zeros(grid.N), initial=f_vec)
    return result.fields


def deterministic_trace(
    ops: SpaceOperators,
    grid: TimeGrid,
    f: SpatialSource,
    observation: np.ndarray,
    stepper: Optional[L1Stepper] = None,
    leak_rtol: float = SOURCE_LEAK_RTOL,
) -> np.ndarray:
    """v(x0, t_0..t_N) with v(x0, 0) = f(x0) = 0.

    A reduced space represents f only up to its projection, which may leave a
    small value at x0. It is reported and replaced by the exact 0 while below
    ``leak_rtol * max f``; a larger value raises.
    """
    fields = step_deterministic_v(ops, grid, f, stepper)
    trace = fields @ observation
    leak = float(trace[0])
    if leak != 0.0:
        scale = f.bound
        if not abs(leak) <= leak_rtol * scale:
            raise NumericalError(
                f"projected source does not vanish at the observation point: v(x0, 0) = {leak:.3e} "
                f"(max f = {scale:.3e}); use more bases per neighborhood or move the source away from x0",
                "source_leaks_to_observation",
            )
        logger.info(f"Projected source leaves v(x0, 0) = {leak:.3e} (max f = {scale:.3e}); using f(x0) = 0")
        trace[0] = 0.0
    return trace


def stochastic_amplitudes(grid: TimeGrid, g1: np.ndarray, g2: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Scalar forcing ``g1(t_n) + g2(t_n) dt^{-1/2} xi_n`` for n = 1..N."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if len(g1) != grid.N or len(g2) != grid.N or noise.shape[0] != grid.N:
        raise ValueError(f"g1, g2 and noise must be sampled at t_1..t_N ({grid.N} values)")
    if noise.ndim == 2:
        g1 = g1[:, None]
        g2 = g2[:, None]
    return g1 + g2 * noise / np.sqrt(grid.dt)


def step_stochastic_u(
    ops: SpaceOperators,
    grid: TimeGrid,
    f: SpatialSource,
    g1: np.ndarray,
    g2: np.ndarray,
    noise: np.ndarray,
    observation: Optional[np.ndarray] = None,
    keep_fields: bool = False,
    stepper: Optional[L1Stepper] = None,
) -> Trajectory:
    """One (or a batch of) realizations of the stochastic scheme with u_0 = 0.

    ``noise`` holds N standard normal draws, or an (N, B) block for B
    realizations stepped together.
    """
    stepper = stepper or L1Stepper(ops, grid)
    amplitudes = stochastic_amplitudes(grid, g1, g2, noise)
    if observation is None:
        keep_fields = True
    return stepper.march(
        load=ops.project_source(f),
        amplitudes=amplitudes,
        observation=observation,
        keep_fields=keep_fields,
    )


def impulse_response(stepper: L1Stepper, load: np.ndarray, observation: np.ndarray) -> np.ndarray:
    """Observed response h_1..h_N to a unit forcing amplitude at step 1 (zero elsewhere)."""
    amplitudes = np.zeros(stepper.grid.N)
    amplitudes[0] = 1.0
    trace = stepper.march(load, amplitudes, observation=observation, keep_fields=False).trace
    return trace[1:]


def response_matrix(response: np.ndarray) -> np.ndarray:
    """Lower-triangular Toeplitz H with ``trace[1:] = H @ amplitudes`` for any forcing."""
    response = np.asarray(response, dtype=float)
    return scipy.linalg.toeplitz(response, np.zeros(len(response)))
