"""Numerical checks of the stability bounds for g1 and g2 and of the reverse convolution inequality.

All norms of sampled tables use the trapezoid rule on the uniform grid the
table lives on. Every check returns a ``BoundCheck``; a failed check is
data, not an exception, so a report can list every outcome.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import gamma

from fracsource.errors import ConfigError, VerificationError
from fracsource.fractime import TimeGrid

logger = logging.getLogger(__name__)

DEFAULT_TOL = 0.02
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    tol: float = DEFAULT_TOL
    applicable: bool = True
    note: str = ""

    @property
    def margin(self) -> float:
        """Relative slack ``(rhs (1 + tol) - lhs) / rhs``; negative when violated."""
        bound = self.rhs * (1 + self.tol)
        return (bound - self.lhs) / self.rhs if self.rhs > 0 else (0.0 if self.lhs <= 0 else -np.inf)

    @property
    def passed(self) -> bool:
        return (not self.applicable) or self.lhs <= self.rhs * (1 + self.tol)


@dataclass
class BoundsReport:
    eta: float
    C_alpha: float
    B_eta: float
    M_bound: float
    Cf: float
    sign_changes: int
    checks: List[BoundCheck] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"eta={self.eta:.6g}  C_alpha={self.C_alpha:.6g}  B_eta={self.B_eta:.6g}  "
                  f"M={self.M_bound:.6g}  Cf={self.Cf:.6g}  sign changes of g1: {self.sign_changes}\n")
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            if not c.applicable:
                status = "SKIP"
            out.write(f"  [{status}] {c.name}: lhs={c.lhs:.6e} rhs={c.rhs:.6e} margin={c.margin:+.3%}")
            out.write(f"  ({c.note})\n" if c.note else "\n")
        out.write("all checks passed\n" if self.all_passed else "some checks FAILED\n")
        return out.getvalue()

    def to_rows(self) -> List[List[str]]:
        rows = [["name", "lhs", "rhs", "margin", "pass"]]
        for c in self.checks:
            rows.append([c.name, repr(c.lhs), repr(c.rhs), repr(c.margin), str(c.passed).lower()])
        return rows

    def raise_on_failure(self) -> None:
        failed = [c.name for c in self.checks if not c.passed]
        if failed:
            raise VerificationError(f"bound checks failed: {', '.join(failed)}")


###############################################################################
# Quadrature helpers
###############################################################################

def _trapezoid(values: np.ndarray, dt: float) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(dt * (values.sum() - 0.5 * (values[0] + values[-1])))


def l1_norm(values: np.ndarray, dt: float) -> float:
    return _trapezoid(np.abs(values), dt)


def l2_norm(values: np.ndarray, dt: float) -> float:
    return float(np.sqrt(_trapezoid(np.asarray(values, dtype=float) ** 2, dt)))


def steps_of(length: float, dt: float) -> int:
    """Number of grid steps covering ``length``; it must be a multiple of dt."""
    n = int(round(length / dt))
    if abs(n * dt - length) > 1e-9 * max(1.0, length):
        raise ConfigError(f"interval length {length} is not a multiple of dt={dt}", "invalid_eta")
    return n


def C_alpha(alpha: float) -> float:
    return 1.0 / gamma(2.0 - alpha)


def B_eta(v_trace: np.ndarray, grid: TimeGrid, eta: float) -> float:
    """1 / ||v(x0, .)||_{L1(0, eta)}."""
    if not 0 < eta < grid.T:
        raise ConfigError(f"eta must lie in (0, T={grid.T}), got {eta}", "invalid_eta")
    n = steps_of(eta, grid.dt)
    norm = l1_norm(np.asarray(v_trace)[: n + 1], grid.dt)
    if not norm > 0:
        raise ConfigError("v(x0, .) vanishes on (0, eta); B_eta is undefined", "invalid_eta")
    return 1.0 / norm


def detect_sign_changes(values: np.ndarray, zero_tol: float = ZERO_TOL) -> int:
    """Strict sign flips between consecutive samples, ignoring numerical zeros."""
    values = np.asarray(values, dtype=float)
    signs = np.sign(values[np.abs(values) >= zero_tol])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


###############################################################################
# Bound checks
###############################################################################

def _expected_trajectory_norm(trajectories: np.ndarray, dt: float) -> float:
    trajectories = np.atleast_2d(trajectories)
    norms = [l1_norm(row, dt) for row in trajectories]
    return float(np.mean(norms))


def _rhs_a(trajectories, v_trace, grid: TimeGrid, eta: float) -> float:
    return (C_alpha(grid.alpha) * B_eta(v_trace, grid, eta) * grid.T ** (1 - grid.alpha)
            * _expected_trajectory_norm(trajectories, grid.dt))


def check_bound_a(
    g1: np.ndarray,
    trajectories: np.ndarray,
    v_trace: np.ndarray,
    grid: TimeGrid,
    eta: float,
    tol: float = DEFAULT_TOL,
) -> BoundCheck:
    """||g1||_{L1(0,T-eta)} <= C_alpha B_eta T^{1-alpha} E||u(x0,.)||_{L1(0,T)} for single-signed g1.

    ``g1`` is sampled at t_0..t_N; ``trajectories`` holds one row per
    realization (a single row for a deterministic surrogate).
    """
    n_changes = detect_sign_changes(g1)
    if n_changes > 0:
        raise ConfigError(f"g1 changes sign {n_changes} times; use bound (b)", "sign_changes")
    n_eta = steps_of(eta, grid.dt)
    lhs = l1_norm(np.asarray(g1)[: grid.N - n_eta + 1], grid.dt)
    return BoundCheck("bound_a", lhs, _rhs_a(trajectories, v_trace, grid, eta), tol)


def bound_b_factor(B: float, Cf: float, T: float, sign_changes: int) -> float:
    """((B Cf T + 1)^{N+1} - 1) / (B Cf T), evaluated without overflow for large B."""
    x = B * Cf * T
    if x <= 0:
        return float(sign_changes + 1)
    return float(np.expm1((sign_changes + 1) * np.log1p(x)) / x)


def check_bound_b(
    g1: np.ndarray,
    trajectories: np.ndarray,
    v_trace: np.ndarray,
    grid: TimeGrid,
    eta: float,
    M_bound: float,
    Cf: float,
    sign_changes: Optional[int] = None,
    tol: float = DEFAULT_TOL,
) -> BoundCheck:
    """Bound on ||g1||_{L1(0,T-eta)} for g1 with finitely many sign changes."""
    n_changes = detect_sign_changes(g1) if sign_changes is None else int(sign_changes)
    n_eta = steps_of(eta, grid.dt)
    lhs = l1_norm(np.asarray(g1)[: grid.N - n_eta + 1], grid.dt)
    B = B_eta(v_trace, grid, eta)
    factor = bound_b_factor(B, Cf, grid.T, n_changes)
    rhs = factor * (_rhs_a(trajectories, v_trace, grid, eta) + 2 * M_bound * eta)
    return BoundCheck("bound_b", lhs, rhs, tol, note=f"N={n_changes}")


def check_bound_c(
    g2: np.ndarray,
    V: np.ndarray,
    v_trace: np.ndarray,
    grid: TimeGrid,
    eta: float,
    tol: float = DEFAULT_TOL,
) -> BoundCheck:
    """||g2||_{L2(0,T-eta)} <= eta^{1/2} B_eta ||V||_{L1(0,T)}^{1/2}; ``V`` at t_1..t_N, V(0) = 0."""
    n_eta = steps_of(eta, grid.dt)
    lhs = l2_norm(np.asarray(g2)[: grid.N - n_eta + 1], grid.dt)
    V_full = np.concatenate(([0.0], np.asarray(V, dtype=float)))
    rhs = np.sqrt(eta) * B_eta(v_trace, grid, eta) * np.sqrt(l1_norm(V_full, grid.dt))
    return BoundCheck("bound_c", lhs, float(rhs), tol)


def check_reverse_convolution(
    phi1: np.ndarray,
    phi2: np.ndarray,
    dt: float,
    T1: float,
    T2: float,
    eta: float,
    tol: float = DEFAULT_TOL,
) -> BoundCheck:
    """||phi1||_{L1(T1,T2)} ||phi2||_{L1(0,eta)} <= ||int_{T1}^t phi1(s) phi2(t-s) ds||_{L1(T1,T2+eta)}.

    ``phi1`` is sampled at t = k dt on [0, T2+eta] and ``phi2`` on
    [0, T2-T1+eta]. When phi1 only keeps its sign on (T1, T2) the weaker form
    with ``2 ||phi1||_{L1(T2,T2+eta)} ||phi2||_{L1(0,eta)}`` added to the
    right-hand side is checked. Violated sign assumptions are reported as
    not applicable.
    """
    if not (0 <= T1 < T2 and eta > 0):
        raise ConfigError("need 0 <= T1 < T2 and eta > 0", "invalid_interval")
    i1, i2, ie = steps_of(T1, dt), steps_of(T2, dt), steps_of(eta, dt)
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    if len(phi1) < i2 + ie + 1 or len(phi2) < i2 - i1 + ie + 1:
        raise ConfigError("phi tables do not cover the required intervals", "invalid_interval")

    lhs = l1_norm(phi1[i1: i2 + 1], dt) * l1_norm(phi2[: ie + 1], dt)
    if np.any(phi2[: i2 - i1 + ie + 1] < -ZERO_TOL):
        return BoundCheck("reverse_convolution", lhs, np.nan, tol, applicable=False, note="phi2 is not nonnegative")

    # conv[j] = int_{T1}^{T1 + j dt} phi1(s) phi2(T1 + j dt - s) ds by the trapezoid rule.
    span = i2 - i1 + ie
    seg1 = phi1[i1: i1 + span + 1]
    conv = np.zeros(span + 1)
    for j in range(1, span + 1):
        prod = seg1[: j + 1] * phi2[j::-1][: j + 1]
        conv[j] = _trapezoid(prod, dt)
    rhs = l1_norm(conv, dt)

    if detect_sign_changes(seg1) == 0:
        return BoundCheck("reverse_convolution", lhs, rhs, tol)
    if detect_sign_changes(phi1[i1: i2 + 1]) == 0:
        tail = 2 * l1_norm(phi1[i2: i2 + ie + 1], dt) * l1_norm(phi2[: ie + 1], dt)
        return BoundCheck("reverse_convolution_weak", lhs, rhs + tail, tol,
                          note="phi1 keeps its sign on (T1, T2) only")
    return BoundCheck("reverse_convolution", lhs, rhs, tol, applicable=False, note="phi1 changes sign on (T1, T2)")


def check_bounds(
    g1: np.ndarray,
    g2: np.ndarray,
    trajectories: np.ndarray,
    V: np.ndarray,
    v_trace: np.ndarray,
    grid: TimeGrid,
    eta: float,
    M_bound: float,
    Cf: float,
    tol: float = DEFAULT_TOL,
) -> BoundsReport:
    """Bound (a) or (b) for g1, chosen by its sign changes, and bound (c) for g2."""
    n_changes = detect_sign_changes(g1)
    report = BoundsReport(
        eta=eta,
        C_alpha=C_alpha(grid.alpha),
        B_eta=B_eta(v_trace, grid, eta),
        M_bound=M_bound,
        Cf=Cf,
        sign_changes=n_changes,
    )
    if n_changes == 0:
        report.checks.append(check_bound_a(g1, trajectories, v_trace, grid, eta, tol))
    else:
        report.checks.append(check_bound_b(g1, trajectories, v_trace, grid, eta, M_bound, Cf, n_changes, tol))
    report.checks.append(check_bound_c(g2, V, v_trace, grid, eta, tol))
    for c in report.checks:
        if not c.passed:
            logger.warning(f"{c.name} violated: lhs={c.lhs:.6e} > rhs={c.rhs:.6e}")
    return report
