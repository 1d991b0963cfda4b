import unittest

import numpy as np

from fracsource.errors import ConfigError, VerificationError
from fracsource.fractime import TimeGrid
from fracsource.moments import exact_moments
from fracsource.pipeline import build_model, build_problem, mean_trajectory
from fracsource.stochastic import SourceTimeSpec, time_function
from fracsource.verify import (
    B_eta,
    BoundCheck,
    BoundsReport,
    bound_b_factor,
    check_bound_a,
    check_bound_b,
    check_bound_c,
    check_bounds,
    check_reverse_convolution,
    detect_sign_changes,
    l1_norm,
    l2_norm,
    steps_of,
)

from helpers import small_config


class TestHelpers(unittest.TestCase):

    def test_norms(self):
        t = np.linspace(0, 1, 101)
        self.assertAlmostEqual(l1_norm(-t, 0.01), 0.5, places=12)
        self.assertAlmostEqual(l2_norm(np.ones(101), 0.01), 1.0, places=12)

    def test_steps_of(self):
        self.assertEqual(steps_of(0.1, 0.02), 5)
        with self.assertRaises(ConfigError):
            steps_of(0.11, 0.02)

    def test_sign_changes(self):
        t = np.linspace(0, 1, 101)
        self.assertEqual(detect_sign_changes(np.ones(5)), 0)
        self.assertEqual(detect_sign_changes(np.sin(3 * np.pi * t)), 2)
        g2 = time_function("nonsmooth", "g2")(t)
        self.assertEqual(detect_sign_changes(g2), 2)
        self.assertEqual(detect_sign_changes(np.array([1.0, 0.0, 1.0])), 0)


class TestReverseConvolution(unittest.TestCase):

    def test_constant_functions(self):
        check = check_reverse_convolution(np.ones(151), np.ones(151), 0.01, T1=0.0, T2=1.0, eta=0.5)
        self.assertAlmostEqual(check.lhs, 0.5, places=12)
        self.assertAlmostEqual(check.rhs, 1.125, places=12)
        self.assertTrue(check.passed)
        self.assertGreater(check.margin, 0.0)

    def test_zero_phi1(self):
        check = check_reverse_convolution(np.zeros(151), np.ones(151), 0.01, T1=0.0, T2=1.0, eta=0.5)
        self.assertEqual(check.lhs, 0.0)
        self.assertTrue(check.passed)

    def test_negative_phi2_is_not_applicable(self):
        check = check_reverse_convolution(np.ones(151), -np.ones(151), 0.01, T1=0.0, T2=1.0, eta=0.5)
        self.assertFalse(check.applicable)
        self.assertTrue(check.passed)

    def test_sign_only_on_inner_interval(self):
        t = np.arange(151) * 0.01
        phi1 = np.where(t <= 1.0, 1.0, -1.0)
        check = check_reverse_convolution(phi1, np.ones(151), 0.01, T1=0.0, T2=1.0, eta=0.5)
        self.assertEqual(check.name, "reverse_convolution_weak")
        self.assertTrue(check.passed)

    def test_interval_checks(self):
        with self.assertRaises(ConfigError):
            check_reverse_convolution(np.ones(151), np.ones(151), 0.01, T1=1.0, T2=0.5, eta=0.5)
        with self.assertRaises(ConfigError):
            check_reverse_convolution(np.ones(50), np.ones(151), 0.01, T1=0.0, T2=1.0, eta=0.5)


class TestBounds(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(T=1.0, N=50, alpha=0.75)
        t = self.grid.times
        self.v = t * np.exp(-t)
        self.traj = np.sin(np.pi * t)[None, :]

    def test_factor_without_sign_changes(self):
        self.assertAlmostEqual(bound_b_factor(3.0, 2.0, 1.0, 0), 1.0, places=12)
        self.assertEqual(bound_b_factor(0.0, 2.0, 1.0, 2), 3.0)
        self.assertTrue(np.isfinite(bound_b_factor(1e6, 1.0, 1.0, 30)))

    def test_b_is_monotone(self):
        g1 = np.sin(3 * np.pi * self.grid.times)
        rhs = [check_bound_b(g1, self.traj, self.v, self.grid, 0.1, 2.0, 1.0, sign_changes=n).rhs for n in range(4)]
        self.assertTrue(np.all(np.diff(rhs) > 0))
        small = check_bound_b(g1, self.traj, self.v, self.grid, 0.1, 1.0, 1.0).rhs
        large = check_bound_b(g1, self.traj, self.v, self.grid, 0.1, 5.0, 1.0).rhs
        self.assertGreater(large, small)

    def test_c_is_homogeneous(self):
        g2 = 1.0 + self.grid.times
        V = np.linspace(0.1, 1.0, 50)
        base = check_bound_c(g2, V, self.v, self.grid, 0.1)
        scaled = check_bound_c(3.0 * g2, 9.0 * V, self.v, self.grid, 0.1)
        self.assertAlmostEqual(scaled.lhs, 3.0 * base.lhs, places=12)
        self.assertAlmostEqual(scaled.rhs, 3.0 * base.rhs, places=12)
        self.assertAlmostEqual(scaled.margin, base.margin, places=12)

    def test_B_eta(self):
        self.assertGreater(B_eta(self.v, self.grid, 0.1), B_eta(self.v, self.grid, 0.2))
        with self.assertRaises(ConfigError):
            B_eta(self.v, self.grid, 1.0)
        with self.assertRaises(ConfigError):
            B_eta(np.zeros(51), self.grid, 0.1)

    def test_a_needs_single_signed_g1(self):
        with self.assertRaises(ConfigError):
            check_bound_a(np.sin(3 * np.pi * self.grid.times), self.traj, self.v, self.grid, 0.1)

    def test_report(self):
        report = BoundsReport(eta=0.1, C_alpha=1.0, B_eta=2.0, M_bound=1.0, Cf=1.0, sign_changes=0)
        report.checks.append(BoundCheck("bound_a", 1.0, 2.0))
        report.checks.append(BoundCheck("bound_c", 2.01, 2.0))
        self.assertTrue(report.all_passed)
        self.assertIn("[PASS] bound_a", report.to_text())
        self.assertEqual(report.to_rows()[0], ["name", "lhs", "rhs", "margin", "pass"])
        report.raise_on_failure()

        report.checks.append(BoundCheck("bound_b", 3.0, 2.0))
        self.assertFalse(report.all_passed)
        self.assertIn("FAILED", report.to_text())
        with self.assertRaises(VerificationError) as ctx:
            report.raise_on_failure()
        self.assertIn("bound_b", str(ctx.exception))


class TestBoundsOnModel(unittest.TestCase):
    """Bounds (a), (b) and (c) on exact-quadrature data with eta = 5 dt."""

    @classmethod
    def setUpClass(cls):
        cls.problem = build_problem(small_config(time={"N": 50}))
        cls.model = build_model(cls.problem, cls.problem.fine_ops)
        cls.grid = cls.problem.grid
        cls.v = cls.model.v_trace()
        cls.eta = 5 * cls.grid.dt

    def _report(self, spec):
        g1, g2 = spec.samples(self.grid)
        trajectories = mean_trajectory(self.model, spec)[None, :]
        V = exact_moments(self.v, spec, self.grid).V
        return check_bounds(g1, g2, trajectories, V, self.v, self.grid, self.eta, spec.M_bound, self.problem.Cf)

    def test_constant_g1(self):
        spec = SourceTimeSpec(time_function("constant", "g1", 1.0), time_function("smooth", "g2"))
        report = self._report(spec)
        self.assertEqual([c.name for c in report.checks], ["bound_a", "bound_c"])
        self.assertTrue(report.all_passed, report.to_text())

    def test_smooth_signals(self):
        report = self._report(SourceTimeSpec.from_catalog("smooth", "smooth"))
        self.assertGreater(report.sign_changes, 0)
        self.assertEqual([c.name for c in report.checks], ["bound_b", "bound_c"])
        self.assertTrue(report.all_passed, report.to_text())


if __name__ == "__main__":
    unittest.main()
