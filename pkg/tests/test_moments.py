import unittest
from pathlib import Path

import numpy as np

from fracsource.errors import ConfigError
from fracsource.fractime import TimeGrid, frac_integral_matrix
from fracsource.models import load_config
from fracsource.moments import MomentSeries, estimate_moments, exact_moments, inject_noise, scheme_moments
from fracsource.pipeline import build_model, build_problem
from fracsource.stochastic import Ensemble, SourceTimeSpec, measurement_stream, run_ensemble, time_function

from helpers import SLOW, SLOW_REASON, small_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def constant_spec(c1, c2):
    return SourceTimeSpec(time_function("constant", "g1", c1), time_function("constant", "g2", c2))


class TestEstimateMoments(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(T=1.0, N=10, alpha=0.7)
        rng = np.random.default_rng(2)
        traj = rng.standard_normal((40, 11))
        traj[:, 0] = 0.0
        self.ensemble = Ensemble(traj, seed=2, solver_tag="fem", grid=self.grid)

    def test_mean_of_integrated_trajectories(self):
        series = estimate_moments(self.ensemble, self.grid)
        W = frac_integral_matrix(self.grid, 1 - self.grid.alpha)
        np.testing.assert_allclose(series.E, (W @ self.ensemble.trajectories.mean(axis=0))[1:], rtol=1e-12,
                                   atol=1e-14)
        integrated = self.ensemble.trajectories @ W.T
        np.testing.assert_allclose(series.V, integrated.var(axis=0, ddof=1)[1:], rtol=1e-12)
        self.assertEqual(series.provenance, "monte-carlo")
        self.assertEqual(series.realizations, 40)
        np.testing.assert_allclose(series.times, self.grid.times[1:])

    def test_needs_two_realizations(self):
        single = Ensemble(self.ensemble.trajectories[:1], seed=2, solver_tag="fem", grid=self.grid)
        with self.assertRaises(ConfigError):
            estimate_moments(single, self.grid)

    def test_grid_mismatch(self):
        with self.assertRaises(ConfigError):
            estimate_moments(self.ensemble, TimeGrid(T=1.0, N=12, alpha=0.7))


class TestExactMoments(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(T=1.0, N=20, alpha=0.75)
        self.v = np.ones(21)
        self.v[0] = 0.0

    def test_unit_trace(self):
        series = exact_moments(self.v, constant_spec(2.0, 3.0), self.grid)
        t = self.grid.times[1:]
        dt = self.grid.dt
        np.testing.assert_allclose(series.E, 2.0 * (t - dt / 2), rtol=1e-13)
        np.testing.assert_allclose(series.V, 9.0 * (t - dt / 2), rtol=1e-13)
        self.assertEqual(series.provenance, "quadrature-exact")

    def test_rejects_bad_traces(self):
        spec = constant_spec(1.0, 1.0)
        with self.assertRaises(ConfigError):
            exact_moments(self.v[:-1], spec, self.grid)
        bad = self.v.copy()
        bad[0] = 0.1
        with self.assertRaises(ConfigError):
            exact_moments(bad, spec, self.grid)

    def test_series_validation(self):
        with self.assertRaises(ValueError):
            MomentSeries(E=np.ones(20), V=np.ones(20), grid=self.grid, provenance="guess")
        with self.assertRaises(ValueError):
            MomentSeries(E=np.ones(21), V=np.ones(20), grid=self.grid, provenance="monte-carlo")


class TestNoise(unittest.TestCase):

    def setUp(self):
        grid = TimeGrid(T=1.0, N=50, alpha=0.75)
        self.series = MomentSeries(E=np.linspace(1, 2, 50), V=np.linspace(2, 3, 50), grid=grid,
                                   provenance="quadrature-exact")

    def test_relative_perturbation_is_bounded(self):
        noisy = inject_noise(self.series, 0.05, measurement_stream(4))
        self.assertTrue(np.all(np.abs(noisy.E / self.series.E - 1) <= 0.05))
        self.assertTrue(np.all(np.abs(noisy.V / self.series.V - 1) <= 0.05))
        self.assertFalse(np.array_equal(noisy.E, self.series.E))
        self.assertEqual(noisy.noise_level, 0.05)

    def test_same_seed_same_noise(self):
        a = inject_noise(self.series, 0.01, measurement_stream(4))
        b = inject_noise(self.series, 0.01, measurement_stream(4))
        np.testing.assert_array_equal(a.E, b.E)
        np.testing.assert_array_equal(a.V, b.V)

    def test_zero_and_negative_levels(self):
        self.assertIs(inject_noise(self.series, 0.0, measurement_stream(4)), self.series)
        with self.assertRaises(ConfigError):
            inject_noise(self.series, -0.01, measurement_stream(4))


class TestMonteCarloAgainstScheme(unittest.TestCase):

    def test_estimates_within_sampling_error(self):
        problem = build_problem(small_config())
        model = build_model(problem, problem.fine_ops)
        R = 4000
        ensemble = run_ensemble(model, problem.spec, R, seed=21, workers=2, batch_size=500)
        mc = estimate_moments(ensemble, model.grid)
        reference = scheme_moments(model, problem.spec)
        self.assertEqual(reference.provenance, "scheme-exact")

        se = np.sqrt(reference.V / R)
        self.assertTrue(np.all(np.abs(mc.E - reference.E) <= 4 * se))
        band = 4 * np.sqrt(2.0 / (R - 1))
        self.assertTrue(np.all(np.abs(mc.V / reference.V - 1) <= band))

    def test_zero_drift_has_zero_mean(self):
        problem = build_problem(small_config())
        model = build_model(problem, problem.fine_ops)
        spec = SourceTimeSpec(time_function("zero", "g1"), time_function("constant", "g2", 1.0))
        R = 4000
        mc = estimate_moments(run_ensemble(model, spec, R, seed=23, workers=2, batch_size=500), model.grid)
        se = np.sqrt(mc.V / R)
        self.assertGreater(se[-1], 0.0)
        self.assertTrue(np.all(np.abs(mc.E) <= 4 * se))


@unittest.skipUnless(SLOW, SLOW_REASON)
class TestMomentIdentity(unittest.TestCase):
    """Monte Carlo E(t_n) against the quadrature of int g1(s) v(t_n - s) ds, 50x50 homogeneous model."""

    def test_mean_matches_quadrature(self):
        problem = build_problem(load_config(CONFIGS / "smooth_homogeneous.yaml"))
        model = build_model(problem, problem.fine_ops)
        R = 10_000
        mc = estimate_moments(run_ensemble(model, problem.spec, R, seed=31, workers=4, batch_size=1000), model.grid)
        quadrature = exact_moments(model.v_trace(), problem.spec, model.grid)
        # Monte Carlo converges to the scheme's moments; their gap to the quadrature is discretization error.
        bias = np.abs(scheme_moments(model, problem.spec).E - quadrature.E)
        band = np.maximum(4 * np.sqrt(mc.V / R), 1e-3 * np.abs(quadrature.E)) + bias
        self.assertTrue(np.all(np.abs(mc.E - quadrature.E) <= band),
                        f"worst excess {np.max(np.abs(mc.E - quadrature.E) - band):.3e}")


if __name__ == "__main__":
    unittest.main()
