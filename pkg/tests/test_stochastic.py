import unittest
from pathlib import Path

import numpy as np

from fracsource.errors import ConfigError, NumericalError
from fracsource.fractime import TimeGrid, impulse_response, response_matrix
from fracsource.models import load_config
from fracsource.pipeline import build_model, build_problem, mean_trajectory
from fracsource.stochastic import (
    Ensemble,
    SourceTimeSpec,
    TimeFunction,
    brownian_increments,
    measurement_stream,
    realization_stream,
    run_ensemble,
    time_function,
)

from helpers import SLOW, SLOW_REASON, small_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestTimeFunctions(unittest.TestCase):

    def test_catalog_values(self):
        g1 = time_function("smooth", "g1")
        self.assertAlmostEqual(float(g1(0.25)), 1.25 + np.sin(0.75 * np.pi), places=14)
        g2 = time_function("nonsmooth", "g2")
        np.testing.assert_array_equal(g2(np.array([0.1, 0.5, 0.9])), [1.0, -2.0, 1.5])
        self.assertEqual(time_function("zero", "g2")(np.linspace(0, 1, 4)).tolist(), [0.0] * 4)
        self.assertEqual(float(time_function("constant", "g1", value=2.5)(0.7)), 2.5)

    def test_catalog_errors(self):
        with self.assertRaises(ConfigError):
            time_function("wavy", "g1")
        with self.assertRaises(ConfigError):
            time_function("constant", "g1")
        with self.assertRaises(ValueError):
            time_function("smooth", "g3")

    def test_table_interpolation(self):
        fn = TimeFunction.from_table([0.0, 0.5, 1.0], [1.0, 3.0, 2.0])
        np.testing.assert_allclose(fn(np.array([0.25, 0.75, 2.0])), [2.0, 2.5, 2.0])
        with self.assertRaises(ConfigError):
            TimeFunction.from_table([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
        with self.assertRaises(ConfigError):
            TimeFunction.from_table([0.0], [1.0])

    def test_bound_of_g1(self):
        spec = SourceTimeSpec.from_catalog("nonsmooth", "nonsmooth")
        self.assertGreaterEqual(spec.M_bound, 1.5)
        SourceTimeSpec.from_catalog("nonsmooth", "nonsmooth", M_bound=3.0)
        with self.assertRaises(ConfigError):
            SourceTimeSpec.from_catalog("smooth", "smooth", M_bound=0.5)


class TestStreams(unittest.TestCase):

    def test_realization_stream_is_reproducible(self):
        a = realization_stream(11, 4).standard_normal(8)
        b = realization_stream(11, 4).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_distinct(self):
        draws = [realization_stream(11, i).standard_normal(8) for i in range(3)]
        draws.append(realization_stream(12, 0).standard_normal(8))
        draws.append(measurement_stream(11).standard_normal(8))
        for i in range(len(draws)):
            for j in range(i + 1, len(draws)):
                self.assertFalse(np.array_equal(draws[i], draws[j]))

    def test_increments_are_standard_normal(self):
        grid = TimeGrid(T=1.0, N=1_000_000, alpha=0.75)
        xi = brownian_increments(grid, realization_stream(0, 0))
        self.assertEqual(xi.shape, (1_000_000,))
        self.assertLess(abs(xi.mean()), 5e-3)
        self.assertLess(abs(xi.var() - 1.0), 1e-2)


class TestEnsemble(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.problem = build_problem(small_config())
        cls.model = build_model(cls.problem, cls.problem.fine_ops)
        cls.spec = cls.problem.spec

    def test_strategies_agree(self):
        response = run_ensemble(self.model, self.spec, 20, seed=5, strategy="response", workers=2, batch_size=6)
        direct = run_ensemble(self.model, self.spec, 20, seed=5, strategy="direct", workers=2, batch_size=6)
        scale = np.abs(direct.trajectories).max()
        np.testing.assert_allclose(response.trajectories, direct.trajectories, rtol=1e-10, atol=1e-10 * scale)
        self.assertEqual(direct.trajectories.shape, (20, 21))
        self.assertTrue(np.all(direct.trajectories[:, 0] == 0.0))

    def test_independent_of_workers_and_batches(self):
        a = run_ensemble(self.model, self.spec, 30, seed=8, workers=1, batch_size=30)
        b = run_ensemble(self.model, self.spec, 30, seed=8, workers=4, batch_size=7)
        np.testing.assert_allclose(a.trajectories, b.trajectories, rtol=1e-12, atol=0.0)
        c = run_ensemble(self.model, self.spec, 30, seed=9, workers=1, batch_size=30)
        self.assertFalse(np.allclose(a.trajectories, c.trajectories))

    def test_prefix_is_stable(self):
        small = run_ensemble(self.model, self.spec, 10, seed=8, workers=1, batch_size=4)
        large = run_ensemble(self.model, self.spec, 25, seed=8, workers=3, batch_size=4)
        np.testing.assert_allclose(large.trajectories[:10], small.trajectories, rtol=1e-12, atol=0.0)

    def test_without_noise_every_realization_is_the_mean(self):
        spec = SourceTimeSpec(time_function("smooth", "g1"), time_function("zero", "g2"))
        ensemble = run_ensemble(self.model, spec, 5, seed=1, workers=1)
        mean = mean_trajectory(self.model, spec)
        for row in ensemble.trajectories:
            np.testing.assert_allclose(row, mean, rtol=1e-10, atol=1e-14)

    def test_final_fields(self):
        with self.assertRaises(ConfigError):
            run_ensemble(self.model, self.spec, 4, seed=1, keep_final=True)
        ensemble = run_ensemble(self.model, self.spec, 4, seed=1, strategy="direct", keep_final=True, workers=1)
        self.assertEqual(ensemble.final_fields.shape, (4, self.model.dof))
        np.testing.assert_allclose(ensemble.final_fields @ self.model.observation, ensemble.trajectories[:, -1],
                                   rtol=1e-12, atol=1e-15)

    def test_invalid_arguments(self):
        with self.assertRaises(ConfigError):
            run_ensemble(self.model, self.spec, 0, seed=1)
        with self.assertRaises(ConfigError):
            run_ensemble(self.model, self.spec, 3, seed=1, strategy="parallel")

    def test_ensemble_validation(self):
        grid = self.model.grid
        with self.assertRaises(ValueError):
            Ensemble(np.zeros((3, grid.N)), seed=0, solver_tag="fem", grid=grid)
        bad = np.zeros((3, grid.N + 1))
        bad[1, 0] = 1.0
        with self.assertRaises(NumericalError):
            Ensemble(bad, seed=0, solver_tag="fem", grid=grid)
        bad[1, 0] = 0.0
        bad[2, 4] = np.nan
        with self.assertRaises(NumericalError):
            Ensemble(bad, seed=0, solver_tag="fem", grid=grid)

    def test_sample_variance_matches_ito_isometry(self):
        """Var u(x0, t_n) = sum_k h_{n-k+1}^2 g2(t_k)^2 / dt for the discrete scheme."""
        R = 4000
        ensemble = run_ensemble(self.model, self.spec, R, seed=17, workers=2, batch_size=500)
        H = response_matrix(impulse_response(self.model.stepper, self.model.load, self.model.observation))
        _, g2 = self.spec.samples(self.model.grid)
        expected = (H ** 2) @ (g2[1:] ** 2 / self.model.grid.dt)
        sample = ensemble.trajectories[:, 1:].var(axis=0, ddof=1)
        band = 4 * np.sqrt(2.0 / (R - 1))
        for n in (4, 9, 19):
            self.assertLess(abs(sample[n] / expected[n] - 1.0), band)

@unittest.skipUnless(SLOW, SLOW_REASON)
class TestDiscreteItoIsometry(unittest.TestCase):
    """sum_j g2(t_j) v(t_n - t_j) dW_j has variance sum_j g2(t_j)^2 v(t_n - t_j)^2 dt."""

    def test_sample_variance_of_quadrature(self):
        problem = build_problem(load_config(CONFIGS / "smooth_homogeneous.yaml"))
        grid = problem.grid
        v = build_model(problem, problem.fine_ops).v_trace()
        _, g2 = problem.spec.samples(grid)
        R = 30_000
        dW = np.sqrt(grid.dt) * np.stack([brownian_increments(grid, realization_stream(29, r)) for r in range(R)])
        for n in (1, 10, 25, 50, 75, 100):
            kernel = g2[:n] * v[n:0:-1]
            sample = (dW[:, :n] @ kernel).var(ddof=1)
            expected = grid.dt * np.sum(kernel ** 2)
            self.assertLess(abs(sample / expected - 1.0), 4 * np.sqrt(2.0 / (R - 1)), f"n={n}")



if __name__ == "__main__":
    unittest.main()
