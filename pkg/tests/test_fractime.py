import unittest

import numpy as np
from scipy.special import gamma

from fracsource.errors import ConfigError
from fracsource.fem import assemble, bump_source, observation_vector
from fracsource.fractime import (
    L1Stepper,
    TimeGrid,
    caputo_apply,
    deterministic_trace,
    frac_integral_matrix,
    frac_integral_series,
    impulse_response,
    l1_coefficients,
    response_matrix,
    step_deterministic_v,
    step_stochastic_u,
    stochastic_amplitudes,
    volterra_matrix,
)
from fracsource.media import homogeneous
from fracsource.mesh import build_fine_mesh


class TestTimeGrid(unittest.TestCase):

    def test_times(self):
        grid = TimeGrid(T=1.0, N=4, alpha=0.75)
        np.testing.assert_allclose(grid.times, [0, 0.25, 0.5, 0.75, 1.0])
        self.assertEqual(grid.refined().N, 8)

    def test_rejects_alpha_outside_range(self):
        for alpha in (0.5, 0.3, 1.0):
            with self.assertRaises(ConfigError):
                TimeGrid(T=1.0, N=10, alpha=alpha)

    def test_rejects_short_grid(self):
        with self.assertRaises(ConfigError):
            TimeGrid(T=1.0, N=1, alpha=0.75)


class TestL1Coefficients(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(T=1.0, N=10, alpha=0.6)
        self.coeffs = l1_coefficients(self.grid)

    def test_first_coefficient(self):
        expected = self.grid.dt ** -0.6 / gamma(1.4)
        self.assertAlmostEqual(self.coeffs.b(1, 0), expected)
        self.assertAlmostEqual(self.coeffs.b(5, 4), expected)

    def test_coefficients_decrease_with_lag(self):
        a = self.coeffs.a[1:]
        self.assertTrue(np.all(np.diff(a) < 0))
        self.assertTrue(np.all(self.coeffs.memory_weights[1:] > 0))

    def test_table_is_lag_toeplitz(self):
        table = self.coeffs.table
        self.assertEqual(table.shape, (10, 10))
        self.assertAlmostEqual(table[4, 2], self.coeffs.b(5, 2))
        self.assertEqual(table[2, 5], 0.0)

    def test_b_index_check(self):
        with self.assertRaises(IndexError):
            self.coeffs.b(3, 3)

    def test_constant_history_has_zero_derivative(self):
        self.assertEqual(caputo_apply(self.coeffs, np.full(7, 3.0)), 0.0)

    def test_linear_history_is_exact(self):
        t = self.grid.times
        for n in (1, 4, 10):
            value = caputo_apply(self.coeffs, t[: n + 1])
            self.assertAlmostEqual(value, t[n] ** 0.4 / gamma(1.4), places=12)

    def test_history_length_check(self):
        with self.assertRaises(ValueError):
            caputo_apply(self.coeffs, np.zeros(12))


class TestCaputoOrder(unittest.TestCase):

    @staticmethod
    def _error_at_end(N, alpha=0.75):
        grid = TimeGrid(T=1.0, N=N, alpha=alpha)
        exact = 2.0 / gamma(3.0 - alpha)
        return abs(caputo_apply(l1_coefficients(grid), grid.times ** 2) - exact)

    def test_quadratic_converges_with_order_two_minus_alpha(self):
        errors = [self._error_at_end(N) for N in (40, 80, 160)]
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        self.assertTrue(np.all(np.diff(errors) < 0))
        self.assertLess(abs(orders[-1] - 1.25), 0.15, f"observed orders {orders}")


class TestFractionalIntegral(unittest.TestCase):

    def setUp(self):
        self.grid = TimeGrid(T=2.0, N=16, alpha=0.75)
        self.beta = 1.0 - self.grid.alpha

    def test_constant_is_exact(self):
        t = self.grid.times
        values = frac_integral_series(self.grid, self.beta, np.ones(len(t)))
        np.testing.assert_allclose(values, t ** self.beta / gamma(self.beta + 1), rtol=1e-12, atol=1e-14)

    def test_linear_is_exact(self):
        t = self.grid.times
        values = frac_integral_series(self.grid, self.beta, t)
        np.testing.assert_allclose(values, t ** (self.beta + 1) / gamma(self.beta + 2), rtol=1e-12, atol=1e-14)

    def test_first_row_vanishes(self):
        self.assertTrue(np.all(frac_integral_matrix(self.grid, 0.3)[0] == 0))

    def test_order_range(self):
        with self.assertRaises(ValueError):
            frac_integral_matrix(self.grid, 1.2)


class TestVolterraMatrix(unittest.TestCase):

    def test_two_step_example(self):
        np.testing.assert_allclose(volterra_matrix(np.array([0.0, 1.0, 2.0]), 1.0), [[0.5, 0.0], [1.0, 1.0]])

    def test_lower_triangular_toeplitz(self):
        kernel = np.concatenate(([0.0], np.linspace(1, 2, 6)))
        A = volterra_matrix(kernel, 0.1)
        self.assertTrue(np.all(np.triu(A, 1) == 0))
        for lag in range(5):
            diag = np.diagonal(A, -lag)
            np.testing.assert_allclose(diag[1:], diag[1])
        np.testing.assert_allclose(A[:, 0], 0.05 * kernel[1:])


class _ScalarOps:
    mass = np.ones((1, 1))
    stiffness = np.zeros((1, 1))
    size = 1

    def project_source(self, f):
        return np.ones(1)


class TestL1Stepper(unittest.TestCase):

    def setUp(self):
        self.mesh = build_fine_mesh(10)
        self.ops = assemble(self.mesh, homogeneous(10))
        self.grid = TimeGrid(T=1.0, N=20, alpha=0.75)
        self.f = bump_source(self.mesh)
        self.w = observation_vector(self.mesh, (0.4, 0.2))
        self.stepper = L1Stepper(self.ops, self.grid)

    def test_linear_solution_of_scalar_equation(self):
        # d^alpha t = t^{1-alpha} / Gamma(2-alpha) is reproduced exactly by the L1 scheme.
        t = self.grid.times[1:]
        q = t ** 0.25 / gamma(1.25)
        trace = L1Stepper(_ScalarOps(), self.grid).march(np.ones(1), q, observation=np.ones(1)).trace
        np.testing.assert_allclose(trace, self.grid.times, rtol=1e-11, atol=1e-13)

    def test_deterministic_fields(self):
        fields = step_deterministic_v(self.ops, self.grid, self.f, self.stepper)
        self.assertEqual(fields.shape, (21, self.ops.size))
        np.testing.assert_array_equal(fields[0], self.f.values[self.ops.interior_nodes])
        energy = lambda u: float(u @ (self.ops.mass @ u))
        self.assertLess(energy(fields[-1]), energy(fields[0]))

    def test_trace_starts_at_zero_and_turns_positive(self):
        v = deterministic_trace(self.ops, self.grid, self.f, self.w, self.stepper)
        self.assertEqual(len(v), 21)
        self.assertEqual(v[0], 0.0)
        self.assertGreater(v[1], 0.0)

    def test_nonnegative_source_gives_nonnegative_trace(self):
        v = deterministic_trace(self.ops, self.grid, self.f, self.w, self.stepper)
        self.assertGreaterEqual(v.min(), -1e-8 * self.f.bound)

    def test_trajectory_is_linear_in_the_forcing(self):
        rng = np.random.default_rng(12)
        g1, g1b, g2 = rng.random(20), rng.random(20), 0.5 + rng.random(20)
        xi = rng.standard_normal(20)
        zero = np.zeros(20)

        def trace(a, b, noise):
            return step_stochastic_u(self.ops, self.grid, self.f, a, b, noise, self.w, stepper=self.stepper).trace

        combined = trace(g1 + g1b, zero, zero)
        scale = np.abs(combined).max()
        np.testing.assert_allclose(combined, trace(g1, zero, zero) + trace(g1b, zero, zero),
                                   rtol=1e-10, atol=1e-10 * scale)
        np.testing.assert_allclose(trace(g1, g2, xi), trace(g1, zero, zero) + trace(zero, g2, xi),
                                   rtol=1e-10, atol=1e-10 * scale)
        np.testing.assert_allclose(trace(3 * g1, 3 * g2, xi), 3 * trace(g1, g2, xi), rtol=1e-10, atol=1e-10 * scale)

    def test_zero_noise_realization_is_deterministic_response(self):
        g1 = np.ones(20)
        g2 = np.ones(20)
        a = step_stochastic_u(self.ops, self.grid, self.f, g1, g2, np.zeros(20), self.w, stepper=self.stepper)
        b = step_stochastic_u(self.ops, self.grid, self.f, g1, np.zeros(20), np.random.default_rng(0).standard_normal(20),
                              self.w, stepper=self.stepper)
        np.testing.assert_allclose(a.trace, b.trace, rtol=1e-12, atol=1e-15)
        self.assertEqual(a.trace[0], 0.0)
        self.assertIsNone(a.fields)

    def test_batch_matches_single_runs(self):
        noise = np.random.default_rng(4).standard_normal((20, 3))
        g1 = np.linspace(1, 2, 20)
        g2 = np.linspace(0.5, 1, 20)
        batch = step_stochastic_u(self.ops, self.grid, self.f, g1, g2, noise, self.w, stepper=self.stepper)
        for j in range(3):
            single = step_stochastic_u(self.ops, self.grid, self.f, g1, g2, noise[:, j], self.w, stepper=self.stepper)
            np.testing.assert_allclose(batch.trace[:, j], single.trace, rtol=1e-12, atol=1e-15)

    def test_keeps_fields_without_observation(self):
        result = step_stochastic_u(self.ops, self.grid, self.f, np.ones(20), np.zeros(20), np.zeros(20))
        self.assertEqual(result.fields.shape, (21, self.ops.size))

    def test_impulse_response_reproduces_march(self):
        load = self.ops.project_source(self.f)
        H = response_matrix(impulse_response(self.stepper, load, self.w))
        amplitudes = np.random.default_rng(9).standard_normal(20)
        trace = self.stepper.march(load, amplitudes, observation=self.w, keep_fields=False).trace
        np.testing.assert_allclose(H @ amplitudes, trace[1:], rtol=1e-10, atol=1e-12 * np.abs(trace).max())

    def test_amplitude_shapes(self):
        with self.assertRaises(ValueError):
            stochastic_amplitudes(self.grid, np.ones(19), np.ones(20), np.zeros(20))
        amps = stochastic_amplitudes(self.grid, np.ones(20), np.ones(20), np.ones((20, 2)))
        np.testing.assert_allclose(amps, 1 + 1 / np.sqrt(self.grid.dt))


if __name__ == "__main__":
    unittest.main()
