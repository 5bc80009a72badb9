"""Tests for perturbation sampling, reference simulation and the sampling oracles."""
import math
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from ddereach.core.interval import Box
from ddereach.core.model import load_model, load_model_file
from ddereach.engine.reach import ReachAnalyzer
from ddereach.exceptions import ConfigError, DimensionError, SingularSensitivityError
from ddereach.models import bundled_model_path
from ddereach.validation.checks import (
    MAX_LISTED, CheckReport, check_boundary_exclusion, check_gradient, check_homeomorphism,
    check_over, check_under,
)
from ddereach.validation.signals import (
    sample_in_box, sample_on_boundary, sample_perturbation, sample_perturbations,
)
from ddereach.validation.simulate import Simulator, sensitivity_flow, simulate

SCALAR_TEMPLATE = """
[system]
n = 1
tau = {tau}
K = {K}

[dynamics]
g1 = {g}
f1 = {f}

[domains]
X = [-2,2]
D = [0,0]
I0 = [0.5,1.5]

[solver]
h = 0.1
"""

DECAY_MODEL = """
[system]
n = 2
m = 1
tau = 0.2
K = 3
L = 1

[dynamics]
g1 = -x1 + d1
g2 = -x2
f1 = -x1 + 0.1*x2_tau
f2 = -x2 + d1

[domains]
X = [-5,5]x[-5,5]
D = [-0.01,0.01]
I0 = [0.9,1.1]x[-0.1,0.1]

[solver]
h = 0.05
samples = 200
d_samples = 2
"""


def _scalar(g, f, tau=0.5, K=2):
    return load_model(SCALAR_TEMPLATE.format(g=g, f=f, tau=tau, K=K))


def _constant(spec):
    return sample_perturbation(spec.D, 0.0, spec.horizon)


class TestSignals(unittest.TestCase):
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_signals_are_lipschitz_and_inside_D(self, seed, L):
        D = Box.from_pairs([(-0.01, 0.01), (1.9, 2.1)])
        signal = sample_perturbation(D, L, 10.0, seed)
        self.assertLessEqual(signal.max_slope(), L * (1 + 1e-9))
        rng = np.random.RandomState(seed)
        times = rng.uniform(0.0, 10.0, size=(200, 2))
        for t1, t2 in times:
            a, b = signal(t1), signal(t2)
            self.assertTrue(D.inflate(1e-12).contains_point(a))
            self.assertLessEqual(np.linalg.norm(a - b), L * abs(t1 - t2) + 1e-12)

    def test_seeds_give_distinct_signals(self):
        D = Box.from_pairs([(-0.01, 0.01)])
        first = sample_perturbation(D, 1.0, 10.0, seed=1)
        second = sample_perturbation(D, 1.0, 10.0, seed=2)
        self.assertFalse(np.allclose(first.values, second.values))
        np.testing.assert_array_equal(first.values, sample_perturbation(D, 1.0, 10.0, seed=1).values)

    def test_zero_slope_is_constant(self):
        D = Box.from_pairs([(-1, 1)])
        signal = sample_perturbation(D, 0.0, 5.0, seed=3)
        np.testing.assert_array_equal(signal(0.0), signal(5.0))
        np.testing.assert_array_equal(signal(0.0), signal(7.5))
        with self.assertRaises(ValueError):
            sample_perturbation(D, -1.0, 5.0)

    def test_batch_shapes(self):
        D = Box.from_pairs([(-1, 1), (0, 1)])
        batch = sample_perturbations(D, 1.0, 2.0, 5, np.random.RandomState(0))
        self.assertEqual(len(batch), 5)
        self.assertEqual(batch.m, 2)
        self.assertEqual(batch.at(1.3).shape, (5, 2))
        self.assertEqual(len(batch.repeat(4)), 4)

    def test_box_sampling(self):
        box = Box.from_pairs([(0, 1), (2, 3), (-1, 0)])
        rng = np.random.RandomState(0)
        inside = sample_in_box(box, 100, rng)
        self.assertTrue(all(box.contains_point(p) for p in inside))
        boundary = sample_on_boundary(box, 100, rng)
        on_face = np.any((boundary == box.lo) | (boundary == box.hi), axis=1)
        self.assertTrue(np.all(on_face))


class TestSimulate(unittest.TestCase):
    def test_decay_matches_closed_form(self):
        spec = _scalar("-x1", "-x1")
        trajectory = simulate(spec, [1.0], _constant(spec))
        self.assertEqual(trajectory.h, 0.025)
        self.assertAlmostEqual(trajectory.endpoint[0, 0], math.exp(-1.0), delta=1e-8)
        self.assertAlmostEqual(trajectory.at(0.5)[0, 0], math.exp(-0.5), delta=1e-8)

    def test_method_of_steps_with_frozen_first_segment(self):
        # x = 1 on [0, 0.5], then x' = -x(t - 0.5)
        spec = _scalar("0", "-x1_tau", K=3)
        trajectory = simulate(spec, [1.0], _constant(spec))
        self.assertAlmostEqual(trajectory.at(1.0)[0, 0], 0.5, places=12)
        self.assertAlmostEqual(trajectory.at(1.5)[0, 0], 0.125, places=12)
        trace = sensitivity_flow(spec, [1.0], _constant(spec))
        self.assertEqual(trace.segments, 3)
        self.assertAlmostEqual(trace.flow_jacobian(1.5)[0, 0], 0.125, places=10)

    def test_collapsed_sensitivity_is_singular(self):
        # x(2) = x(1) - x0 = 0 for every x0
        spec = _scalar("0", "-x1_tau", tau=1.0, K=3)
        with self.assertRaises(SingularSensitivityError) as ctx:
            sensitivity_flow(spec, [1.0], _constant(spec))
        self.assertAlmostEqual(ctx.exception.time, 2.0)

    def test_batch_and_shape_errors(self):
        spec = _scalar("-x1", "-x1")
        simulator = Simulator(spec)
        trajectory, trace = simulator.run(np.array([[1.0], [0.5]]), _constant(spec))
        self.assertIsNone(trace)
        self.assertEqual(trajectory.states.shape, (41, 2, 1))
        np.testing.assert_allclose(trajectory.endpoint[:, 0], [math.exp(-1.0), 0.5 * math.exp(-1.0)], atol=1e-8)
        with self.assertRaises(DimensionError):
            simulator.run(np.zeros((2, 3)), _constant(spec))
        with self.assertRaises(ConfigError):
            Simulator(spec, h=0.3)
        with self.assertRaises(ValueError):
            trajectory.at(0.01)

    def test_exit_from_X_is_flagged(self):
        spec = _scalar("1", "1")
        trajectory = simulate(spec, [1.5], _constant(spec))
        self.assertTrue(trajectory.exited[0])


class TestOracles(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = load_model(DECAY_MODEL, name='decay')
        cls.result = ReachAnalyzer(cls.spec).analyze()

    def test_over_approximation_holds(self):
        report = check_over(self.spec, self.result)
        self.assertTrue(report.passed, report.violations)
        self.assertEqual(report.samples, 200)
        self.assertEqual(report.endpoints[self.result.checkpoints[-1].t].shape, (200, 2))

    def test_under_approximation_corners_are_reached(self):
        report = check_under(self.spec, self.result, times=[0.6])
        self.assertTrue(report.passed, report.violations)
        self.assertEqual(report.samples, 2 * 5)
        self.assertLessEqual(report.details['worst_residual'], 1e-6)

    def test_point_outside_reach_set_fails(self):
        report = check_under(self.spec, self.result, d_samples=1, test_points=[[3.0, 3.0]], times=[0.6])
        self.assertFalse(report.passed)
        self.assertIn(report.violations[0]['reason'], ('no-convergence', 'outside-I0'))

    def test_boundary_states_stay_out_of_under(self):
        report = check_boundary_exclusion(self.spec, self.result)
        self.assertTrue(report.passed, report.violations)
        self.assertEqual(len(report.details['checkpoints']), 4)

    def test_homeomorphism_bounds(self):
        report = check_homeomorphism(self.spec, sample_count=50)
        self.assertTrue(report.passed, report.violations)
        self.assertGreater(report.details['worst_margin'], 0.0)
        self.assertLessEqual(report.details['worst_norm'], 2.0)

    def test_tight_bounds_are_reported(self):
        strict = self.spec.with_changes(epsilon=1.1)
        report = check_homeomorphism(strict, sample_count=10)
        self.assertFalse(report.passed)
        self.assertTrue(all(v['kind'] == 'inverse-margin-above-epsilon' for v in report.violations))
        self.assertLessEqual(len(report.violations), MAX_LISTED)
        self.assertGreater(report.violation_count, MAX_LISTED)

    def test_sensitivities_match_finite_differences(self):
        spec = load_model_file(bundled_model_path('example1'))
        report = check_gradient(spec, sample_count=2, t=3.0)
        self.assertTrue(report.passed, report.details)


class TestCheckReport(unittest.TestCase):
    def test_listing_is_capped(self):
        report = CheckReport('demo', samples=100)
        report.add_violations(np.arange(50), lambda i: {'sample': int(i)})
        report.add_violation(sample=99)
        self.assertFalse(report.passed)
        self.assertEqual(report.violation_count, 51)
        self.assertEqual(len(report.violations), MAX_LISTED)
        self.assertEqual(report.summary(), "demo: FAIL (100 samples, 51 violations)")
        self.assertEqual(report.to_dict()['violation_count'], 51)


if __name__ == "__main__":
    unittest.main()
