"""End-to-end runs of the bundled example models.

The time-lag bounds, the sampled certificate checks and the first example
run by default. The second and third reach runs take minutes and only run
with DDEREACH_SLOW=1 in the environment.
"""
import os
import unittest

from ddereach.core.interval import Box
from ddereach.core.model import check_model, jacobian_bounds, load_model_file, tau_bound
from ddereach.engine.reach import STATUS_OK, ReachAnalyzer
from ddereach.models import bundled_model_path, bundled_models
from ddereach.validation.checks import (
    check_boundary_exclusion,
    check_gradient,
    check_homeomorphism,
    check_over,
    check_under,
)

from cli.session import ROBUSTLY_SAFE, ROBUSTLY_UNSAFE, safety_verdict

SLOW = bool(os.environ.get('DDEREACH_SLOW'))

EXAMPLE3_PUBLISHED_UNDER = Box.from_pairs([
    (1.2242, 1.3268), (1.0703, 1.1478), (1.3792, 1.4600), (2.1585, 2.2621),
    (0.8644, 0.9259), (0.0927, 0.1161), (0.3704, 0.4478),
])
EXAMPLE3_PUBLISHED_OVER = Box.from_pairs([
    (1.1556, 1.3955), (1.0016, 1.2165), (1.3106, 1.5286), (2.0898, 2.3308),
    (0.7957, 0.9946), (0.02403, 0.1847), (0.3017, 0.5164),
])

# comparison times for the sensitivity check; None means K*tau
GRADIENT_TIMES = {'example1': None, 'example2': 1.0, 'example3': None}


def _load(name):
    return load_model_file(bundled_model_path(name))


class TestTimeLagBounds(unittest.TestCase):
    def test_first_example(self):
        bounds = tau_bound(0.11, 0.11, 0.01, R=2, epsilon=4)
        self.assertAlmostEqual(bounds.tau_max, 2.50, delta=1e-9)
        self.assertTrue(check_model(_load('example1')).certified)

    def test_second_example(self):
        report = check_model(_load('example2'))
        self.assertAlmostEqual(report.bounds.tau_max, 1 / 49.6, delta=1e-9)
        self.assertTrue(report.certified)
        self.assertLessEqual(report.computed[0], 12.0)

    def test_third_example(self):
        spec = _load('example3')
        M_prime, M, N = jacobian_bounds(spec)
        bounds = tau_bound(M_prime, M, N, R=2, epsilon=2)
        self.assertAlmostEqual(bounds.tau_max, 1 / 33.2, delta=1e-9)
        self.assertLessEqual(0.03, bounds.tau_max)
        self.assertTrue(check_model(spec).certified)


class TestSampledCertificates(unittest.TestCase):
    def test_homeomorphism_holds_along_trajectories(self):
        for name in bundled_models():
            with self.subTest(model=name):
                report = check_homeomorphism(_load(name), sample_count=20, seed=1)
                self.assertTrue(report.passed, report.summary())
                self.assertGreater(report.details['worst_margin'], 0.0)

    def test_sensitivities_match_finite_differences(self):
        for name in bundled_models():
            with self.subTest(model=name):
                report = check_gradient(_load(name), sample_count=2, seed=1, t=GRADIENT_TIMES[name])
                self.assertTrue(report.passed, report.summary())


class TestFirstExampleSafety(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = _load('example1')
        cls.result = ReachAnalyzer(cls.spec).analyze()
        cls.final = cls.result.checkpoint_at(10.0)

    def test_under_is_nonempty_at_the_horizon(self):
        self.assertFalse(self.final.under.is_empty)
        self.assertTrue(self.final.under.issubset(self.final.over))
        self.assertTrue(self.result.domain_ok)

    def test_verdicts(self):
        safe = safety_verdict(self.final, Box.from_pairs([(0.15, 0.2), (0.3, 0.35)]))
        self.assertEqual(safe.verdict, ROBUSTLY_SAFE)
        unsafe = safety_verdict(self.final, Box.from_pairs([(0.0, 0.05), (0.25, 0.3)]))
        self.assertEqual(unsafe.verdict, ROBUSTLY_UNSAFE)
        everything = safety_verdict(self.final, self.spec.X)
        self.assertEqual(everything.verdict, ROBUSTLY_UNSAFE)

    def test_sampled_trajectories(self):
        self.assertTrue(check_over(self.spec, self.result, sample_count=200).passed)
        self.assertTrue(check_boundary_exclusion(self.spec, self.result, sample_count=200).passed)

    def test_under_points_are_reached_under_every_perturbation(self):
        report = check_under(self.spec, self.result, d_samples=2, times=[10.0])
        self.assertTrue(report.passed, report.summary())
        self.assertEqual(report.samples, 2 * 5)


@unittest.skipUnless(SLOW, "set DDEREACH_SLOW=1 to run the reach examples")
class TestSecondExampleReach(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = _load('example2')
        cls.result = ReachAnalyzer(cls.spec).analyze()

    def test_stays_in_the_domain(self):
        self.assertTrue(self.result.certified)
        self.assertTrue(self.result.domain_ok)

    def test_under_is_nonempty_or_flagged(self):
        for t in (0.8, 1.0, 1.2, 1.4):
            with self.subTest(t=t):
                checkpoint = self.result.checkpoint_at(t)
                self.assertTrue(checkpoint.under.issubset(checkpoint.over))
                if checkpoint.under.is_empty:
                    self.assertNotEqual(checkpoint.status, STATUS_OK)

    def test_sampled_trajectories(self):
        self.assertTrue(check_over(self.spec, self.result, sample_count=200).passed)
        self.assertTrue(check_boundary_exclusion(self.spec, self.result, sample_count=200).passed)


@unittest.skipUnless(SLOW, "set DDEREACH_SLOW=1 to run the reach examples")
class TestThirdExampleReach(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = _load('example3')
        cls.result = ReachAnalyzer(cls.spec).analyze()
        cls.final = cls.result.checkpoint_at(0.1)

    def test_cross_containment_with_published_boxes(self):
        self.assertEqual(len(self.final.over), 7)
        self.assertTrue(EXAMPLE3_PUBLISHED_UNDER.issubset(self.final.over.inflate(1e-9)))
        if not self.final.under.is_empty:
            self.assertTrue(self.final.under.issubset(EXAMPLE3_PUBLISHED_OVER.inflate(1e-9)))

    def test_sampled_trajectories(self):
        self.assertTrue(check_over(self.spec, self.result, sample_count=200).passed)
        self.assertTrue(check_boundary_exclusion(self.spec, self.result, sample_count=200).passed)

    def test_under_points_are_reached_under_every_perturbation(self):
        report = check_under(self.spec, self.result, d_samples=2, times=[0.1])
        self.assertTrue(report.passed, report.summary())


if __name__ == "__main__":
    unittest.main()
