"""Tests for boundary propagation, over/under-approximation and the reach pipeline."""
import json
import unittest

import numpy as np

from ddereach.core.interval import Box
from ddereach.core.model import load_model
from ddereach.engine.reach import (
    STATUS_DEGENERATE, STATUS_OK, STATUS_UNCERTIFIED, STATUS_WITNESS_BLOCKED,
    ReachAnalyzer, ReachResult, check_domain_containment, checkpoint_times,
    partition_boundary, propagate, separated_from_reach, shrink, tip_at_time,
)
from ddereach.exceptions import ConfigError, ModelError
from ddereach.validation.signals import sample_in_box, sample_perturbations
from ddereach.validation.simulate import simulate_batch

FROZEN_MODEL = """
[system]
n = 2
tau = 0.5
K = 2

[dynamics]
g1 = 0
g2 = 0
f1 = 0
f2 = 0

[domains]
X = [-1,2]x[-1,2]
D = [0,0]
I0 = [0,1]x[0,1]

[solver]
h = 0.25
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
"""


class TestPartition(unittest.TestCase):
    def test_faces_and_labels(self):
        partition = partition_boundary(Box.from_pairs([(0, 1), (2, 3)]))
        self.assertEqual(partition.labels, ('x1lo', 'x1hi', 'x2lo', 'x2hi'))
        self.assertEqual(partition.faces[1], Box.from_pairs([(1, 1), (2, 3)]))

    def test_patches_cover_each_face(self):
        partition = partition_boundary(Box.from_pairs([(0, 1), (0, 1), (0, 1)]), subdivisions=3)
        self.assertEqual(len(partition), 6 * 9)
        self.assertIn('x3hi_8', partition.labels)
        x1lo = [box for label, box in partition if label.startswith('x1lo')]
        self.assertAlmostEqual(sum(box[1].width * box[2].width for box in x1lo), 1.0)

    def test_degenerate_initial_box(self):
        with self.assertRaises(ModelError):
            partition_boundary(Box.from_pairs([(0, 1), (2, 2)]))
        with self.assertRaises(ValueError):
            partition_boundary(Box.from_pairs([(0, 1)]), subdivisions=0)


class TestShrink(unittest.TestCase):
    def setUp(self):
        self.O = Box.from_pairs([(0, 4), (0, 4)])
        self.witness = Box.point([2.0, 2.0])

    def test_cut_away_from_blocker(self):
        blocker = Box.from_pairs([(3, 4), (0, 4)])
        U, status = shrink([blocker], self.witness, self.O)
        self.assertEqual(status, STATUS_OK)
        self.assertEqual(U, Box.from_pairs([(0, 3), (0, 4)]))
        self.assertFalse(U.meets_interior(blocker))
        self.assertTrue(U.interior_contains(self.witness))

    def test_focus_picks_the_cut_nearest_the_target(self):
        corner = Box.from_pairs([(3, 4), (3, 4)])
        plain, _ = shrink([corner], self.witness, self.O)
        focused, _ = shrink([corner], self.witness, self.O, focus=Box.from_pairs([(3.5, 4), (0, 1)]))
        self.assertEqual(plain.volume(), 12.0)
        self.assertEqual(focused, Box.from_pairs([(0, 4), (0, 3)]))

    def test_blocked_witness(self):
        blocker = Box.from_pairs([(1, 3), (1, 3)])
        U, status = shrink([blocker], self.witness, self.O)
        self.assertTrue(U.is_empty)
        self.assertEqual(status, STATUS_WITNESS_BLOCKED)
        U, status = shrink([], Box.point([4.0, 2.0]), self.O)
        self.assertEqual(status, STATUS_WITNESS_BLOCKED)

    def test_empty_inputs(self):
        self.assertEqual(shrink([], self.witness, Box.empty()), (Box.empty(), STATUS_DEGENERATE))


def _shell(n, thickness=0.1, skip=None):
    '''Slabs covering the sides of the unit cube, optionally leaving one side open.'''
    slabs = []
    for i in range(n):
        for side, (lo, hi) in enumerate(((0.0, thickness), (1.0 - thickness, 1.0))):
            if skip == (i, side):
                continue
            pairs = [(0.0, 1.0)] * n
            pairs[i] = (lo, hi)
            slabs.append(Box.from_pairs(pairs))
    return slabs


class TestSeparation(unittest.TestCase):
    def setUp(self):
        self.O = Box.from_pairs([(0, 1), (0, 1)])
        self.staircase = [Box.from_pairs([(k / 4, (k + 1) / 4), (k / 4, (k + 1) / 4)]) for k in range(4)]

    def test_corner_of_a_diagonal_band_is_outside(self):
        corner = Box.from_pairs([(0.8, 0.95), (0.05, 0.2)])
        self.assertTrue(corner.issubset(self.O))
        self.assertTrue(separated_from_reach(self.staircase, self.O, corner))

    def test_box_meeting_a_face_is_not_separated(self):
        self.assertFalse(separated_from_reach(self.staircase, self.O, Box.from_pairs([(0.2, 0.3), (0.2, 0.3)])))
        self.assertFalse(separated_from_reach(self.staircase, self.O, Box.from_pairs([(0.5, 0.6), (0.2, 0.5)])))

    def test_enclosed_box_is_not_separated(self):
        inside = Box.from_pairs([(0.4, 0.6), (0.4, 0.6)])
        self.assertFalse(separated_from_reach(_shell(2), self.O, inside))

    def test_gap_in_the_faces_joins_the_outside(self):
        inside = Box.from_pairs([(0.4, 0.6), (0.4, 0.6)])
        self.assertTrue(separated_from_reach(_shell(2, skip=(1, 1)), self.O, inside))

    def test_three_dimensions(self):
        O = Box.from_pairs([(0, 1)] * 3)
        inside = Box.from_pairs([(0.4, 0.6)] * 3)
        self.assertFalse(separated_from_reach(_shell(3), O, inside))
        self.assertTrue(separated_from_reach(_shell(3, skip=(0, 0)), O, inside))

    def test_nothing_to_separate_from(self):
        self.assertFalse(separated_from_reach([], self.O, Box.from_pairs([(0.4, 0.6), (0.4, 0.6)])))


class TestPropagate(unittest.TestCase):
    def test_frozen_faces_stay_put(self):
        spec = load_model(FROZEN_MODEL)
        partition = partition_boundary(spec.I0)
        pipes = propagate(spec, partition)
        self.assertEqual(set(pipes), set(partition.labels))
        for label, face in partition:
            self.assertEqual(len(pipes[label]), 4)
            self.assertTrue(face.issubset(tip_at_time(pipes[label], 1.0)))
            self.assertEqual(tip_at_time(pipes[label], 0.0), face)
        with self.assertRaises(ValueError):
            tip_at_time(pipes['x1lo'], 0.3)

    def test_step_must_divide_tau(self):
        spec = load_model(FROZEN_MODEL)
        with self.assertRaises(ConfigError):
            propagate(spec, partition_boundary(spec.I0), h=0.3)

    def test_domain_containment(self):
        spec = load_model(FROZEN_MODEL)
        pipes = propagate(spec, partition_boundary(spec.I0))
        self.assertTrue(check_domain_containment(pipes.values(), spec.X))
        self.assertFalse(check_domain_containment(pipes.values(), spec.I0))
        self.assertFalse(check_domain_containment([], spec.X))


class TestCheckpointTimes(unittest.TestCase):
    def test_segment_boundaries_and_extras(self):
        spec = load_model(DECAY_MODEL)
        times = checkpoint_times(spec, 0.05, [0.25, 0.2])
        self.assertEqual(len(times), 5)
        self.assertAlmostEqual(times[2], 0.25)
        with self.assertRaises(ConfigError):
            checkpoint_times(spec, 0.05, [0.33])
        with self.assertRaises(ConfigError):
            checkpoint_times(spec, 0.05, [1.0])


class TestReachAnalyzer(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = load_model(DECAY_MODEL, name='decay')
        cls.result = ReachAnalyzer(cls.spec, checkpoints=[0.25]).analyze()

    def test_frozen_system_reaches_its_initial_box(self):
        result = ReachAnalyzer(load_model(FROZEN_MODEL)).analyze()
        self.assertTrue(result.certified)
        final = result.checkpoints[-1]
        self.assertEqual(final.status, STATUS_OK)
        self.assertTrue(final.under.issubset(Box.from_pairs([(0, 1), (0, 1)])))
        self.assertGreater(final.under.volume(), 0.99)
        self.assertTrue(result.domain_ok)

    def test_under_inside_over(self):
        self.assertTrue(self.result.certified)
        self.assertEqual([round(c.t, 9) for c in self.result.checkpoints], [0.0, 0.2, 0.25, 0.4, 0.6])
        for checkpoint in self.result.checkpoints:
            with self.subTest(t=checkpoint.t):
                self.assertEqual(checkpoint.status, STATUS_OK)
                self.assertTrue(checkpoint.under.issubset(checkpoint.over))
                self.assertTrue(checkpoint.under.interior_contains(checkpoint.witness))
                for box in checkpoint.boundary.values():
                    self.assertFalse(checkpoint.under.meets_interior(box))

    def test_over_contains_sampled_states(self):
        rng = np.random.RandomState(7)
        starts = sample_in_box(self.spec.I0, 300, rng)
        signals = sample_perturbations(self.spec.D, self.spec.L, self.spec.horizon, 300, rng)
        trajectory = simulate_batch(self.spec, starts, signals)
        for checkpoint in self.result.checkpoints:
            states = trajectory.at(checkpoint.t)
            self.assertTrue(all(checkpoint.over.contains_point(x) for x in states), f"t={checkpoint.t}")

    def test_checkpoint_lookup(self):
        self.assertAlmostEqual(self.result.checkpoint_at(0.4).t, 0.4)
        with self.assertRaises(ValueError):
            self.result.checkpoint_at(0.3)

    def test_json_reload_keeps_boxes(self):
        data = json.loads(json.dumps(self.result.to_dict()))
        reloaded = ReachResult.from_dict(data)
        self.assertEqual(reloaded.model, 'decay')
        for before, after in zip(self.result.checkpoints, reloaded.checkpoints):
            self.assertEqual(before.over, after.over)
            self.assertEqual(before.under, after.under)
            self.assertEqual(before.boundary, after.boundary)
        self.assertEqual(reloaded.face_pipes, {})

    def test_uncertified_model_suppresses_under(self):
        spec = load_model(DECAY_MODEL.replace("tau = 0.2", "tau = 0.5").replace("K = 3", "K = 2"))
        result = ReachAnalyzer(spec).analyze()
        self.assertFalse(result.certified)
        self.assertIsNotNone(result.full_pipe)
        for checkpoint in result.checkpoints:
            self.assertTrue(checkpoint.under.is_empty)
            self.assertEqual(checkpoint.status, STATUS_UNCERTIFIED)
        self.assertEqual(result.checkpoints[0].over, spec.I0)


if __name__ == "__main__":
    unittest.main()
