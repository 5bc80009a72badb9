"""Tests for the validated flow engine."""
import io
import math
import unittest

import numpy as np

from ddereach.core.expr import KIND_DELAYED, KIND_PRE_DELAY, VectorField, delayed_names, input_names
from ddereach.core.interval import Box, Interval
from ddereach.engine.flow import (
    FRAME_BOX, FRAME_QR, FlowParams, FlowSegment, Flowpipe, InputSignal,
    apriori_enclosure, flow_segment, step, steps_in,
)
from ddereach.exceptions import DomainExitError
from ddereach.models import bundled_model_path
from ddereach.core.model import load_model_file
from ddereach.validation.signals import sample_in_box, sample_perturbations
from ddereach.validation.simulate import simulate_batch


def _field(texts, kind=KIND_PRE_DELAY):
    return VectorField.from_texts(texts, kind, 1)


def _no_input():
    return InputSignal.constant(input_names(1), Box.point([0.0]))


def _rotation(point, t):
    x, y = point
    return np.array([x * math.cos(t) + y * math.sin(t), -x * math.sin(t) + y * math.cos(t)])


class TestStep(unittest.TestCase):
    def test_decay_tip_contains_closed_form(self):
        decay = _field(["-x1"])
        tip, tube = step(decay, Box.point([1.0]), {}, 0.01)
        self.assertTrue(tip[0].contains(math.exp(-0.01)))
        self.assertTrue(tube[0].contains(1.0) and tube[0].contains(math.exp(-0.01)))
        self.assertLess(tip[0].width, 2e-4)

    def test_apriori_enclosure_satisfies_picard_test(self):
        decay = _field(["-x1*x1 + d1"])
        inputs = {'d1': Interval(-0.1, 0.1)}
        x = Box.from_pairs([(0.5, 1.0)])
        B = apriori_enclosure(decay, x, inputs, 0.1)
        self.assertTrue(x.issubset(B))
        # slowest decay from 0.5 ends near 0.4656
        self.assertLessEqual(B[0].lo, 0.466)
        with self.assertRaises(ValueError):
            apriori_enclosure(decay, x, inputs, 0.0)

    def test_domain_exit(self):
        drift = _field(["1"])
        with self.assertRaises(DomainExitError):
            step(drift, Box.point([1.0]), {}, 0.5, domain=Box.from_pairs([(-1, 1)]))


class TestFlowSegment(unittest.TestCase):
    def test_rotation_encloses_exact_solutions(self):
        rotation = _field(["x2", "-x1"])
        init = Box.from_pairs([(0.9, 1.1), (-0.1, 0.1)])
        pipe = flow_segment(rotation, init, _no_input(), 1.0, FlowParams(h=0.05))
        self.assertEqual(len(pipe), 20)
        self.assertAlmostEqual(pipe.t_end, 1.0)
        rng = np.random.RandomState(0)
        for point in sample_in_box(init, 100, rng):
            self.assertTrue(pipe.final_tip.contains_point(_rotation(point, 1.0)))
            self.assertTrue(pipe.tube_at(9).contains_point(_rotation(point, 0.475)))

    def test_qr_frame_wraps_less_than_box_frame(self):
        rotation = _field(["x2", "-x1"])
        init = Box.from_pairs([(0.9, 1.1), (-0.1, 0.1)])
        qr = flow_segment(rotation, init, _no_input(), 1.5, FlowParams(h=0.05, frame=FRAME_QR))
        box = flow_segment(rotation, init, _no_input(), 1.5, FlowParams(h=0.05, frame=FRAME_BOX))
        self.assertLess(qr.final_tip.volume(), box.final_tip.volume())

    def test_perturbation_box_is_swept(self):
        drift = _field(["d1"])
        inputs = InputSignal.constant(input_names(1), Box.from_pairs([(-1, 1)]))
        pipe = flow_segment(drift, Box.point([0.0]), inputs, 1.0, FlowParams(h=0.1))
        tip = pipe.final_tip[0]
        self.assertTrue(tip.contains(-1.0) and tip.contains(1.0))
        self.assertLess(tip.width, 2.2)

    def test_delayed_channel_is_read_per_step(self):
        lagged = _field(["x1_tau"], KIND_DELAYED)
        history = [Box.point([float(j)]) for j in range(4)]
        inputs = _no_input().with_channel(delayed_names(1), history)
        pipe = flow_segment(lagged, Box.point([0.0]), inputs, 1.0, FlowParams(h=0.25))
        # x(1) = 0.25 * (0 + 1 + 2 + 3)
        self.assertTrue(pipe.final_tip[0].contains(1.5))
        self.assertLess(pipe.final_tip[0].width, 1e-9)

    def test_clipping_is_recorded(self):
        drift = _field(["1"])
        domain = Box.from_pairs([(-1, 0.25)])
        pipe = flow_segment(drift, Box.from_pairs([(0.0, 0.2)]), _no_input(), 0.1,
                            FlowParams(h=0.05, domain=domain))
        self.assertTrue(pipe.clipped)
        self.assertTrue(pipe.final_tip.issubset(domain))

    def test_leaving_the_domain_raises_with_time(self):
        drift = _field(["1"])
        with self.assertRaises(DomainExitError) as ctx:
            flow_segment(drift, Box.point([0.0]), _no_input(), 1.0,
                         FlowParams(h=0.1, domain=Box.from_pairs([(-1, 0.5)])))
        self.assertAlmostEqual(ctx.exception.time, 0.6)

    def test_first_example_face_contains_sampled_trajectories(self):
        spec = load_model_file(bundled_model_path('example1'))
        face = Box.from_pairs([(0.1, 0.1), (0.1, 0.3)])
        inputs = InputSignal.constant(input_names(1), spec.D)
        pipe = flow_segment(spec.g, face, inputs, spec.tau, FlowParams(h=spec.solver.h, domain=spec.X))
        rng = np.random.RandomState(1)
        starts = sample_in_box(face, 200, rng)
        signals = sample_perturbations(spec.D, spec.L, spec.tau, 200, rng)
        trajectory = simulate_batch(spec, starts, signals, t_end=spec.tau)
        for j, segment in enumerate(pipe.segments):
            for t in np.linspace(segment.t_lo, segment.t_hi, 3):
                states = trajectory.at(round(t / trajectory.h) * trajectory.h)
                self.assertTrue(all(segment.tube.contains_point(x) for x in states), f"step {j}")
        self.assertTrue(all(pipe.final_tip.contains_point(x) for x in trajectory.endpoint))


class TestFlowpipe(unittest.TestCase):
    def test_append_requires_contiguous_segments(self):
        pipe = Flowpipe('x1lo', Box.point([0.0]))
        pipe.append(FlowSegment(0.0, 0.5, Box.from_pairs([(0, 1)]), Box.point([1.0])))
        with self.assertRaises(ValueError):
            pipe.append(FlowSegment(0.75, 1.0, Box.from_pairs([(0, 1)]), Box.point([1.0])))
        self.assertEqual(pipe.tip_at(-1), Box.point([0.0]))
        self.assertEqual(pipe.current, Box.point([1.0]))

    def test_csv_rows(self):
        pipe = Flowpipe('x1lo', Box.point([0.0, 0.0]))
        pipe.append(FlowSegment(0.0, 0.1, Box.from_pairs([(0, 1), (2, 3)]), Box.point([1.0, 3.0])))
        stream = io.StringIO()
        pipe.to_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], 't_lo,t_hi,x1_lo,x1_hi,x2_lo,x2_hi')
        self.assertEqual(lines[1], '0,0.10000000000000001,0,1,2,3')

    def test_steps_in(self):
        self.assertEqual(steps_in(1.0, 0.05), 20)
        self.assertEqual(steps_in(0.02, 0.002), 10)
        with self.assertRaises(ValueError):
            steps_in(1.0, 0.3)


if __name__ == "__main__":
    unittest.main()
