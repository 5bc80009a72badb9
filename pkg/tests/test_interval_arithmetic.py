"""Tests for intervals, boxes and interval matrices."""
import math
import unittest
from fractions import Fraction

import numpy as np
from hypothesis import given, settings, strategies as st

from ddereach.core.interval import (
    Box, Interval, IntervalMatrix, dominance_margins, hull_all, inf_norm, is_strictly_dominant,
)
from ddereach.exceptions import DimensionError

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def intervals(draw):
    a = draw(finite)
    b = draw(finite)
    return Interval(min(a, b), max(a, b))


def _encloses(interval, exact):
    return Fraction(interval.lo) <= exact <= Fraction(interval.hi)


class TestInterval(unittest.TestCase):
    def test_rejects_inverted_bounds(self):
        with self.assertRaises(ValueError):
            Interval(1.0, 0.0)

    def test_from_decimal_brackets_non_representable_literal(self):
        tenth = Interval.from_decimal("0.1")
        self.assertLess(tenth.lo, tenth.hi)
        self.assertTrue(_encloses(tenth, Fraction("0.1")))
        self.assertEqual(Interval.from_decimal("0.5"), Interval.point(0.5))

    def test_sqr_is_tight_across_zero(self):
        x = Interval(-2.0, 1.0)
        self.assertEqual(x.sqr(), Interval(0.0, 4.0))
        self.assertEqual(x ** 2, Interval(0.0, 4.0))
        self.assertEqual(x * x, Interval(-2.0, 4.0))

    def test_odd_power_keeps_sign(self):
        self.assertEqual(Interval(-2.0, 1.0) ** 3, Interval(-8.0, 1.0))
        self.assertEqual(Interval(3.0, 5.0) ** 0, Interval.point(1.0))
        with self.assertRaises(ValueError):
            Interval(1.0, 2.0) ** -1

    def test_intersect_of_disjoint_is_none(self):
        self.assertIsNone(Interval(0.0, 1.0).intersect(Interval(2.0, 3.0)))
        self.assertEqual(Interval(0.0, 2.0).intersect(Interval(1.0, 3.0)), Interval(1.0, 2.0))

    def test_mig_and_mag(self):
        self.assertEqual(Interval(-1.0, 2.0).mig, 0.0)
        self.assertEqual(Interval(-3.0, -1.0).mig, 1.0)
        self.assertEqual(Interval(-3.0, -1.0).mag, 3.0)

    @given(intervals(), intervals(), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=200)
    def test_arithmetic_encloses_point_results(self, a, b, s, r):
        x = Fraction(a.lo) + (Fraction(a.hi) - Fraction(a.lo)) * Fraction(s)
        y = Fraction(b.lo) + (Fraction(b.hi) - Fraction(b.lo)) * Fraction(r)
        self.assertTrue(_encloses(a + b, x + y))
        self.assertTrue(_encloses(a - b, x - y))
        self.assertTrue(_encloses(a * b, x * y))
        self.assertTrue(_encloses(a.sqr(), x * x))

    @given(finite, finite)
    def test_point_product_is_rounded_outward(self, x, y):
        product = Interval.point(x) * Interval.point(y)
        self.assertTrue(_encloses(product, Fraction(x) * Fraction(y)))
        self.assertLessEqual(product.hi - product.lo, 2 * math.ulp(x * y) + 1e-300)


class TestBox(unittest.TestCase):
    def setUp(self):
        self.unit = Box.from_pairs([(0, 1), (0, 1)])

    def test_empty_box_is_hull_identity(self):
        self.assertEqual(Box.empty().hull(self.unit), self.unit)
        self.assertEqual(hull_all([]), Box.empty())
        self.assertEqual(str(Box.empty()), 'Empty')

    def test_disjoint_intersection_is_empty(self):
        other = Box.from_pairs([(2, 3), (0, 1)])
        self.assertTrue(self.unit.intersect(other).is_empty)
        self.assertFalse(self.unit.intersects(other))

    def test_touching_boxes_intersect_but_do_not_meet_interior(self):
        other = Box.from_pairs([(1, 2), (0, 1)])
        self.assertTrue(self.unit.intersects(other))
        self.assertFalse(self.unit.meets_interior(other))

    def test_interior_containment_is_strict(self):
        self.assertTrue(self.unit.interior_contains(Box.from_pairs([(0.1, 0.9), (0.2, 0.3)])))
        self.assertFalse(self.unit.interior_contains(Box.from_pairs([(0.0, 0.9), (0.2, 0.3)])))
        self.assertTrue(self.unit.interior_contains_point([0.5, 0.5], margin=0.1))
        self.assertFalse(self.unit.interior_contains_point([0.05, 0.5], margin=0.1))

    def test_dimension_mismatch_raises(self):
        with self.assertRaises(DimensionError):
            self.unit.hull(Box.from_pairs([(0, 1)]))

    def test_measures(self):
        box = Box.from_pairs([(0, 2), (-1, 1), (3, 3.5)])
        self.assertEqual(box.volume(), 2.0)
        self.assertEqual(box.max_width, 2.0)
        np.testing.assert_array_equal(box.mid, [1.0, 0.0, 3.25])
        self.assertEqual(box.corners().shape, (8, 3))
        self.assertEqual(str(self.unit), '[0.0,1.0]x[0.0,1.0]')


class TestIntervalMatrix(unittest.TestCase):
    def test_product_with_box_encloses_point_products(self):
        A = IntervalMatrix.from_array([[1.0, 2.0], [-1.0, 0.5]])
        x = Box.from_pairs([(0, 1), (-1, 1)])
        image = A @ x
        rng = np.random.RandomState(3)
        for point in rng.uniform([0, -1], [1, 1], size=(50, 2)):
            self.assertTrue(image.contains_point(A.mid() @ point))

    def test_identity_is_neutral(self):
        A = IntervalMatrix([[Interval(1, 2), 0.0], [Interval(-1, 1), 3.0]])
        self.assertEqual(IntervalMatrix.identity(2) @ A, A)

    def test_inf_norm(self):
        A = IntervalMatrix([[Interval(-3, 1), 2.0], [0.5, Interval(0, 0.25)]])
        self.assertEqual(inf_norm(A), 5.0)

    def test_diagonal_dominance(self):
        np.testing.assert_allclose(dominance_margins([[3.0, -1.0], [2.0, 1.0]]), [2.0, -1.0])
        self.assertTrue(is_strictly_dominant(np.eye(3)))
        self.assertFalse(is_strictly_dominant([[1.0, 1.0], [0.0, 1.0]]))
        with self.assertRaises(DimensionError):
            dominance_margins(np.ones((2, 3)))


if __name__ == "__main__":
    unittest.main()
