'''
Outward-rounded interval arithmetic: intervals, boxes and interval matrices

Results that are exactly representable come back unchanged; inexact
results are widened by one unit in the last place in the direction of the
rounding error, which is detected with error-free transformations
(TwoSum and Dekker's TwoProduct).
'''

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from ddereach.exceptions import DimensionError

# Veltkamp splitting constant for IEEE doubles (2**27 + 1)
_SPLITTER = 134217729.0
# Below/above these magnitudes Dekker's product may under/overflow, so the
# residual is reported as unknown and both bounds are widened.
_TINY = 2.0 ** -900
_HUGE = 2.0 ** 995


def _two_sum(a, b):
    s = a + b
    if not math.isfinite(s):
        return s, 0.0
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLITTER * a
    high = c - (c - a)
    return high, a - high


def _two_product(a, b):
    p = a * b
    if a == 0.0 or b == 0.0:
        return p, 0.0
    if not math.isfinite(p) or abs(p) < _TINY or abs(a) > _HUGE or abs(b) > _HUGE:
        return p, math.nan
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _down(value, err):
    # true result = value + err; nan err means unknown
    if err < 0.0 or err != err:
        return math.nextafter(value, -math.inf)
    return value


def _up(value, err):
    if err > 0.0 or err != err:
        return math.nextafter(value, math.inf)
    return value


def add_down(a, b):
    return _down(*_two_sum(a, b))


def add_up(a, b):
    return _up(*_two_sum(a, b))


def mul_down(a, b):
    return _down(*_two_product(a, b))


def mul_up(a, b):
    return _up(*_two_product(a, b))


def _pow_nonneg(a, k, rounder):
    # a >= 0, so each partial product is monotone in the rounding direction
    result = 1.0
    for _ in range(k):
        result = rounder(result, a)
    return result


@dataclass(frozen=True)
class Interval:
    '''
    Closed real interval [lo, hi]

    Args:
        lo (float): lower bound
        hi (float): upper bound, hi >= lo
    '''

    lo: float
    hi: float

    def __post_init__(self):
        lo = float(self.lo) + 0.0
        hi = float(self.hi) + 0.0
        if not lo <= hi:
            raise ValueError(f"invalid interval [{lo!r}, {hi!r}]")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @classmethod
    def point(cls, value):
        return cls(value, value)

    @classmethod
    def from_decimal(cls, text):
        '''
        Tightest interval enclosing the decimal number written in text

        Args:
            text (str): decimal literal such as "0.1" or "1e-3"

        Returns:
            (Interval): a point interval when the literal is a double,
                        otherwise the one-ulp bracket around it
        '''
        value = float(text)
        exact = Fraction(text.strip())
        approx = Fraction(value)
        if approx == exact:
            return cls(value, value)
        if approx < exact:
            return cls(value, math.nextafter(value, math.inf))
        return cls(math.nextafter(value, -math.inf), value)

    @staticmethod
    def coerce(value):
        if isinstance(value, Interval):
            return value
        return Interval(value, value)

    # ── measures ──

    @property
    def mid(self):
        if self.lo == self.hi:
            return self.lo
        return 0.5 * self.lo + 0.5 * self.hi

    @property
    def width(self):
        return add_up(self.hi, -self.lo)

    @property
    def rad(self):
        return mul_up(0.5, self.width)

    @property
    def mag(self):
        return max(abs(self.lo), abs(self.hi))

    @property
    def mig(self):
        if self.lo <= 0.0 <= self.hi:
            return 0.0
        return min(abs(self.lo), abs(self.hi))

    @property
    def is_point(self):
        return self.lo == self.hi

    # ── set relations ──

    def contains(self, value):
        return self.lo <= value <= self.hi

    def interior_contains(self, value):
        return self.lo < value < self.hi

    def issubset(self, other):
        return other.lo <= self.lo and self.hi <= other.hi

    def interior_contains_interval(self, other):
        return self.lo < other.lo and other.hi < self.hi

    def overlaps_interior(self, other):
        '''True when other meets the open interval (lo, hi).'''
        return other.lo < self.hi and self.lo < other.hi

    def hull(self, other):
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other):
        '''Intersection, or None when the intervals are disjoint.'''
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            return None
        return Interval(lo, hi)

    def inflate(self, amount):
        return Interval(add_down(self.lo, -amount), add_up(self.hi, amount))

    # ── arithmetic ──

    def __add__(self, other):
        other = Interval.coerce(other)
        return Interval(add_down(self.lo, other.lo), add_up(self.hi, other.hi))

    __radd__ = __add__

    def __sub__(self, other):
        other = Interval.coerce(other)
        return Interval(add_down(self.lo, -other.hi), add_up(self.hi, -other.lo))

    def __rsub__(self, other):
        return Interval.coerce(other) - self

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other):
        return mul(self, Interval.coerce(other))

    __rmul__ = __mul__

    def sqr(self):
        '''x**2, tight on sign-crossing intervals (unlike x*x).'''
        if self.lo >= 0.0:
            return Interval(mul_down(self.lo, self.lo), mul_up(self.hi, self.hi))
        if self.hi <= 0.0:
            return Interval(mul_down(self.hi, self.hi), mul_up(self.lo, self.lo))
        m = max(-self.lo, self.hi)
        return Interval(0.0, mul_up(m, m))

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise ValueError(f"interval power needs a nonnegative integer exponent, got {k!r}")
        if k == 0:
            return Interval(1.0, 1.0)
        if k == 1:
            return self
        if k == 2:
            return self.sqr()
        if k % 2 == 0:
            return Interval(_pow_nonneg(self.mig, k, mul_down), _pow_nonneg(self.mag, k, mul_up))
        lo = _signed_pow(self.lo, k, upward=False)
        hi = _signed_pow(self.hi, k, upward=True)
        return Interval(lo, hi)

    def __str__(self):
        return f"[{self.lo!r},{self.hi!r}]"


def _signed_pow(a, k, upward):
    # odd k
    if a >= 0.0:
        return _pow_nonneg(a, k, mul_up if upward else mul_down)
    return -_pow_nonneg(-a, k, mul_down if upward else mul_up)


def mul(a: Interval, b: Interval) -> Interval:
    '''
    Product of two intervals, rounded outward

    Args:
        a (Interval): left factor
        b (Interval): right factor

    Returns:
        (Interval): smallest outward-rounded interval containing {xy : x in a, y in b}
    '''
    if a.lo == a.hi and b.lo == b.hi:
        p, err = _two_product(a.lo, b.lo)
        return Interval(_down(p, err), _up(p, err))
    lows = []
    highs = []
    for x in (a.lo, a.hi):
        for y in (b.lo, b.hi):
            p, err = _two_product(x, y)
            lows.append(_down(p, err))
            highs.append(_up(p, err))
    return Interval(min(lows), max(highs))


def interval_sum(terms: Iterable[Interval]) -> Interval:
    lo = 0.0
    hi = 0.0
    for term in terms:
        lo = add_down(lo, term.lo)
        hi = add_up(hi, term.hi)
    return Interval(lo, hi)


class Box:
    '''
    Axis-aligned box: a vector of intervals, or the distinguished empty box

    Boxes are immutable. Use Box.empty() for the empty set; it is the
    identity of hull and absorbs intersection.

    Args:
        dims (iterable of Interval): one interval per state dimension
    '''

    __slots__ = ('_dims', '_empty')

    def __init__(self, dims: Iterable[Interval] = (), _empty: bool = False):
        self._dims = tuple(dims)
        self._empty = _empty
        if not _empty and not self._dims:
            raise DimensionError("a nonempty box needs at least one dimension")

    @classmethod
    def empty(cls):
        return _EMPTY

    @classmethod
    def from_bounds(cls, lo: Sequence[float], hi: Sequence[float]) -> Box:
        if len(lo) != len(hi):
            raise DimensionError(f"bounds of length {len(lo)} and {len(hi)}")
        return cls(Interval(a, b) for a, b in zip(lo, hi))

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> Box:
        return cls(Interval(a, b) for a, b in pairs)

    @classmethod
    def point(cls, values: Iterable[float]) -> Box:
        return cls(Interval(v, v) for v in values)

    # ── structure ──

    @property
    def is_empty(self):
        return self._empty

    @property
    def dims(self):
        return self._dims

    def __len__(self):
        return len(self._dims)

    def __iter__(self):
        return iter(self._dims)

    def __getitem__(self, i):
        return self._dims[i]

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return self._empty == other._empty and self._dims == other._dims

    def __hash__(self):
        return hash((self._empty, self._dims))

    def __repr__(self):
        if self._empty:
            return 'Box.empty()'
        return f"Box({self})"

    def __str__(self):
        if self._empty:
            return 'Empty'
        return 'x'.join(str(d) for d in self._dims)

    def replace(self, i: int, value: Interval) -> Box:
        dims = list(self._dims)
        dims[i] = value
        return Box(dims)

    # ── measures ──

    @property
    def lo(self) -> np.ndarray:
        return np.array([d.lo for d in self._dims])

    @property
    def hi(self) -> np.ndarray:
        return np.array([d.hi for d in self._dims])

    @property
    def mid(self) -> np.ndarray:
        return np.array([d.mid for d in self._dims])

    @property
    def width(self) -> np.ndarray:
        return np.array([d.width for d in self._dims])

    @property
    def max_width(self) -> float:
        return max(d.width for d in self._dims)

    def volume(self) -> float:
        if self._empty:
            return 0.0
        return float(np.prod([d.hi - d.lo for d in self._dims]))

    def to_pairs(self):
        return [[d.lo, d.hi] for d in self._dims]

    # ── set relations ──

    def _check(self, other):
        if len(self) != len(other):
            raise DimensionError(f"box dimensions differ: {len(self)} vs {len(other)}")

    def contains_point(self, point) -> bool:
        if self._empty:
            return False
        return all(d.lo <= v <= d.hi for d, v in zip(self._dims, point))

    def interior_contains_point(self, point, margin=0.0) -> bool:
        if self._empty:
            return False
        return all(d.lo + margin < v < d.hi - margin for d, v in zip(self._dims, point))

    def issubset(self, other: Box) -> bool:
        if self._empty:
            return True
        if other._empty:
            return False
        self._check(other)
        return all(a.issubset(b) for a, b in zip(self._dims, other._dims))

    def interior_contains(self, other: Box) -> bool:
        '''True when other lies in the open interior of this box.'''
        if other._empty:
            return True
        if self._empty:
            return False
        self._check(other)
        return all(a.interior_contains_interval(b) for a, b in zip(self._dims, other._dims))

    def meets_interior(self, other: Box) -> bool:
        '''True when other intersects the open interior of this box.'''
        if self._empty or other._empty:
            return False
        self._check(other)
        return all(a.overlaps_interior(b) for a, b in zip(self._dims, other._dims))

    def intersects(self, other: Box) -> bool:
        return not self.intersect(other).is_empty

    def hull(self, other: Box) -> Box:
        return hull(self, other)

    def intersect(self, other: Box) -> Box:
        if self._empty or other._empty:
            return _EMPTY
        self._check(other)
        dims = []
        for a, b in zip(self._dims, other._dims):
            c = a.intersect(b)
            if c is None:
                return _EMPTY
            dims.append(c)
        return Box(dims)

    def inflate(self, amount) -> Box:
        if self._empty:
            return self
        amounts = np.broadcast_to(np.asarray(amount, dtype=float), (len(self),))
        return Box(d.inflate(float(a)) for d, a in zip(self._dims, amounts))

    # ── arithmetic ──

    def __add__(self, other: Box) -> Box:
        self._check(other)
        return Box(a + b for a, b in zip(self._dims, other._dims))

    def __sub__(self, other: Box) -> Box:
        self._check(other)
        return Box(a - b for a, b in zip(self._dims, other._dims))

    def scale(self, factor: Interval) -> Box:
        return Box(factor * d for d in self._dims)

    def corners(self):
        '''All 2**n corner points, as an (2**n, n) array.'''
        grids = np.meshgrid(*[[d.lo, d.hi] for d in self._dims], indexing='ij')
        return np.stack([g.ravel() for g in grids], axis=-1)


_EMPTY = Box((), _empty=True)


def hull(a: Box, b: Box) -> Box:
    '''
    Smallest box containing both arguments

    Args:
        a (Box): first box (may be empty)
        b (Box): second box (may be empty)

    Returns:
        (Box): the interval hull; hull(a, Empty) == a
    '''
    if a.is_empty:
        return b
    if b.is_empty:
        return a
    a._check(b)
    return Box(x.hull(y) for x, y in zip(a.dims, b.dims))


def hull_all(boxes: Iterable[Box]) -> Box:
    result = _EMPTY
    for box in boxes:
        result = hull(result, box)
    return result


class IntervalMatrix:
    '''
    Rectangular grid of intervals

    Args:
        rows (iterable of iterables of Interval): row-major entries
    '''

    __slots__ = ('rows',)

    def __init__(self, rows):
        self.rows = tuple(tuple(Interval.coerce(e) for e in row) for row in rows)
        if not self.rows or len({len(r) for r in self.rows}) != 1:
            raise DimensionError("interval matrix must be rectangular and nonempty")

    @classmethod
    def identity(cls, n):
        return cls([[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)])

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=float)
        return cls([[float(v) for v in row] for row in array])

    @property
    def shape(self):
        return len(self.rows), len(self.rows[0])

    def __getitem__(self, index):
        i, j = index
        return self.rows[i][j]

    def __eq__(self, other):
        return isinstance(other, IntervalMatrix) and self.rows == other.rows

    def __repr__(self):
        return 'IntervalMatrix(' + '; '.join(' '.join(str(e) for e in r) for r in self.rows) + ')'

    def mid(self) -> np.ndarray:
        return np.array([[e.mid for e in row] for row in self.rows])

    def mag(self) -> np.ndarray:
        return np.array([[e.mag for e in row] for row in self.rows])

    def issubset(self, other) -> bool:
        return self.shape == other.shape and all(
            a.issubset(b) for ra, rb in zip(self.rows, other.rows) for a, b in zip(ra, rb))

    def hull(self, other):
        return IntervalMatrix([[a.hull(b) for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)])

    def inflate(self, amount):
        return IntervalMatrix([[e.inflate(amount) for e in row] for row in self.rows])

    def __add__(self, other):
        if self.shape != other.shape:
            raise DimensionError(f"matrix shapes differ: {self.shape} vs {other.shape}")
        return IntervalMatrix([[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)])

    def __sub__(self, other):
        if self.shape != other.shape:
            raise DimensionError(f"matrix shapes differ: {self.shape} vs {other.shape}")
        return IntervalMatrix([[a - b for a, b in zip(ra, rb)] for ra, rb in zip(self.rows, other.rows)])

    def scale(self, factor: Interval):
        return IntervalMatrix([[factor * e for e in row] for row in self.rows])

    def __matmul__(self, other):
        if isinstance(other, IntervalMatrix):
            if self.shape[1] != other.shape[0]:
                raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
            cols = list(zip(*other.rows))
            return IntervalMatrix([[interval_sum(a * b for a, b in zip(row, col)) for col in cols]
                                   for row in self.rows])
        if isinstance(other, Box):
            if self.shape[1] != len(other):
                raise DimensionError(f"cannot multiply {self.shape} by a box of dimension {len(other)}")
            return Box(interval_sum(a * b for a, b in zip(row, other.dims)) for row in self.rows)
        return NotImplemented


def inf_norm(matrix: IntervalMatrix) -> float:
    '''
    Sound upper bound of the infinity norm over all point matrices in an interval matrix

    Args:
        matrix (IntervalMatrix): the interval matrix

    Returns:
        (float): max over rows of the upward-rounded sum of entry magnitudes
    '''
    best = 0.0
    for row in matrix.rows:
        total = 0.0
        for entry in row:
            total = add_up(total, entry.mag)
        best = max(best, total)
    return best


def dominance_margins(matrix) -> np.ndarray:
    '''
    Diagonal-dominance margins |A_ii| - sum_{j != i} |A_ij| of a square point matrix

    Args:
        matrix (array-like): square matrix

    Returns:
        (numpy.array): one margin per row
    '''
    a = np.abs(np.asarray(matrix, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"dominance margins need a square matrix, got shape {a.shape}")
    diag = np.diagonal(a)
    return diag - (a.sum(axis=1) - diag)


def is_strictly_dominant(matrix) -> bool:
    return bool(np.all(dominance_margins(matrix) > 0.0))
