'''
Piecewise-linear Lipschitz perturbation signals for the sampling oracles
'''

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ddereach.core.interval import Box

# knots per "time to cross D at full slope"; more knots let the slope bind more often
KNOTS_PER_CROSSING = 4
# probability that a knot-to-knot move uses the full slope budget
FULL_SLOPE_PROBABILITY = 0.5


@dataclass(frozen=True)
class SignalBatch:
    '''
    Several piecewise-linear signals on a shared knot grid

    Args:
        knots (numpy.array): increasing knot times, shape (K,)
        values (numpy.array): knot values, shape (S, K, m)
        L (float): slope bound the signals were built with
    '''

    knots: np.ndarray
    values: np.ndarray
    L: float

    def __len__(self):
        return self.values.shape[0]

    @property
    def m(self):
        return self.values.shape[2]

    def at(self, t: float) -> np.ndarray:
        '''Values of every signal at time t, shape (S, m); constant beyond the last knot.'''
        knots = self.knots
        if len(knots) == 1 or t <= knots[0]:
            return self.values[:, 0, :]
        if t >= knots[-1]:
            return self.values[:, -1, :]
        i = int(np.searchsorted(knots, t, side='right')) - 1
        i = min(max(i, 0), len(knots) - 2)
        w = (t - knots[i]) / (knots[i + 1] - knots[i])
        return (1.0 - w) * self.values[:, i, :] + w * self.values[:, i + 1, :]

    def signal(self, index) -> PerturbationSignal:
        return PerturbationSignal(self.knots, self.values[index], self.L)

    def repeat(self, count) -> SignalBatch:
        '''The first signal repeated count times.'''
        return SignalBatch(self.knots, np.repeat(self.values[:1], count, axis=0), self.L)

    def take(self, indices) -> SignalBatch:
        return SignalBatch(self.knots, self.values[np.asarray(indices)], self.L)


@dataclass(frozen=True)
class PerturbationSignal:
    '''
    One piecewise-linear perturbation d: [0, horizon] -> D

    Args:
        knots (numpy.array): knot times, shape (K,)
        values (numpy.array): values at the knots, shape (K, m)
        L (float): slope bound in the 2-norm
    '''

    knots: np.ndarray
    values: np.ndarray
    L: float

    def __call__(self, t):
        return self.as_batch().at(t)[0]

    def as_batch(self) -> SignalBatch:
        return SignalBatch(self.knots, self.values[None, :, :], self.L)

    def max_slope(self) -> float:
        if len(self.knots) < 2:
            return 0.0
        steps = np.linalg.norm(np.diff(self.values, axis=0), axis=1)
        return float(np.max(steps / np.diff(self.knots)))


def _knot_grid(D: Box, L: float, horizon: float):
    span = D.max_width
    if L == 0 or span == 0 or horizon <= 0:
        return np.array([0.0, max(horizon, 0.0)])
    spacing = min(horizon, span / L) / KNOTS_PER_CROSSING
    count = int(math.ceil(horizon / spacing)) + 1
    return np.linspace(0.0, horizon, count)


def sample_perturbations(D: Box, L: float, horizon: float, count: int, rng: np.random.RandomState) -> SignalBatch:
    '''
    Draw count random L-Lipschitz piecewise-linear signals valued in D

    Each knot moves from the previous one by a random direction and a
    length up to L times the knot spacing (the full length with
    probability FULL_SLOPE_PROBABILITY), then is projected back onto D;
    projection onto a box never lengthens the move.
    '''
    if L < 0:
        raise ValueError(f"L must be nonnegative, got {L!r}")
    knots = _knot_grid(D, L, horizon)
    lo, hi = D.lo, D.hi
    m = len(D)
    values = np.empty((count, len(knots), m))
    values[:, 0, :] = lo + (hi - lo) * rng.random_sample((count, m))
    if L == 0 or D.max_width == 0:
        values[:, 1:, :] = values[:, :1, :]
        return SignalBatch(knots, values, L)
    for k in range(1, len(knots)):
        budget = L * (knots[k] - knots[k - 1])
        direction = rng.standard_normal((count, m))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        direction = direction / np.where(norms > 0, norms, 1.0)
        full = rng.random_sample((count, 1)) < FULL_SLOPE_PROBABILITY
        length = np.where(full, budget, budget * rng.random_sample((count, 1)))
        values[:, k, :] = np.clip(values[:, k - 1, :] + direction * length, lo, hi)
    return SignalBatch(knots, values, L)


def sample_perturbation(D: Box, L: float, horizon: float, seed: int = 0) -> PerturbationSignal:
    '''
    Reproducible random L-Lipschitz signal [0, horizon] -> D

    Args:
        D (Box): perturbation range
        L (float): slope bound, >= 0
        horizon (float): signal length
        seed (int): RNG seed

    Returns:
        (PerturbationSignal): constant when L == 0 or D is a point
    '''
    rng = np.random.RandomState(seed)
    return sample_perturbations(D, L, horizon, 1, rng).signal(0)


def sample_in_box(box: Box, count: int, rng: np.random.RandomState) -> np.ndarray:
    '''Uniform points in a box, shape (count, n).'''
    return box.lo + (box.hi - box.lo) * rng.random_sample((count, len(box)))


def sample_on_boundary(box: Box, count: int, rng: np.random.RandomState) -> np.ndarray:
    '''Uniform points on a random face of a box, shape (count, n).'''
    points = sample_in_box(box, count, rng)
    n = len(box)
    dims = rng.randint(0, n, size=count)
    sides = rng.randint(0, 2, size=count)
    rows = np.arange(count)
    points[rows, dims] = np.where(sides == 0, box.lo[dims], box.hi[dims])
    return points
