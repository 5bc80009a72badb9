'''
Reference simulation of the delay system by the method of steps

Every segment [k*tau, (k+1)*tau] is integrated with classic fixed-step
RK4; the delayed state is read from a cubic Hermite interpolant of the
previous segment. Trajectories are integrated in batches: all arrays carry
a leading sample axis S so that one pass simulates many initial states
and perturbations at once.
'''

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ddereach.core.expr import KIND_DELAYED, TIME_VAR, VectorField
from ddereach.core.model import ModelSpec
from ddereach.engine.flow import GRID_TOLERANCE, steps_in
from ddereach.exceptions import ConfigError, DimensionError, SingularSensitivityError
from ddereach.validation.signals import PerturbationSignal, SignalBatch

logger = logging.getLogger(__name__)

# simulation steps per validated-flow step
SIM_SUBSTEPS = 4
# segment-end sensitivity matrices with a larger condition number count as singular;
# the smallest singular value is also compared with 1, the scale s starts from
SINGULAR_CONDITION = 1e12


@dataclass
class Trajectory:
    '''
    Batch of simulated trajectories on a uniform grid

    Args:
        times (numpy.array): grid times, shape (T,)
        states (numpy.array): states, shape (T, S, n)
        exited (numpy.array): per sample, whether the state ever left X
        h (float): grid step
    '''

    times: np.ndarray
    states: np.ndarray
    exited: np.ndarray
    h: float

    def __len__(self):
        return self.states.shape[1]

    def index_of(self, t: float) -> int:
        index = int(round(t / self.h))
        if index < 0 or index >= len(self.times) or abs(self.times[index] - t) > GRID_TOLERANCE * max(1.0, abs(t)):
            raise ValueError(f"time {t!r} is not on the simulation grid")
        return index

    def at(self, t: float) -> np.ndarray:
        '''States of every sample at grid time t, shape (S, n).'''
        return self.states[self.index_of(t)]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def path(self, sample: int = 0) -> np.ndarray:
        return self.states[:, sample, :]


@dataclass
class SensitivityTrace:
    '''
    Sensitivity matrices s(t) = dx(t)/dx(k*tau) along a batch of trajectories

    Segment k holds s on [k*tau, (k+1)*tau]; each segment starts at the
    identity.

    Args:
        segment_times (list of numpy.array): grid times per segment
        matrices (list of numpy.array): s per segment, shape (T_k, S, n, n)
    '''

    segment_times: List[np.ndarray] = field(default_factory=list)
    matrices: List[np.ndarray] = field(default_factory=list)

    @property
    def segments(self):
        return len(self.matrices)

    def margins(self, k: int) -> np.ndarray:
        '''Diagonal-dominance margins of segment k, shape (T_k, S, n).'''
        a = np.abs(self.matrices[k])
        diag = np.diagonal(a, axis1=-2, axis2=-1)
        return diag - (a.sum(axis=-1) - diag)

    def norms(self, k: int) -> np.ndarray:
        '''Infinity norms of segment k, shape (T_k, S).'''
        return np.abs(self.matrices[k]).sum(axis=-1).max(axis=-1)

    def determinants(self, k: int) -> np.ndarray:
        return np.linalg.det(self.matrices[k])

    def _locate(self, t: float):
        for k, times in enumerate(self.segment_times):
            if times[0] - GRID_TOLERANCE <= t <= times[-1] + GRID_TOLERANCE:
                index = int(np.argmin(np.abs(times - t)))
                if abs(times[index] - t) <= GRID_TOLERANCE * max(1.0, abs(t)):
                    return k, index
        raise ValueError(f"time {t!r} is not on the sensitivity grid")

    def flow_jacobian(self, t: float, sample: int = 0) -> np.ndarray:
        '''
        dx(t)/dx0 composed from the per-segment matrices

        Args:
            t (float): grid time
            sample (int): which trajectory of the batch

        Returns:
            (numpy.array): n x n Jacobian of the flow map at x0
        '''
        k, index = self._locate(t)
        jacobian = self.matrices[k][index, sample]
        for j in range(k - 1, -1, -1):
            jacobian = jacobian @ self.matrices[j][-1, sample]
        return jacobian


def _columns(values, S):
    return np.stack([np.broadcast_to(np.asarray(v, dtype=float), (S,)) for v in values], axis=1)


def _matrix(rows, env, S):
    return np.stack([_columns([entry.eval_real(env) for entry in row], S) for row in rows], axis=1)


def _env(vector_field: VectorField, x, xtau, d, t):
    env = dict(zip(vector_field.state_vars, x.T))
    env.update(zip(vector_field.input_vars, d.T))
    env[TIME_VAR] = t
    if vector_field.kind == KIND_DELAYED:
        env.update(zip(vector_field.delayed_vars, xtau.T))
    return env


def _is_singular(matrices):
    values = np.linalg.svd(matrices, compute_uv=False)
    return values[..., -1] * SINGULAR_CONDITION <= np.maximum(values[..., 0], 1.0)


class _Segment:
    '''Dense data of one integrated segment, kept for the next segment's history.'''

    def __init__(self, times, states, derivatives, sens=None, sens_derivatives=None):
        self.times = times
        self.states = states
        self.derivatives = derivatives
        self.sens = sens
        self.sens_derivatives = sens_derivatives

    def history(self, query_times):
        return CubicHermiteSpline(self.times, self.states, self.derivatives, axis=0)(query_times)

    def sensitivity_history(self, query_times):
        return CubicHermiteSpline(self.times, self.sens, self.sens_derivatives, axis=0)(query_times)


class Simulator:
    '''
    RK4 method-of-steps integrator for one model

    Args:
        spec (ModelSpec): the model
        h (float): simulation step; must divide tau (defaults to the solver step / SIM_SUBSTEPS)
        sensitivities (bool): co-integrate the variational equations
    '''

    def __init__(self, spec: ModelSpec, h: Optional[float] = None, sensitivities: bool = False):
        self.spec = spec
        self.h = spec.solver.h / SIM_SUBSTEPS if h is None else h
        try:
            self.steps_per_delay = steps_in(spec.tau, self.h)
        except ValueError as exc:
            raise ConfigError(f"simulation step {self.h!r} does not divide tau = {spec.tau!r}") from exc
        self.sensitivities = sensitivities

    def _prepare(self, x0s, signals):
        spec = self.spec
        x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
        if x0s.shape[1] != spec.n:
            raise DimensionError(f"initial states need {spec.n} components, got {x0s.shape[1]}")
        if isinstance(signals, PerturbationSignal):
            signals = signals.as_batch()
        if len(signals) == 1 and len(x0s) > 1:
            signals = signals.repeat(len(x0s))
        if len(signals) != len(x0s) or signals.m != spec.m:
            raise DimensionError(
                f"{len(signals)} signals of dimension {signals.m} for {len(x0s)} states (m = {spec.m})")
        return x0s, signals

    def run(self, x0s, signals, t_end: Optional[float] = None):
        '''
        Integrate a batch of trajectories

        Args:
            x0s (array-like): initial states, shape (S, n) or (n,)
            signals (SignalBatch or PerturbationSignal): one signal per state, or one shared
            t_end (float): stop time on the grid (defaults to K*tau)

        Returns:
            (tuple): Trajectory and SensitivityTrace (None unless sensitivities were requested)

        Raises:
            SingularSensitivityError: a segment-end sensitivity matrix is singular
        '''
        spec = self.spec
        x0s, signals = self._prepare(x0s, signals)
        S, n = x0s.shape
        h = self.h
        t_end = spec.horizon if t_end is None else t_end
        try:
            total = steps_in(t_end, h)
        except ValueError as exc:
            raise ConfigError(f"end time {t_end!r} is not on the simulation grid") from exc
        steps = self.steps_per_delay
        segment_count = max(1, int(math.ceil(total / steps)))
        track = self.sensitivities

        times = [np.array([0.0])]
        states = [x0s[None]]
        exited = ~np.all((x0s >= spec.X.lo) & (x0s <= spec.X.hi), axis=1)
        trace = SensitivityTrace() if track else None
        identity = np.broadcast_to(np.eye(n), (S, n, n)).copy()
        previous = None
        x = x0s.copy()

        for k in range(segment_count):
            vector_field = spec.g if k == 0 else spec.f
            t_k = k * spec.tau
            count = min(steps, total - k * steps)
            history = lag = None
            if previous is not None:
                query = (k - 1) * spec.tau + 0.5 * h * np.arange(2 * count + 1)
                history = previous.history(query)
                if track:
                    end = previous.sens[-1]
                    if not np.all(np.isfinite(end)) or np.any(_is_singular(end)):
                        raise SingularSensitivityError("segment-end sensitivity matrix is singular", time=t_k)
                    lag = np.einsum('qsij,sjk->qsik', previous.sensitivity_history(query), np.linalg.inv(end))

            def rates(t, x_now, s_now, q):
                xtau = None if history is None else history[q]
                env = _env(vector_field, x_now, xtau, signals.at(t), t)
                dx = _columns(vector_field.eval_real(env), S)
                if not track:
                    return dx, None
                ds = _matrix(vector_field.jacobian_x, env, S) @ s_now
                if lag is not None:
                    ds = ds + _matrix(vector_field.jacobian_tau, env, S) @ lag[q]
                return dx, ds

            s = identity.copy() if track else None
            seg_x, seg_dx, seg_s, seg_ds = [x], [], [s], []
            for j in range(count):
                t = t_k + j * h
                k1, l1 = rates(t, x, s, 2 * j)
                k2, l2 = rates(t + 0.5 * h, x + 0.5 * h * k1, None if s is None else s + 0.5 * h * l1, 2 * j + 1)
                k3, l3 = rates(t + 0.5 * h, x + 0.5 * h * k2, None if s is None else s + 0.5 * h * l2, 2 * j + 1)
                k4, l4 = rates(t + h, x + h * k3, None if s is None else s + h * l3, 2 * j + 2)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if track:
                    s = s + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
                    seg_ds.append(l1)
                    seg_s.append(s)
                seg_dx.append(k1)
                seg_x.append(x)
                exited |= ~np.all((x >= spec.X.lo) & (x <= spec.X.hi), axis=1)
            end_dx, end_ds = rates(t_k + count * h, x, s, 2 * count)
            seg_dx.append(end_dx)
            seg_times = t_k + h * np.arange(count + 1)
            seg_states = np.stack(seg_x)
            if track:
                seg_ds.append(end_ds)
                trace.segment_times.append(seg_times)
                trace.matrices.append(np.stack(seg_s))
                previous = _Segment(seg_times, seg_states, np.stack(seg_dx), np.stack(seg_s), np.stack(seg_ds))
            else:
                previous = _Segment(seg_times, seg_states, np.stack(seg_dx))
            times.append(seg_times[1:])
            states.append(seg_states[1:])
            logger.debug("simulated segment %d of %d (%d samples)", k + 1, segment_count, S)

        if np.any(exited):
            logger.info("%d of %d simulated trajectories left X", int(np.sum(exited)), S)
        trajectory = Trajectory(np.concatenate(times), np.concatenate(states), exited, h)
        return trajectory, trace


def simulate_batch(spec: ModelSpec, x0s, signals: SignalBatch, h: Optional[float] = None,
                   t_end: Optional[float] = None) -> Trajectory:
    return Simulator(spec, h).run(x0s, signals, t_end)[0]


def simulate(spec: ModelSpec, x0, signal: PerturbationSignal, h: Optional[float] = None,
             t_end: Optional[float] = None) -> Trajectory:
    '''
    Simulate one trajectory

    Args:
        spec (ModelSpec): the model
        x0 (array-like): initial state
        signal (PerturbationSignal): perturbation
        h (float): simulation step (defaults to a quarter of the model's flow step)
        t_end (float): stop time (defaults to K*tau)

    Returns:
        (Trajectory): single-sample trajectory; exits from X are flagged, not fatal
    '''
    return Simulator(spec, h).run(np.asarray(x0, dtype=float)[None, :], signal, t_end)[0]


def sensitivity_flow(spec: ModelSpec, x0, signal, h: Optional[float] = None,
                     t_end: Optional[float] = None) -> SensitivityTrace:
    '''Variational matrices along the trajectory of x0 (or a batch of states).'''
    x0s = np.atleast_2d(np.asarray(x0, dtype=float))
    return Simulator(spec, h, sensitivities=True).run(x0s, signal, t_end)[1]
