'''
Sampling oracles that test the reach results against simulation

None of these prove anything; each one samples initial states and
perturbations, simulates, and lists the samples that contradict a claim.
'''

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ddereach.core.interval import Box
from ddereach.core.model import ModelSpec
from ddereach.engine.reach import Checkpoint, ReachResult
from ddereach.exceptions import SingularSensitivityError
from ddereach.validation.signals import sample_in_box, sample_on_boundary, sample_perturbations
from ddereach.validation.simulate import SIM_SUBSTEPS, Simulator

logger = logging.getLogger(__name__)

# samples simulated together in one batch
BATCH_SIZE = 250
# violations listed per report; the count is always exact
MAX_LISTED = 20
# shooting succeeds when the endpoint residual (max norm) is at most this
NEWTON_TOL = 1e-6
NEWTON_ITERATIONS = 30
NEWTON_DAMPINGS = 12
# relative forward-difference step of the shooting Jacobian
FD_STEP = 1e-7
# slack when testing that a shooting solution lies in I0
IN_SET_TOL = 1e-9
# simulation error budget: a state counts as inside U only if inside U deflated by this
EXCLUSION_MARGIN = 1e-6
# acceptable relative error between sensitivities and finite differences
GRADIENT_TOL = 1e-3
GRADIENT_STEP = 1e-6


@dataclass
class CheckReport:
    '''
    Outcome of one oracle

    Args:
        name (str): oracle name
        passed (bool): no violations
        samples (int): samples tried
        violation_count (int): total number of violations
        violations (list of dict): the first MAX_LISTED violations
        details (dict): worst-case figures
    '''

    name: str
    passed: bool = True
    samples: int = 0
    violation_count: int = 0
    violations: List[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    endpoints: Dict[float, np.ndarray] = field(default_factory=dict, repr=False)

    def add_violation(self, **violation):
        self.passed = False
        self.violation_count += 1
        if len(self.violations) < MAX_LISTED:
            self.violations.append(violation)

    def add_violations(self, hits, describe):
        '''Record every row of an index array, listing only the first few via describe(row).'''
        hits = np.asarray(hits)
        if len(hits) == 0:
            return
        self.passed = False
        room = max(0, MAX_LISTED - len(self.violations))
        self.violations.extend(describe(row) for row in hits[:room])
        self.violation_count += len(hits)

    def to_dict(self):
        return {
            'name': self.name,
            'passed': self.passed,
            'samples': self.samples,
            'violation_count': self.violation_count,
            'violations': self.violations,
            'details': self.details,
        }

    def summary(self):
        verdict = 'PASS' if self.passed else 'FAIL'
        return f"{self.name}: {verdict} ({self.samples} samples, {self.violation_count} violations)"


def _rng(spec: ModelSpec, seed):
    return np.random.RandomState(spec.solver.seed if seed is None else seed)


def _chunks(total):
    start = 0
    while start < total:
        yield start, min(BATCH_SIZE, total - start)
        start += BATCH_SIZE


def _sim_step(result: Optional[ReachResult], spec: ModelSpec, h):
    if h is not None:
        return h
    flow_h = spec.solver.h if result is None else result.h
    return flow_h / SIM_SUBSTEPS


def _rows_inside(states, box: Box):
    return np.all((states >= box.lo) & (states <= box.hi), axis=1)


def _rows_in_interior(states, box: Box, margin):
    return np.all((states > box.lo + margin) & (states < box.hi - margin), axis=1)


def check_homeomorphism(spec: ModelSpec, sample_count: Optional[int] = None, seed: Optional[int] = None,
                        h: Optional[float] = None) -> CheckReport:
    '''
    Sample the sensitivity matrices and test the dominance, norm and inverse-margin bounds

    Every segment of every sampled (x0, d) is checked for positive
    dominance margins, infinity norm at most R and largest inverse margin
    at most epsilon.

    Args:
        spec (ModelSpec): the model (its R and epsilon are the bounds tested)
        sample_count (int): number of (x0, d) samples (defaults to the solver setting)
        seed (int): RNG seed (defaults to the solver setting)
        h (float): simulation step

    Returns:
        (CheckReport): worst margin, norm, inverse margin and smallest |det|
    '''
    sample_count = spec.solver.samples if sample_count is None else sample_count
    rng = _rng(spec, seed)
    simulator = Simulator(spec, _sim_step(None, spec, h), sensitivities=True)
    report = CheckReport('homeomorphism', samples=sample_count)
    worst_margin, worst_norm, worst_inverse, min_det = np.inf, 0.0, 0.0, np.inf

    for start, count in _chunks(sample_count):
        x0s = sample_in_box(spec.I0, count, rng)
        signals = sample_perturbations(spec.D, spec.L, spec.horizon, count, rng)
        try:
            with np.errstate(all='ignore'):
                _, trace = simulator.run(x0s, signals)
        except SingularSensitivityError as exc:
            report.add_violation(kind='singular', samples=[start, start + count - 1], t=exc.time)
            continue
        for k in range(trace.segments):
            times = trace.segment_times[k]
            with np.errstate(all='ignore'):
                margins = trace.margins(k).min(axis=-1)
                norms = trace.norms(k)
                inverse = np.where(margins > 0, 1.0 / margins, np.inf)
                dets = np.abs(trace.determinants(k))
            margins = np.where(np.isnan(margins), -np.inf, margins)
            norms = np.where(np.isnan(norms), np.inf, norms)
            worst_margin = min(worst_margin, float(margins.min()))
            worst_norm = max(worst_norm, float(norms.max()))
            worst_inverse = max(worst_inverse, float(inverse.max()))
            min_det = min(min_det, float(np.nanmin(dets)) if np.any(np.isfinite(dets)) else 0.0)
            checks = (('not-dominant', margins <= 0, margins),
                      ('norm-above-R', norms > spec.R, norms),
                      ('inverse-margin-above-epsilon', inverse > spec.epsilon, inverse))
            for kind, bad, values in checks:
                report.add_violations(np.argwhere(bad), lambda row, kind=kind, values=values: {
                    'kind': kind, 'sample': start + int(row[1]), 't': float(times[row[0]]),
                    'value': float(values[row[0], row[1]])})

    report.details = {
        'R': spec.R,
        'epsilon': spec.epsilon,
        'worst_margin': worst_margin,
        'worst_norm': worst_norm,
        'worst_inverse_margin': worst_inverse,
        'min_abs_det': min_det,
    }
    logger.info(report.summary())
    return report


def check_over(spec: ModelSpec, result: ReachResult, sample_count: Optional[int] = None,
               seed: Optional[int] = None, h: Optional[float] = None) -> CheckReport:
    '''Simulated states from I0 must lie in the over-approximation at every checkpoint.'''
    sample_count = spec.solver.samples if sample_count is None else sample_count
    rng = _rng(spec, seed)
    simulator = Simulator(spec, _sim_step(result, spec, h))
    t_end = max(c.t for c in result.checkpoints)
    report = CheckReport('over', samples=sample_count)
    exited = 0
    for start, count in _chunks(sample_count):
        x0s = sample_in_box(spec.I0, count, rng)
        signals = sample_perturbations(spec.D, spec.L, spec.horizon, count, rng)
        with np.errstate(all='ignore'):
            trajectory, _ = simulator.run(x0s, signals, t_end)
        exited += int(np.sum(trajectory.exited))
        for checkpoint in result.checkpoints:
            states = trajectory.at(checkpoint.t)
            report.endpoints.setdefault(checkpoint.t, []).append(states)
            report.add_violations(np.nonzero(~_rows_inside(states, checkpoint.over))[0], lambda s: {
                'sample': start + int(s), 't': checkpoint.t, 'state': states[s].tolist()})
    report.endpoints = {t: np.concatenate(parts) for t, parts in report.endpoints.items()}
    report.details = {'checkpoints': len(result.checkpoints), 'exited_X': exited}
    logger.info(report.summary())
    return report


class _Shooter:
    '''Damped Newton shooting for x0 with phi(t; x0, d) = target, vectorised over targets.'''

    def __init__(self, simulator: Simulator, signal, t: float):
        self.simulator = simulator
        self.signal = signal
        self.t = t

    def phi(self, x0s):
        with np.errstate(all='ignore'):
            trajectory, _ = self.simulator.run(x0s, self.signal, self.t)
        return trajectory.endpoint

    def _jacobians(self, xs, base):
        P, n = xs.shape
        steps = FD_STEP * np.maximum(1.0, np.abs(xs))
        shifted = np.repeat(xs[:, None, :], n, axis=1) + steps[:, :, None] * np.eye(n)[None]
        values = self.phi(shifted.reshape(P * n, n)).reshape(P, n, n)
        # values[p, j] is phi at x + step_j e_j; the Jacobian column j is its difference quotient
        return ((values - base[:, None, :]) / steps[:, :, None]).transpose(0, 2, 1)

    def solve(self, targets, guess):
        x = np.array(guess, dtype=float)
        values = self.phi(x)
        residual = np.max(np.abs(values - targets), axis=1)
        residual = np.where(np.isnan(residual), np.inf, residual)
        for _ in range(NEWTON_ITERATIONS):
            active = np.nonzero((residual > NEWTON_TOL) & np.isfinite(residual))[0]
            if len(active) == 0:
                break
            try:
                with np.errstate(all='ignore'):
                    jacobians = self._jacobians(x[active], values[active])
                    delta = np.einsum('pij,pj->pi', np.linalg.pinv(jacobians),
                                      targets[active] - values[active])
            except np.linalg.LinAlgError:
                break
            pending = np.arange(len(active))
            scale = np.ones(len(active))
            progressed = False
            for _ in range(NEWTON_DAMPINGS):
                rows = active[pending]
                trial = x[rows] + scale[pending, None] * delta[pending]
                trial_values = self.phi(trial)
                trial_residual = np.max(np.abs(trial_values - targets[rows]), axis=1)
                better = trial_residual < residual[rows]
                accepted = rows[better]
                x[accepted] = trial[better]
                values[accepted] = trial_values[better]
                residual[accepted] = trial_residual[better]
                progressed = progressed or bool(np.any(better))
                pending = pending[~better]
                if len(pending) == 0:
                    break
                scale[pending] *= 0.5
            if not progressed:
                break
        return x, residual


def check_under(spec: ModelSpec, result: ReachResult, d_samples: Optional[int] = None,
                test_points: Optional[Sequence] = None, seed: Optional[int] = None,
                times: Optional[Sequence[float]] = None, h: Optional[float] = None) -> CheckReport:
    '''
    Shooting test of the under-approximation

    For each tested checkpoint and each sampled perturbation d, every test
    point x (the corners and the centre of U unless given) must be hit by
    some x0 in I0: damped Newton with finite-difference Jacobians has to
    reach residual NEWTON_TOL with x0 inside I0.

    Args:
        spec (ModelSpec): the model
        result (ReachResult): reach output with the U boxes
        d_samples (int): perturbations per checkpoint (defaults to the solver setting)
        test_points (sequence): explicit points, used at every tested checkpoint
        seed (int): RNG seed
        times (sequence of float): checkpoints to test (defaults to all with nonempty U)
        h (float): simulation step

    Returns:
        (CheckReport): one violation per (checkpoint, d, point) that was not certified
    '''
    d_samples = spec.solver.d_samples if d_samples is None else d_samples
    rng = _rng(spec, seed)
    simulator = Simulator(spec, _sim_step(result, spec, h))
    if times is None:
        selected = [c for c in result.checkpoints if not c.under.is_empty]
    else:
        selected = [result.checkpoint_at(t) for t in times]
    allowed = spec.I0.inflate(IN_SET_TOL)
    report = CheckReport('under')
    worst = 0.0
    for checkpoint in selected:
        points = _test_points(checkpoint, test_points)
        if points is None:
            logger.info("t=%r: under-approximation is empty, nothing to shoot at", checkpoint.t)
            continue
        signals = sample_perturbations(spec.D, spec.L, spec.horizon, d_samples, rng)
        guess = np.repeat(spec.I0.mid[None, :], len(points), axis=0)
        for i in range(d_samples):
            shooter = _Shooter(simulator, signals.take([i]), checkpoint.t)
            x0s, residuals = shooter.solve(points, guess)
            report.samples += len(points)
            worst = max(worst, float(np.max(residuals)))
            inside = _rows_inside(x0s, allowed)
            for p in range(len(points)):
                if residuals[p] > NEWTON_TOL:
                    reason = 'no-convergence'
                elif not inside[p]:
                    reason = 'outside-I0'
                else:
                    continue
                report.add_violation(t=checkpoint.t, d_sample=i, point=points[p].tolist(),
                                     x0=x0s[p].tolist(), residual=float(residuals[p]), reason=reason)
        logger.info("t=%r: shot %d points under %d perturbations", checkpoint.t, len(points), d_samples)
    report.details = {'checkpoints': [c.t for c in selected], 'worst_residual': worst}
    logger.info(report.summary())
    return report


def _test_points(checkpoint: Checkpoint, test_points):
    if test_points is not None:
        return np.atleast_2d(np.asarray(test_points, dtype=float))
    if checkpoint.under.is_empty:
        return None
    return np.vstack([checkpoint.under.corners(), checkpoint.under.mid[None, :]])


def check_boundary_exclusion(spec: ModelSpec, result: ReachResult, sample_count: Optional[int] = None,
                             seed: Optional[int] = None, h: Optional[float] = None) -> CheckReport:
    '''States started on the boundary of I0 must stay out of the interior of U.'''
    sample_count = spec.solver.samples if sample_count is None else sample_count
    rng = _rng(spec, seed)
    simulator = Simulator(spec, _sim_step(result, spec, h))
    selected = [c for c in result.checkpoints if not c.under.is_empty]
    report = CheckReport('boundary-exclusion', samples=sample_count)
    if not selected:
        report.details = {'checkpoints': []}
        return report
    t_end = max(c.t for c in selected)
    for start, count in _chunks(sample_count):
        x0s = sample_on_boundary(spec.I0, count, rng)
        signals = sample_perturbations(spec.D, spec.L, spec.horizon, count, rng)
        with np.errstate(all='ignore'):
            trajectory, _ = simulator.run(x0s, signals, t_end)
        for checkpoint in selected:
            states = trajectory.at(checkpoint.t)
            hits = np.nonzero(_rows_in_interior(states, checkpoint.under, EXCLUSION_MARGIN))[0]
            report.add_violations(hits, lambda s: {
                'sample': start + int(s), 't': checkpoint.t, 'state': states[s].tolist(), 'x0': x0s[s].tolist()})
    report.details = {'checkpoints': [c.t for c in selected], 'margin': EXCLUSION_MARGIN}
    logger.info(report.summary())
    return report


def check_gradient(spec: ModelSpec, sample_count: int = 3, seed: Optional[int] = None,
                   t: Optional[float] = None, h: Optional[float] = None) -> CheckReport:
    '''
    Compare composed sensitivities with central finite differences of the flow

    Args:
        spec (ModelSpec): the model
        sample_count (int): sampled (x0, d) pairs
        seed (int): RNG seed
        t (float): comparison time (defaults to K*tau)
        h (float): simulation step

    Returns:
        (CheckReport): largest relative error in details['worst_relative_error']
    '''
    rng = _rng(spec, seed)
    t = spec.horizon if t is None else t
    step = _sim_step(None, spec, h)
    plain = Simulator(spec, step)
    tracked = Simulator(spec, step, sensitivities=True)
    n = spec.n
    report = CheckReport('gradient', samples=sample_count)
    worst = 0.0
    x0s = sample_in_box(spec.I0, sample_count, rng)
    signals = sample_perturbations(spec.D, spec.L, spec.horizon, sample_count, rng)
    for i in range(sample_count):
        signal = signals.take([i])
        _, trace = tracked.run(x0s[i:i + 1], signal, t)
        analytic = trace.flow_jacobian(t)
        offsets = GRADIENT_STEP * np.maximum(1.0, np.abs(x0s[i]))
        shifted = np.vstack([x0s[i] + np.diag(offsets), x0s[i] - np.diag(offsets)])
        ends = plain.run(shifted, signal, t)[0].endpoint
        numeric = ((ends[:n] - ends[n:]) / (2.0 * offsets[:, None])).T
        error = float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12))
        worst = max(worst, error)
        if error > GRADIENT_TOL:
            report.add_violation(sample=i, t=t, relative_error=error)
    report.details = {'t': t, 'worst_relative_error': worst}
    logger.info(report.summary())
    return report
