'''
Validated interval integration of an ODE with interval-valued input channels

The engine is a first-order mean-value method. Each step first proves an
a priori enclosure B with the Picard test x + [0,h]*F(B) ⊆ B, then
encloses the endpoint as

    tip = (c + h*F(B_c)) + (I + h*J(B)*Sigma) * (x - c)

where c is a point of x, B_c an a priori enclosure of the trajectory from
c, J the interval Jacobian over B and Sigma an enclosure of the
sensitivity over the step. Inputs (perturbations, delayed states) are
arbitrary signals inside their per-step boxes.

Along a flowpipe the state is kept in a local frame c + A*r, with A
re-orthogonalised by a pivoted QR factorisation each step, which keeps
the wrapping of rotating/shearing dynamics under control. Every reported
set is a Box.
'''

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ddereach.core.expr import TIME_VAR, VectorField
from ddereach.core.interval import (
    Box, Interval, IntervalMatrix, add_down, add_up, inf_norm, mul_up,
)
from ddereach.exceptions import DomainExitError, StepSizeError

logger = logging.getLogger(__name__)

FRAME_QR = 'qr'
FRAME_BOX = 'box'

# Picard rounds before a step is declared too large
APRIORI_ROUNDS = 12
# relative widening applied after a failed Picard round
INFLATE_RELATIVE = 0.1
INFLATE_ABSOLUTE = 1e-14
DEFAULT_MAX_HALVINGS = 10
# verified-inverse residual above which the QR frame is abandoned for one step
MAX_INVERSE_RESIDUAL = 0.25
# tolerance when checking that a duration is a whole number of steps
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FlowParams:
    '''
    Integration settings

    Args:
        h (float): step size
        max_halvings (int): adaptive halvings tried on an enclosure failure
        frame (str): FRAME_QR (default) or FRAME_BOX
        domain (Box): viable domain X; every tube and tip is intersected with it
    '''

    h: float
    max_halvings: int = DEFAULT_MAX_HALVINGS
    frame: str = FRAME_QR
    domain: Optional[Box] = None


@dataclass(frozen=True)
class InputChannel:
    '''
    One input of the field: a group of variables and their per-step boxes

    A channel holding a single box is constant over the whole segment.
    '''

    names: tuple
    boxes: tuple

    def at(self, index):
        if len(self.boxes) == 1:
            return self.boxes[0]
        if not 0 <= index < len(self.boxes):
            raise IndexError(f"input channel {self.names} has no box for step {index}")
        return self.boxes[index]


@dataclass(frozen=True)
class InputSignal:
    '''Input channels sharing the flow step grid of one segment.'''

    channels: tuple = ()

    @classmethod
    def constant(cls, names, box: Box):
        return cls((InputChannel(tuple(names), (box,)),))

    def with_channel(self, names, boxes: Sequence[Box]):
        return InputSignal(self.channels + (InputChannel(tuple(names), tuple(boxes)),))

    def env_at(self, index) -> dict:
        env = {}
        for channel in self.channels:
            env.update(zip(channel.names, channel.at(index).dims))
        return env


@dataclass(frozen=True)
class FlowSegment:
    t_lo: float
    t_hi: float
    tube: Box
    tip: Box
    clipped: bool = False


@dataclass
class Frame:
    '''Affine set representation center + basis * coords.'''

    center: np.ndarray
    basis: np.ndarray
    coords: Box

    @classmethod
    def around(cls, box: Box):
        center = box.mid
        return cls(center, np.eye(len(box)), box - Box.point(center))

    def enclosure(self) -> Box:
        return IntervalMatrix.from_array(self.basis) @ self.coords + Box.point(self.center)


@dataclass
class Flowpipe:
    '''
    Time-ordered enclosure segments of one propagated set

    Args:
        label (str): which face, patch or set is propagated
        init (Box): the initial set at t_start
        segments (list of FlowSegment): contiguous steps
    '''

    label: str
    init: Box
    t_start: float = 0.0
    segments: list = field(default_factory=list)
    frame: Optional[Frame] = field(default=None, repr=False)
    current: Optional[Box] = field(default=None, repr=False)

    def __post_init__(self):
        if self.current is None:
            self.current = self.init

    def __len__(self):
        return len(self.segments)

    @property
    def t_end(self):
        return self.segments[-1].t_hi if self.segments else self.t_start

    @property
    def final_tip(self) -> Box:
        return self.segments[-1].tip if self.segments else self.init

    @property
    def clipped(self) -> bool:
        return any(s.clipped for s in self.segments)

    def tube_at(self, index) -> Box:
        return self.segments[index].tube

    def tip_at(self, index) -> Box:
        '''Tip at the end of step index; index -1 means the initial set.'''
        if index < 0:
            return self.init
        return self.segments[index].tip

    def append(self, segment: FlowSegment):
        if self.segments and abs(segment.t_lo - self.t_end) > GRID_TOLERANCE * max(1.0, abs(self.t_end)):
            raise ValueError(f"flowpipe {self.label}: segment starts at {segment.t_lo}, expected {self.t_end}")
        self.segments.append(segment)
        self.current = segment.tip

    def extend(self, other: Flowpipe):
        for segment in other.segments:
            self.append(segment)
        self.frame = other.frame
        self.current = other.current

    def to_csv(self, stream):
        '''One row per segment: t_lo, t_hi, then lo/hi of the tube per dimension.'''
        writer = csv.writer(stream, lineterminator='\n')
        n = len(self.init)
        writer.writerow(['t_lo', 't_hi'] + [f"x{i + 1}_{side}" for i in range(n) for side in ('lo', 'hi')])
        for segment in self.segments:
            row = [segment.t_lo, segment.t_hi]
            for d in segment.tube:
                row += [d.lo, d.hi]
            writer.writerow([format(v, '.17g') for v in row])


# ── field evaluation ──

def _env(vector_field: VectorField, x: Box, inputs: Mapping, t: Interval):
    env = dict(inputs)
    env.update(zip(vector_field.state_vars, x.dims))
    env[TIME_VAR] = t
    return env


def field_box(vector_field: VectorField, x: Box, inputs: Mapping, t: Interval) -> Box:
    return Box(vector_field.eval_interval(_env(vector_field, x, inputs, t)))


def jacobian_box(vector_field: VectorField, x: Box, inputs: Mapping, t: Interval) -> IntervalMatrix:
    env = _env(vector_field, x, inputs, t)
    return IntervalMatrix([[e.eval_interval(env) for e in row] for row in vector_field.jacobian_x])


def _step_time(t0, h):
    return Interval(t0, add_up(t0, h))


def _widen(box: Box) -> Box:
    amounts = INFLATE_RELATIVE * box.width + INFLATE_ABSOLUTE * (1.0 + np.maximum(np.abs(box.lo), np.abs(box.hi)))
    return box.inflate(amounts)


def _apriori(vector_field, x, inputs, h, t0):
    hs = Interval(0.0, h)
    t = _step_time(t0, h)
    candidate = x + field_box(vector_field, x, inputs, t).scale(hs)
    B = candidate
    for _ in range(APRIORI_ROUNDS):
        FB = field_box(vector_field, B, inputs, t)
        candidate = x + FB.scale(hs)
        if candidate.issubset(B):
            return B, FB
        B = _widen(B.hull(candidate))
    raise StepSizeError("no a priori enclosure found", time=t0)


def apriori_enclosure(vector_field: VectorField, x: Box, inputs: Mapping, h: float, t0: float = 0.0) -> Box:
    '''
    Box B containing every solution over [t0, t0+h] that starts in x

    Args:
        vector_field (VectorField): right-hand side
        x (Box): states at t0
        inputs (dict): variable name -> Interval for the input channels over the step
        h (float): step size, > 0

    Returns:
        (Box): B with x + [0,h]*F(B) ⊆ B

    Raises:
        StepSizeError: the Picard test kept failing after iterative inflation
    '''
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")
    return _apriori(vector_field, x, inputs, h, t0)[0]


def _sensitivity_enclosure(J: IntervalMatrix, h: float, t0: float) -> IntervalMatrix:
    n = J.shape[0]
    identity = IntervalMatrix.identity(n)
    hs = Interval(0.0, h)
    sigma = identity + J.scale(hs)
    for _ in range(APRIORI_ROUNDS):
        candidate = identity + (J @ sigma).scale(hs)
        if candidate.issubset(sigma):
            return sigma
        spread = max(e.width for row in sigma.rows for e in row)
        sigma = sigma.hull(candidate).inflate(INFLATE_RELATIVE * spread + INFLATE_ABSOLUTE)
    raise StepSizeError("no sensitivity enclosure found", time=t0)


def _mean_value_parts(vector_field, Y, center, inputs, h, t0):
    '''Shared pieces of one mean-value step from the box Y around the point center.'''
    point = Box.point(center)
    # the mean-value segments run from center to every point of Y
    B, FB = _apriori(vector_field, Y.hull(point), inputs, h, t0)
    _, FBc = _apriori(vector_field, point, inputs, h, t0)
    hh = Interval.point(h)
    C = point + FBc.scale(hh)
    J = jacobian_box(vector_field, B, inputs, _step_time(t0, h))
    sigma = _sensitivity_enclosure(J, h, t0)
    S = IntervalMatrix.identity(len(Y)) + (J @ sigma).scale(hh)
    tube = Y + FB.scale(Interval(0.0, h))
    euler = Y + FB.scale(hh)
    return C, S, tube, euler


def _tighten(tube, *enclosures):
    tip = tube
    for enclosure in enclosures:
        narrowed = tip.intersect(enclosure)
        if narrowed.is_empty:
            logger.warning("disjoint enclosures while tightening a step; keeping the wider one")
            continue
        tip = narrowed
    return tip


def step(vector_field: VectorField, x: Box, inputs: Mapping, h: float, t0: float = 0.0,
         domain: Optional[Box] = None):
    '''
    One mean-value step on boxes

    Args:
        vector_field (VectorField): right-hand side
        x (Box): states at t0
        inputs (dict): variable name -> Interval of every input over the step
        h (float): step size
        domain (Box): optional viable domain intersected with both results

    Returns:
        (tuple): (tip, tube) with tip ⊇ all states at t0+h and tube ⊇ all states over the step
    '''
    center = x.mid
    C, S, tube, euler = _mean_value_parts(vector_field, x, center, inputs, h, t0)
    mean_value = C + S @ (x - Box.point(center))
    tip = _tighten(tube, euler, mean_value)
    if domain is not None:
        tube = tube.intersect(domain)
        tip = tip.intersect(domain)
        if tube.is_empty or tip.is_empty:
            raise DomainExitError("enclosure left the domain", time=t0 + h)
    return tip, tube


def _verified_inverse(basis: np.ndarray) -> Optional[IntervalMatrix]:
    '''Interval matrix containing the exact inverse of an orthogonal-ish basis, or None.'''
    approx = basis.T.copy()
    point_basis = IntervalMatrix.from_array(basis)
    point_approx = IntervalMatrix.from_array(approx)
    residual = IntervalMatrix.identity(len(basis)) - point_approx @ point_basis
    rho = inf_norm(residual)
    if rho >= MAX_INVERSE_RESIDUAL:
        return None
    spread = mul_up(mul_up(rho, inf_norm(point_approx)), 1.0 / (1.0 - rho) * (1.0 + 1e-15))
    return point_approx.inflate(spread) if spread > 0 else point_approx


def _qr_basis(M: IntervalMatrix, coords: Box) -> np.ndarray:
    mid = M.mid()
    weights = np.linalg.norm(mid, axis=0) * coords.width
    order = np.argsort(-weights, kind='stable')
    q, _ = np.linalg.qr(mid[:, order])
    return q


class FlowIntegrator:
    '''
    Drives mean-value steps along a flowpipe, with frames and adaptive halving

    Args:
        vector_field (VectorField): right-hand side
        params (FlowParams): step size, halvings, frame mode and domain
        verbose (bool): log per-step progress at INFO instead of DEBUG
    '''

    def __init__(self, vector_field: VectorField, params: FlowParams, verbose=False):
        self.field = vector_field
        self.params = params
        self.verbose = verbose

    def _log(self, message, *args):
        logger.log(logging.INFO if self.verbose else logging.DEBUG, message, *args)

    def _advance(self, frame: Frame, Y: Box, inputs, h, t0):
        C, S, tube, euler = _mean_value_parts(self.field, Y, frame.center, inputs, h, t0)
        M = S @ IntervalMatrix.from_array(frame.basis)
        mean_value = C + M @ frame.coords
        tip = _tighten(tube, euler, mean_value)

        new_center = C.mid
        shift = C - Box.point(new_center)
        inverse = None
        if self.params.frame == FRAME_QR:
            basis = _qr_basis(M, frame.coords)
            inverse = _verified_inverse(basis)
        if inverse is None:
            new_frame = Frame(tip.mid, np.eye(len(tip)), tip - Box.point(tip.mid))
        else:
            coords = inverse @ shift + (inverse @ M) @ frame.coords
            new_frame = Frame(new_center, basis, coords)
            tip = _tighten(tip, new_frame.enclosure())
        return new_frame, tip, tube

    def _advance_adaptive(self, frame, Y, inputs, h, t0, depth):
        try:
            return self._advance(frame, Y, inputs, h, t0)
        except StepSizeError:
            if depth >= self.params.max_halvings:
                raise StepSizeError(
                    f"step failed after {depth} halvings (h = {h!r})", time=t0) from None
            self._log("halving step at t=%r (depth %d)", t0, depth + 1)
            half = 0.5 * h
            frame, Y1, tube1 = self._advance_adaptive(frame, Y, inputs, half, t0, depth + 1)
            Y1 = self._clip(Y1, t0 + half)
            frame, Y2, tube2 = self._advance_adaptive(frame, Y1, inputs, half, t0 + half, depth + 1)
            return frame, Y2, tube1.hull(tube2)

    def _clip(self, box, t, label=None):
        domain = self.params.domain
        if domain is None:
            return box
        clipped = box.intersect(domain)
        if clipped.is_empty:
            raise DomainExitError("enclosure left the domain", time=t, label=label)
        return clipped

    def run(self, pipe: Flowpipe, inputs: InputSignal, steps: int, t0: float):
        h = self.params.h
        frame = pipe.frame or Frame.around(pipe.current)
        Y = pipe.current
        for j in range(steps):
            t_lo = t0 + j * h
            t_hi = t0 + (j + 1) * h
            frame, tip, tube = self._advance_adaptive(frame, Y, inputs.env_at(j), h, t_lo, 0)
            clipped = False
            if self.params.domain is not None:
                clipped = not (tube.issubset(self.params.domain) and tip.issubset(self.params.domain))
                tube = self._clip(tube, t_hi, pipe.label)
                tip = self._clip(tip, t_hi, pipe.label)
                if clipped:
                    self._log("%s clipped to the domain at t=%r", pipe.label, t_hi)
            tip = _tighten(tube, tip)
            pipe.append(FlowSegment(t_lo, t_hi, tube, tip, clipped))
            Y = tip
        pipe.frame = frame
        self._log("%s reached t=%r, tip width %r", pipe.label, pipe.t_end, pipe.final_tip.max_width)
        return pipe


def steps_in(duration: float, h: float) -> int:
    '''Number of steps of size h in duration; ValueError when it is not whole.'''
    count = round(duration / h)
    if count < 0 or abs(count * h - duration) > GRID_TOLERANCE * max(1.0, abs(duration)):
        raise ValueError(f"duration {duration!r} is not a multiple of the step {h!r}")
    return int(count)


def flow_segment(vector_field: VectorField, init: Box, inputs: InputSignal, duration: float,
                 params: FlowParams, t0: float = 0.0, label: str = 'set',
                 pipe: Optional[Flowpipe] = None, verbose: bool = False) -> Flowpipe:
    '''
    Flow a set over [t0, t0 + duration]

    Args:
        vector_field (VectorField): right-hand side
        init (Box): initial set (ignored when continuing an existing pipe)
        inputs (InputSignal): per-step input boxes
        duration (float): a whole number of steps
        params (FlowParams): integration settings
        pipe (Flowpipe): continue this flowpipe (keeps its frame) instead of starting anew

    Returns:
        (Flowpipe): the new segments; every true trajectory stays inside the tubes

    Raises:
        StepSizeError: adaptive halving exhausted (carries the time)
        DomainExitError: an enclosure no longer meets the domain
    '''
    steps = steps_in(duration, params.h)
    source = pipe if pipe is not None else Flowpipe(label, init, t0)
    result = Flowpipe(source.label, source.current, t0, frame=source.frame, current=source.current)
    if steps == 0:
        result.segments.append(FlowSegment(t0, t0, source.current, source.current))
        return result
    return FlowIntegrator(vector_field, params, verbose).run(result, inputs, steps, t0)
