'''
Set-boundary method of steps

The faces of the initial box are flowed across the K delay segments, each
face feeding its own stored enclosure back in as the delayed state. The
hull of the face boxes over-approximates the maximal reach set; shrinking
that hull until no face box meets its interior, while keeping the
propagated centre of the initial box strictly inside, under-approximates
the minimal reach set.
'''

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from ddereach.core.expr import delayed_names, input_names
from ddereach.core.interval import Box, Interval, hull_all
from ddereach.core.model import CertificateReport, ModelSpec, check_model
from ddereach.engine.flow import (
    FRAME_QR, GRID_TOLERANCE, FlowParams, Flowpipe, InputSignal, flow_segment, steps_in,
)
from ddereach.exceptions import ConfigError, ModelError

logger = logging.getLogger(__name__)

WITNESS_LABEL = 'witness'
FULL_SET_LABEL = 'I0'

STATUS_OK = 'ok'
STATUS_UNCERTIFIED = 'uncertified'
STATUS_WITNESS_BLOCKED = 'witness-blocked'
STATUS_DEGENERATE = 'degenerate'

SEPARATION_CELLS = 1 << 18


@dataclass(frozen=True)
class BoundaryPartition:
    '''
    Faces of the initial box, optionally cut into patches

    Args:
        faces (tuple of Box): patches; each has one zero-width dimension
        labels (tuple of str): one label per patch, e.g. "x1lo" or "x2hi_3"
    '''

    faces: tuple
    labels: tuple

    def __len__(self):
        return len(self.faces)

    def __iter__(self):
        return iter(zip(self.labels, self.faces))


def _pieces(interval: Interval, count: int):
    if count <= 1:
        return [interval]
    points = [interval.lo + (interval.hi - interval.lo) * i / count for i in range(count + 1)]
    points[0], points[-1] = interval.lo, interval.hi
    return [Interval(a, b) for a, b in zip(points, points[1:])]


def partition_boundary(I0: Box, subdivisions: int = 1) -> BoundaryPartition:
    '''
    Split the boundary of I0 into its 2n faces, each cut into patches

    Args:
        I0 (Box): nondegenerate initial box
        subdivisions (int): pieces per nondegenerate dimension of every face

    Returns:
        (BoundaryPartition): 2n * subdivisions**(n-1) patches covering the boundary exactly
    '''
    if I0.is_empty or any(d.is_point for d in I0):
        raise ModelError("I0 must have positive width in every dimension", 'domains')
    if subdivisions < 1:
        raise ValueError(f"subdivisions must be at least 1, got {subdivisions!r}")
    n = len(I0)
    faces = []
    labels = []
    for i in range(n):
        for side, value in (('lo', I0[i].lo), ('hi', I0[i].hi)):
            axes = [[Interval.point(value)] if j == i else _pieces(I0[j], subdivisions) for j in range(n)]
            patches = list(itertools.product(*axes))
            for k, dims in enumerate(patches):
                faces.append(Box(dims))
                labels.append(f"x{i + 1}{side}" if len(patches) == 1 else f"x{i + 1}{side}_{k}")
    return BoundaryPartition(tuple(faces), tuple(labels))


def propagate(spec: ModelSpec, partition: BoundaryPartition, h: Optional[float] = None,
              extra_sets: Sequence = (), frame: str = FRAME_QR, verbose: bool = False) -> Dict[str, Flowpipe]:
    '''
    Flow every patch (and any extra sets) over [0, K*tau] by the method of steps

    Segment [0, tau] uses g with d in D; segment [k*tau, (k+1)*tau] uses f
    with the delayed state bound, step by step, to the same pipe's tube one
    delay earlier (already intersected with X). All pipes finish segment k
    before any starts segment k+1.

    Args:
        spec (ModelSpec): the model
        partition (BoundaryPartition): patches of the initial boundary
        h (float): flow step; defaults to the model's solver step, must divide tau
        extra_sets (sequence of (label, Box)): further sets to propagate alongside

    Returns:
        (dict): label -> Flowpipe over [0, K*tau]
    '''
    h = spec.solver.h if h is None else h
    try:
        steps = steps_in(spec.tau, h)
    except ValueError as exc:
        raise ConfigError(f"step h = {h!r} must divide tau = {spec.tau!r}") from exc
    params = FlowParams(h=h, max_halvings=spec.solver.max_halvings, frame=frame, domain=spec.X)
    d_names = input_names(spec.m)
    tau_names = delayed_names(spec.n)
    perturbation = InputSignal.constant(d_names, spec.D)

    pipes = {}
    for label, box in list(partition) + list(extra_sets):
        pipes[label] = Flowpipe(label, box, 0.0)

    for k in range(spec.K):
        t0 = k * spec.tau
        for label, pipe in pipes.items():
            if k == 0:
                vector_field, signal = spec.g, perturbation
            else:
                first = (k - 1) * steps
                delayed = [pipe.tube_at(first + j) for j in range(steps)]
                vector_field, signal = spec.f, perturbation.with_channel(tau_names, delayed)
            pipe.extend(flow_segment(vector_field, pipe.current, signal, spec.tau, params,
                                     t0=t0, pipe=pipe, verbose=verbose))
        logger.log(logging.INFO if verbose else logging.DEBUG,
                   "%s: delay segment %d/%d done (%d sets)", spec.name, k + 1, spec.K, len(pipes))
    return pipes


def tip_at_time(pipe: Flowpipe, t: float) -> Box:
    '''Enclosure of the pipe's set at grid time t.'''
    if abs(t - pipe.t_start) <= GRID_TOLERANCE * max(1.0, abs(t)):
        return pipe.init
    if not pipe.segments:
        raise ValueError(f"time {t!r} is outside flowpipe {pipe.label}")
    width = pipe.segments[0].t_hi - pipe.segments[0].t_lo
    index = round((t - pipe.t_start) / width) - 1 if width > 0 else -1
    if 0 <= index < len(pipe.segments):
        segment = pipe.segments[index]
        if abs(segment.t_hi - t) <= GRID_TOLERANCE * max(1.0, abs(t)):
            return segment.tip
    raise ValueError(f"time {t!r} is not on the step grid of flowpipe {pipe.label}")


def over_approx(faces: Iterable[Flowpipe], t: float) -> Box:
    '''
    Hull of all face boxes at t

    Returns:
        (Box): covers the image of the initial boundary, hence the whole reach set
    '''
    return hull_all(tip_at_time(pipe, t) for pipe in faces)


def _cuts(U: Box, blocker: Box, witness: Box):
    '''Boxes obtained by cutting U at a side of blocker facing away from the witness.'''
    options = []
    for i in range(len(U)):
        b, w, u = blocker[i], witness[i], U[i]
        if b.lo > w.hi and b.lo < u.hi:
            options.append(U.replace(i, Interval(u.lo, b.lo)))
        if b.hi < w.lo and b.hi > u.lo:
            options.append(U.replace(i, Interval(b.hi, u.hi)))
    return options


def _score(box: Box, focus: Optional[Box]):
    kept = box.volume()
    if focus is None:
        return (kept,)
    return (box.intersect(focus).volume(), box.intersects(focus), kept)


def shrink(boundary: Sequence[Box], witness: Box, O: Box, focus: Optional[Box] = None):
    '''
    Largest-first greedy shrink of O away from the boundary boxes

    Repeatedly picks, among all boundary boxes still meeting the interior of
    U and all admissible cuts against them, the cut keeping the largest
    volume (the largest overlap with focus first, when given). The result
    U meets no boundary box in its interior and holds the witness in its
    interior, or is Empty.

    Returns:
        (tuple): (Box, status)
    '''
    if O.is_empty or witness.is_empty:
        return Box.empty(), STATUS_DEGENERATE
    if not O.interior_contains(witness):
        return Box.empty(), STATUS_WITNESS_BLOCKED
    U = O
    while True:
        best = None
        best_score = None
        for blocker in boundary:
            if not U.meets_interior(blocker):
                continue
            options = _cuts(U, blocker, witness)
            if not options:
                return Box.empty(), STATUS_WITNESS_BLOCKED
            for candidate in options:
                score = _score(candidate, focus)
                if best is None or score > best_score:
                    best, best_score = candidate, score
        if best is None:
            break
        U = best
    if not U.interior_contains(witness):
        return Box.empty(), STATUS_DEGENERATE
    return U, STATUS_OK


def under_approx(faces: Iterable[Flowpipe], t: float, witness: Flowpipe, O: Box,
                 focus: Optional[Box] = None) -> Box:
    '''
    Box inside the minimal reach set at t, or Empty

    Assumes the time-lag certificate holds and the witness starts in the
    interior of I0.
    '''
    boundary = [tip_at_time(pipe, t) for pipe in faces]
    return shrink(boundary, tip_at_time(witness, t), O, focus)[0]


def _cell_span(edges: np.ndarray, lo: float, hi: float) -> slice:
    '''Grid cells [edges[i], edges[i+1]] meeting the closed interval [lo, hi].'''
    first = int(np.searchsorted(edges[1:], lo, side='left'))
    last = int(np.searchsorted(edges[:-1], hi, side='right'))
    return slice(first, max(first, last))


def separated_from_reach(boundary: Iterable[Box], O: Box, Xu: Box,
                         max_cells: int = SEPARATION_CELLS) -> bool:
    '''
    True when Xu misses the reach set enclosed by the boundary boxes

    The reach set lies in O and its boundary lies in the union of the
    boundary boxes, so every connected piece of the complement of that
    union is wholly inside or wholly outside the reach set. Xu is outside
    when it misses every boundary box and meets a grid cell joined, through
    cells free of boundary boxes, to the rim of a grid laid over O with a
    margin. Only valid when the time-lag certificate holds.

    Args:
        boundary (Iterable[Box]): face boxes at one time
        O (Box): hull of those boxes
        Xu (Box): box to separate
        max_cells (int): cap on the grid size over all dimensions

    Returns:
        (bool): False when no separating chain was found
    '''
    boxes = [box for box in boundary if not box.is_empty]
    if not boxes or O.is_empty or Xu.is_empty:
        return False
    if any(box.intersects(Xu) for box in boxes):
        return False
    n = len(O)
    per_dim = max(2, int(max_cells ** (1.0 / n)))
    pad = np.maximum(O.width, 1e-12 * (1.0 + np.abs(O.mid))) / per_dim
    lo, hi = O.lo - pad, O.hi + pad
    if not (np.all(lo < O.lo) and np.all(hi > O.hi)):
        return False
    edges = [np.linspace(lo[i], hi[i], per_dim + 1) for i in range(n)]

    blocked = np.zeros((per_dim,) * n, dtype=bool)
    for box in boxes:
        blocked[tuple(_cell_span(edges[i], box[i].lo, box[i].hi) for i in range(n))] = True
    labels, count = ndimage.label(~blocked)
    if count == 0:
        return False

    rim = np.concatenate([
        np.concatenate([labels.take(0, axis=i).ravel(), labels.take(-1, axis=i).ravel()])
        for i in range(n)
    ])
    outside = np.unique(rim[rim > 0])
    reached = labels[tuple(_cell_span(edges[i], Xu[i].lo, Xu[i].hi) for i in range(n))]
    found = bool(np.isin(reached, outside).any())
    logger.debug("separation grid %d^%d: %d free components, %d on the rim, Xu %s",
                 per_dim, n, count, len(outside), 'outside' if found else 'not separated')
    return found


def check_domain_containment(faces: Sequence[Flowpipe], X: Box) -> bool:
    '''
    True when the reach hull at every step lies in the open interior of X

    Any clipping against X during propagation makes the answer False.
    '''
    faces = list(faces)
    if not faces:
        return False
    if any(pipe.clipped for pipe in faces):
        return False
    if not X.interior_contains(hull_all(pipe.init for pipe in faces)):
        return False
    for index in range(len(faces[0].segments)):
        if not X.interior_contains(hull_all(pipe.tube_at(index) for pipe in faces)):
            return False
    return True


@dataclass
class Checkpoint:
    '''
    Sets reported at one checkpoint time

    Args:
        t (float): time
        boundary (dict): face label -> Box enclosing that face's image
        over (Box): over-approximation of the maximal reach set
        under (Box): under-approximation of the minimal reach set, possibly Empty
        witness (Box): enclosure of the propagated centre of I0
        certified (bool): whether the time-lag certificate held
        status (str): why under is (non)empty
    '''

    t: float
    boundary: dict
    over: Box
    under: Box
    witness: Box
    certified: bool
    status: str

    def to_dict(self):
        return {
            't': self.t,
            'over': self.over.to_pairs(),
            'under': None if self.under.is_empty else self.under.to_pairs(),
            'under_empty': self.under.is_empty,
            'under_status': self.status,
            'certified': self.certified,
            'witness': self.witness.to_pairs(),
            'boundary': {label: box.to_pairs() for label, box in self.boundary.items()},
        }

    @classmethod
    def from_dict(cls, data):
        under = Box.empty() if data.get('under') is None else Box.from_pairs(data['under'])
        return cls(
            t=float(data['t']),
            boundary={label: Box.from_pairs(p) for label, p in data['boundary'].items()},
            over=Box.from_pairs(data['over']),
            under=under,
            witness=Box.from_pairs(data['witness']),
            certified=bool(data['certified']),
            status=data['under_status'],
        )


@dataclass
class ReachResult:
    '''
    Output of the set-boundary pipeline

    Pipes are only present for results computed in this process; results
    read back from JSON carry checkpoints and flags only.
    '''

    model: str
    h: float
    checkpoints: List[Checkpoint]
    certified: bool
    domain_ok: bool
    face_pipes: Dict[str, Flowpipe] = field(default_factory=dict)
    witness_pipe: Optional[Flowpipe] = None
    full_pipe: Optional[Flowpipe] = None
    certificate: Optional[CertificateReport] = None

    def checkpoint_at(self, t: float) -> Checkpoint:
        for checkpoint in self.checkpoints:
            if abs(checkpoint.t - t) <= GRID_TOLERANCE * max(1.0, abs(t)):
                return checkpoint
        raise ValueError(f"time {t!r} is not a checkpoint (have {[c.t for c in self.checkpoints]})")

    def to_dict(self):
        return {
            'model': self.model,
            'h': self.h,
            'certified': self.certified,
            'domain_ok': self.domain_ok,
            'certificate': None if self.certificate is None else self.certificate.to_dict(),
            'checkpoints': [c.to_dict() for c in self.checkpoints],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            model=data['model'],
            h=float(data['h']),
            checkpoints=[Checkpoint.from_dict(c) for c in data['checkpoints']],
            certified=bool(data['certified']),
            domain_ok=bool(data['domain_ok']),
        )


def checkpoint_times(spec: ModelSpec, h: float, extra: Iterable[float] = ()) -> List[float]:
    '''Segment boundaries k*tau plus extra times, validated against the step grid.'''
    horizon = spec.horizon
    times = [k * spec.tau for k in range(spec.K + 1)]
    for t in extra:
        if t < -GRID_TOLERANCE or t > horizon * (1 + GRID_TOLERANCE):
            raise ConfigError(f"checkpoint {t!r} lies outside [0, {horizon!r}]")
        try:
            steps_in(t, h)
        except ValueError as exc:
            raise ConfigError(f"checkpoint {t!r} is not on the step grid of h = {h!r}") from exc
        times.append(t)
    unique = []
    for t in sorted(times):
        if not unique or abs(t - unique[-1]) > GRID_TOLERANCE * max(1.0, abs(t)):
            unique.append(t)
    return unique


class ReachAnalyzer:
    '''
    Runs the whole pipeline for one model

    Args:
        spec (ModelSpec): the model
        h (float): flow step (defaults to the model's solver step)
        checkpoints (iterable of float): extra checkpoint times (added to the model's own)
        subdivisions (int): patches per face side (defaults to the model's solver setting)
        certificate (CertificateReport): reuse an existing certificate instead of recomputing
        frame (str): flow frame mode
        verbose (bool): log progress at INFO
    '''

    def __init__(self, spec: ModelSpec, h=None, checkpoints=None, subdivisions=None,
                 certificate=None, frame=FRAME_QR, verbose=False):
        self.spec = spec
        self.h = spec.solver.h if h is None else h
        extra = tuple(spec.solver.checkpoints) + tuple(checkpoints or ())
        self.times = checkpoint_times(spec, self.h, extra)
        self.subdivisions = spec.solver.subdivisions if subdivisions is None else subdivisions
        self.certificate = certificate
        self.frame = frame
        self.verbose = verbose

    def analyze(self) -> ReachResult:
        spec = self.spec
        certificate = self.certificate or check_model(spec)
        certified = certificate.certified
        partition = partition_boundary(spec.I0, self.subdivisions)
        extra = [(WITNESS_LABEL, Box.point(spec.I0.mid))]
        if not certified:
            extra.append((FULL_SET_LABEL, spec.I0))
        logger.info("%s: propagating %d boundary patches over [0, %r] with h=%r",
                    spec.name, len(partition), spec.horizon, self.h)
        pipes = propagate(spec, partition, self.h, extra, self.frame, self.verbose)
        witness = pipes.pop(WITNESS_LABEL)
        full = pipes.pop(FULL_SET_LABEL, None)

        checkpoints = []
        for t in self.times:
            boundary = {label: tip_at_time(pipe, t) for label, pipe in pipes.items()}
            witness_tip = tip_at_time(witness, t)
            if certified:
                over = hull_all(boundary.values())
                under, status = shrink(list(boundary.values()), witness_tip, over)
            else:
                over = tip_at_time(full, t)
                under, status = Box.empty(), STATUS_UNCERTIFIED
            if under.is_empty:
                logger.info("%s: under-approximation at t=%r is empty (%s)", spec.name, t, status)
            checkpoints.append(Checkpoint(t, boundary, over, under, witness_tip, certified, status))

        containment_sets = list(pipes.values()) if certified else [full]
        domain_ok = check_domain_containment(containment_sets, spec.X)
        if not domain_ok:
            logger.warning("%s: reach sets are not provably inside the interior of X", spec.name)
        return ReachResult(spec.name, self.h, checkpoints, certified, domain_ok,
                           face_pipes=pipes, witness_pipe=witness, full_pipe=full, certificate=certificate)
