'''
Problem description for a perturbed delay system: model files, Jacobian
norm bounds, and the time-lag certificate
'''

from __future__ import annotations

import configparser
import itertools
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from ddereach.core.expr import (
    KIND_DELAYED, KIND_PRE_DELAY, TIME_VAR, VectorField, delayed_names, input_names, state_names,
)
from ddereach.core.interval import Box, Interval, add_up
from ddereach.exceptions import ExprSyntaxError, ModelError

logger = logging.getLogger(__name__)

DEFAULT_R = 2.0
DEFAULT_EPSILON = 2.0
# default flow step as a fraction of tau
DEFAULT_STEPS_PER_DELAY = 10
DEFAULT_SAMPLES = 1000
DEFAULT_D_SAMPLES = 20
DEFAULT_MAX_HALVINGS = 10
# per-row cap on the number of cells visited by subdivided Jacobian bounds
MAX_JACOBIAN_CELLS = 20000

SECTIONS = ('system', 'dynamics', 'domains', 'certificate', 'solver', 'safety')

_BOX_PART = re.compile(r'\[\s*([^,\]]+?)\s*,\s*([^,\]]+?)\s*\]')
_BOX_SEPARATOR = re.compile(r'^\s*[x×]\s*')


@dataclass(frozen=True)
class SolverParams:
    '''
    Numerical knobs read from the [solver] section

    Args:
        h (float): validated-flow step; must divide tau
        checkpoints (tuple of float): extra checkpoint times besides the k*tau boundaries
        subdivisions (int): patches per face side when partitioning the initial boundary
        samples (int): Monte-Carlo sample count for the validation oracles
        seed (int): RNG seed for all sampling
        d_samples (int): perturbations sampled by the under-approximation check
        max_halvings (int): adaptive step halvings before a step-size failure
    '''

    h: float
    checkpoints: tuple = ()
    subdivisions: int = 1
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    d_samples: int = DEFAULT_D_SAMPLES
    max_halvings: int = DEFAULT_MAX_HALVINGS


@dataclass(frozen=True)
class SafetyQuery:
    Xu: Box
    t: float


@dataclass(frozen=True)
class ModelSpec:
    '''
    Full problem description

    Dynamics are g on [0, tau] and f on [tau, K*tau]; X is the viable
    domain, D the perturbation range and I0 the initial set.
    '''

    n: int
    m: int
    g: VectorField
    f: VectorField
    tau: float
    K: int
    X: Box
    D: Box
    I0: Box
    L: float = 0.0
    R: float = DEFAULT_R
    epsilon: float = DEFAULT_EPSILON
    solver: Optional[SolverParams] = None
    overrides: dict = field(default_factory=dict, compare=False, hash=False)
    jacobian_subdivisions: int = 0
    safety: Optional[SafetyQuery] = None
    name: str = 'model'

    def __post_init__(self):
        if self.solver is None:
            object.__setattr__(self, 'solver', SolverParams(h=self.tau / DEFAULT_STEPS_PER_DELAY))
        validate_spec(self)

    @property
    def horizon(self):
        return self.K * self.tau

    def with_changes(self, **changes):
        return replace(self, **changes)


def validate_spec(spec: ModelSpec):
    '''Check every ModelSpec invariant, raising ModelError with a named reason.'''
    if spec.n < 1:
        raise ModelError("n must be at least 1", 'system')
    if spec.m < 1:
        raise ModelError("m must be at least 1", 'system')
    if spec.K < 2:
        raise ModelError("K must be at least 2", 'system')
    if not spec.tau > 0:
        raise ModelError("tau must be positive", 'system')
    if not spec.L >= 0:
        raise ModelError("L must be nonnegative", 'system')
    if not spec.R > 1:
        raise ModelError("R must be greater than 1", 'certificate')
    if not spec.epsilon > 1:
        raise ModelError("epsilon must be greater than 1", 'certificate')
    if spec.g.n != spec.n or spec.f.n != spec.n:
        raise ModelError(f"dynamics need exactly {spec.n} components for g and for f", 'dynamics')
    if spec.g.kind != KIND_PRE_DELAY or spec.g.uses_delay():
        raise ModelError("g must not reference delayed variables", 'dynamics')
    for name, box, size in (('X', spec.X, spec.n), ('I0', spec.I0, spec.n), ('D', spec.D, spec.m)):
        if box.is_empty or len(box) != size:
            raise ModelError(f"{name} must be a box of dimension {size}", 'domains')
    if not spec.I0.issubset(spec.X):
        raise ModelError("I0 must be contained in X", 'domains')
    if not spec.solver.h > 0:
        raise ModelError("h must be positive", 'solver')
    if spec.solver.subdivisions < 1:
        raise ModelError("subdivisions must be at least 1", 'solver')
    if spec.jacobian_subdivisions < 0:
        raise ModelError("jacobian_subdivisions must be nonnegative", 'certificate')
    if spec.safety is not None and len(spec.safety.Xu) != spec.n:
        raise ModelError(f"Xu must be a box of dimension {spec.n}", 'safety')


# ── model file loading ──

def parse_box(text: str) -> Box:
    '''
    Parse a box literal "[a,b]x[c,d]x..."

    Args:
        text (str): the literal; "x" or "×" separate the factors

    Returns:
        (Box): one interval per bracketed pair
    '''
    pairs = []
    rest = text.strip()
    while rest:
        if pairs:
            sep = _BOX_SEPARATOR.match(rest)
            if sep is None:
                raise ValueError(f"expected 'x' between intervals near {rest!r}")
            rest = rest[sep.end():]
        match = _BOX_PART.match(rest)
        if match is None:
            raise ValueError(f"expected an interval [lo,hi] near {rest!r}")
        lo, hi = float(match.group(1)), float(match.group(2))
        if not lo <= hi:
            raise ValueError(f"interval [{match.group(1)},{match.group(2)}] has lo > hi")
        pairs.append((lo, hi))
        rest = rest[match.end():].strip()
    if not pairs:
        raise ValueError("empty box literal")
    return Box.from_pairs(pairs)


def _locate(text, section, key):
    '''1-based line of `key = ...` inside [section], or None.'''
    current = None
    pattern = re.compile(rf'^\s*{re.escape(key)}\s*[=:]')
    for number, line in enumerate(text.splitlines(), start=1):
        header = re.match(r'^\s*\[([^\]]+)\]', line)
        if header:
            current = header.group(1).strip()
        elif current == section and pattern.match(line):
            return number
    return None


class _ModelReader:
    '''Typed access to a parsed model file with located errors.'''

    def __init__(self, text):
        self.text = text
        self.parser = configparser.ConfigParser(
            interpolation=None, comment_prefixes=('#', ';'), inline_comment_prefixes=('#',))
        self.parser.optionxform = str
        try:
            self.parser.read_string(text)
        except configparser.Error as exc:
            line = getattr(exc, 'lineno', None)
            if line is None and getattr(exc, 'errors', None):
                line = exc.errors[0][0]
            raise ModelError(f"malformed model file: {exc.message.splitlines()[0]}", line=line) from exc
        unknown = [s for s in self.parser.sections() if s not in SECTIONS]
        if unknown:
            raise ModelError(f"unknown section [{unknown[0]}]", line=_locate_section(text, unknown[0]))

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if not self.has(section, key):
            if required:
                raise ModelError(f"missing required key {key!r}", section)
            return default
        return self.parser.get(section, key)

    def _convert(self, section, key, default, required, convert, label):
        value = self.raw(section, key, None, required)
        if value is None:
            return default
        try:
            return convert(value)
        except ValueError as exc:
            raise ModelError(f"{key} must be {label}: {exc}", section, _locate(self.text, section, key)) from exc

    def number(self, section, key, default=None, required=False):
        return self._convert(section, key, default, required, float, 'a number')

    def integer(self, section, key, default=None, required=False):
        return self._convert(section, key, default, required, int, 'an integer')

    def box(self, section, key, default=None, required=False):
        return self._convert(section, key, default, required, parse_box, 'a box [a,b]x[c,d]...')

    def numbers(self, section, key):
        return self._convert(section, key, (), False,
                             lambda v: tuple(float(p) for p in v.split(',') if p.strip()),
                             'a comma separated list of numbers')

    def field(self, kind, prefix, n, m):
        section = 'dynamics'
        texts = []
        for i in range(1, n + 1):
            texts.append(self.raw(section, f"{prefix}{i}", required=True))
        extra = [k for k in self.parser.options(section)
                 if k.startswith(prefix) and k[len(prefix):].isdigit() and not 1 <= int(k[len(prefix):]) <= n]
        if extra:
            raise ModelError(f"component {extra[0]} exceeds n = {n}", section, _locate(self.text, section, extra[0]))
        try:
            return VectorField.from_texts(texts, kind, m)
        except ExprSyntaxError as exc:
            key = next((f"{prefix}{i}" for i, t in enumerate(texts, start=1) if t == exc.text), prefix)
            reason = exc.reason
            if kind == KIND_PRE_DELAY and '_tau' in reason:
                reason = f"g must not reference delayed variables ({reason})"
            message = f"{key}: {reason}"
            if exc.text:
                message += f" at position {exc.position}\n  {exc.text}\n  {' ' * exc.position}^"
            raise ModelError(message, section, _locate(self.text, section, key)) from exc


def _locate_section(text, section):
    for number, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{section}]":
            return number
    return None


def load_model(text: str, name: str = 'model') -> ModelSpec:
    '''
    Load and validate a model file

    Args:
        text (str): model file contents
        name (str): label carried into reports

    Returns:
        (ModelSpec): the validated problem description

    Raises:
        ModelError: syntax problems or violated invariants, with a named reason
    '''
    reader = _ModelReader(text)
    for section in ('system', 'dynamics', 'domains'):
        if not reader.parser.has_section(section):
            raise ModelError(f"missing section [{section}]")
    n = reader.integer('system', 'n', required=True)
    m = reader.integer('system', 'm', default=1)
    if n < 1 or m < 1:
        raise ModelError("n and m must be at least 1", 'system')
    tau = reader.number('system', 'tau', required=True)
    K = reader.integer('system', 'K', required=True)
    g = reader.field(KIND_PRE_DELAY, 'g', n, m)
    f = reader.field(KIND_DELAYED, 'f', n, m)

    overrides = {}
    for key in ('M_prime', 'M', 'N'):
        value = reader.number('certificate', key)
        if value is not None:
            if value < 0:
                raise ModelError(f"{key} override must be nonnegative", 'certificate',
                                 _locate(text, 'certificate', key))
            overrides[key] = value

    steps = DEFAULT_STEPS_PER_DELAY
    solver = SolverParams(
        h=reader.number('solver', 'h', default=tau / steps),
        checkpoints=reader.numbers('solver', 'checkpoints'),
        subdivisions=reader.integer('solver', 'subdivisions', default=1),
        samples=reader.integer('solver', 'samples', default=DEFAULT_SAMPLES),
        seed=reader.integer('solver', 'seed', default=0),
        d_samples=reader.integer('solver', 'd_samples', default=DEFAULT_D_SAMPLES),
        max_halvings=reader.integer('solver', 'max_halvings', default=DEFAULT_MAX_HALVINGS),
    )

    safety = None
    if reader.parser.has_section('safety'):
        safety = SafetyQuery(Xu=reader.box('safety', 'Xu', required=True),
                             t=reader.number('safety', 't', required=True))

    spec = ModelSpec(
        n=n, m=m, g=g, f=f, tau=tau, K=K,
        X=reader.box('domains', 'X', required=True),
        D=reader.box('domains', 'D', required=True),
        I0=reader.box('domains', 'I0', required=True),
        L=reader.number('system', 'L', default=0.0),
        R=reader.number('certificate', 'R', default=DEFAULT_R),
        epsilon=reader.number('certificate', 'epsilon', default=DEFAULT_EPSILON),
        solver=solver,
        overrides=overrides,
        jacobian_subdivisions=reader.integer('certificate', 'jacobian_subdivisions', default=0),
        safety=safety,
        name=name,
    )
    logger.debug("loaded model %s: n=%d m=%d tau=%r K=%d", name, n, m, tau, K)
    return spec


def load_model_file(path) -> ModelSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc.strerror}") from exc
    return load_model(text, name=path.stem)


# ── Jacobian bounds ──

def domain_env(spec: ModelSpec) -> dict:
    '''Variable bindings for X x X x D x [0, K*tau].'''
    env = {}
    for name, box in ((state_names(spec.n), spec.X), (delayed_names(spec.n), spec.X),
                      (input_names(spec.m), spec.D)):
        env.update(zip(name, box.dims))
    env[TIME_VAR] = Interval(0.0, spec.horizon)
    return env


def _split_interval(interval, pieces):
    if pieces <= 1 or interval.is_point:
        return [interval]
    points = [interval.lo + (interval.hi - interval.lo) * i / pieces for i in range(pieces + 1)]
    points[0], points[-1] = interval.lo, interval.hi
    return [Interval(a, b) for a, b in zip(points, points[1:]) if a <= b]


def _row_bound(row, env, subdivisions):
    names = sorted(set().union(*(e.variables() for e in row)))
    pieces = max(1, subdivisions)
    while pieces > 1 and pieces ** len(names) > MAX_JACOBIAN_CELLS:
        pieces -= 1
    if pieces != max(1, subdivisions):
        logger.warning("jacobian subdivision reduced to %d pieces per variable for a %d-variable row",
                       pieces, len(names))
    best = 0.0
    for cell in itertools.product(*(_split_interval(env[v], pieces) for v in names)):
        local = dict(env)
        local.update(zip(names, cell))
        total = 0.0
        for entry in row:
            total = add_up(total, entry.eval_interval(local).mag)
        best = max(best, total)
    return best


def matrix_bound(rows, env, subdivisions=0):
    '''Sound bound of the infinity norm of a symbolic Jacobian over env.'''
    return max((_row_bound(row, env, subdivisions) for row in rows), default=0.0)


def jacobian_bounds(spec: ModelSpec, subdivisions: Optional[int] = None):
    '''
    Bounds M', M, N on the Jacobian infinity norms over X x X x D

    Args:
        spec (ModelSpec): the model
        subdivisions (int): pieces per variable for each Jacobian row; 0 or 1 means
                            natural interval extension. Defaults to the model's setting.

    Returns:
        (tuple): (M_prime, M, N) sound upper bounds
    '''
    if subdivisions is None:
        subdivisions = spec.jacobian_subdivisions
    env = domain_env(spec)
    m_prime = matrix_bound(spec.g.jacobian_x, env, subdivisions)
    m = matrix_bound(spec.f.jacobian_x, env, subdivisions)
    n = matrix_bound(spec.f.jacobian_tau, env, subdivisions)
    logger.debug("jacobian bounds for %s: M'=%r M=%r N=%r", spec.name, m_prime, m, n)
    return m_prime, m, n


# ── time-lag certificate ──

@dataclass(frozen=True)
class BoundsReport:
    '''
    The four terms of the time-lag bound and their minimum

    Args:
        M_prime, M, N (float): Jacobian norm bounds used
        tau_max (float): minimum of the terms; math.inf when every term is unbounded
        terms (tuple of float): the four terms in order, math.inf when excluded
        R_used, epsilon_used (float): certificate parameters used
    '''

    M_prime: float
    M: float
    N: float
    tau_max: float
    terms: tuple
    R_used: float
    epsilon_used: float

    @property
    def unbounded(self):
        return math.isinf(self.tau_max)

    @property
    def binding_term(self):
        '''Index (0-3) of the smallest term, or None when unbounded.'''
        if self.unbounded:
            return None
        return min(range(4), key=lambda i: self.terms[i])

    def to_dict(self):
        return {
            'M_prime': self.M_prime, 'M': self.M, 'N': self.N,
            'terms': [None if math.isinf(t) else t for t in self.terms],
            'tau_max': None if self.unbounded else self.tau_max,
            'unbounded': self.unbounded,
            'binding_term': self.binding_term,
            'R': self.R_used, 'epsilon': self.epsilon_used,
        }


def tau_bound(M_prime: float, M: float, N: float, R: float, epsilon: float) -> BoundsReport:
    '''
    Largest admissible time lag for the given Jacobian bounds

    Terms whose denominator vanishes encode a vacuous constraint and count as +inf.

    Args:
        M_prime, M, N (float): nonnegative Jacobian norm bounds
        R (float): sensitivity norm bound, > 1
        epsilon (float): inverse dominance bound, > 1

    Returns:
        (BoundsReport): the four terms and their minimum
    '''
    if not R > 1:
        raise ModelError(f"R must be greater than 1, got {R!r}")
    if not epsilon > 1:
        raise ModelError(f"epsilon must be greater than 1, got {epsilon!r}")
    if min(M_prime, M, N) < 0:
        raise ModelError("Jacobian bounds must be nonnegative")
    inf = math.inf
    delayed = M + N * epsilon
    terms = (
        (epsilon - 1) / (epsilon * M_prime * R) if M_prime > 0 else inf,
        (R - 1) / (M_prime * R) if M_prime > 0 else inf,
        (epsilon - 1) / (epsilon * R * delayed) if delayed > 0 else inf,
        (R - 1) / (R * delayed) if delayed > 0 else inf,
    )
    return BoundsReport(M_prime, M, N, min(terms), terms, R, epsilon)


def optimize_tau(M_prime: float, M: float, N: float,
                 R_values: Sequence[float], epsilon_values: Sequence[float]):
    '''
    Grid point (R, epsilon) maximising the time-lag bound

    Ties go to the smaller R, then the smaller epsilon.

    Returns:
        (tuple): (R, epsilon, tau_max)
    '''
    if not R_values or not epsilon_values:
        raise ValueError("optimize_tau needs a nonempty grid for R and epsilon")
    best = None
    for R in sorted(R_values):
        for epsilon in sorted(epsilon_values):
            tau = tau_bound(M_prime, M, N, R, epsilon).tau_max
            if best is None or tau > best[2]:
                best = (R, epsilon, tau)
    return best


@dataclass(frozen=True)
class CertificateReport:
    '''Outcome of checking a model's tau against the time-lag bound.'''

    model: str
    tau: float
    computed: tuple
    overrides: dict
    bounds: BoundsReport
    certified: bool
    override_below_computed: tuple = ()

    def to_dict(self):
        return {
            'model': self.model,
            'tau': self.tau,
            'computed': dict(zip(('M_prime', 'M', 'N'), self.computed)),
            'overrides': dict(self.overrides),
            'override_below_computed': list(self.override_below_computed),
            'bounds': self.bounds.to_dict(),
            'certified': self.certified,
        }


def check_model(spec: ModelSpec, subdivisions: Optional[int] = None) -> CertificateReport:
    '''
    Decide whether the model's tau satisfies the time-lag bound

    Overrides from the [certificate] section replace the computed bounds;
    an override smaller than the computed sound bound is reported.

    Returns:
        (CertificateReport): computed and effective bounds, and the verdict
    '''
    computed = jacobian_bounds(spec, subdivisions)
    effective = list(computed)
    below = []
    for i, key in enumerate(('M_prime', 'M', 'N')):
        if key in spec.overrides:
            value = spec.overrides[key]
            if value < computed[i]:
                below.append(key)
                logger.warning("override %s=%r is below the computed bound %r", key, value, computed[i])
            effective[i] = value
    bounds = tau_bound(*effective, spec.R, spec.epsilon)
    certified = spec.tau <= bounds.tau_max
    if certified:
        logger.info("%s: tau=%r certified (tau_max=%r)", spec.name, spec.tau, bounds.tau_max)
    else:
        logger.warning("%s: tau=%r exceeds tau_max=%r; under-approximations will be suppressed",
                       spec.name, spec.tau, bounds.tau_max)
    return CertificateReport(spec.name, spec.tau, tuple(computed), dict(spec.overrides), bounds,
                             certified, tuple(below))
