'''
One command-line run: resolved configuration, the loaded model and the work each command does
'''

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from ddereach.core.interval import Box
from ddereach.core.model import SolverParams, check_model, load_model_file
from ddereach.engine.flow import FRAME_QR, steps_in
from ddereach.engine.reach import ReachAnalyzer, checkpoint_times, separated_from_reach, shrink
from ddereach.exceptions import ConfigError
from ddereach.models import bundled_model_path
from ddereach.validation.checks import (
    check_boundary_exclusion,
    check_gradient,
    check_homeomorphism,
    check_over,
    check_under,
)

from cli import outputs

logger = logging.getLogger(__name__)

DEFAULT_OUT = 'ddereach_out'

ROBUSTLY_SAFE = 'RobustlySafe'
ROBUSTLY_UNSAFE = 'RobustlyUnsafe'
UNKNOWN = 'Unknown'


def resolve_model_path(model: str) -> Path:
    '''A model file path, or the name of a bundled model such as "example1".'''
    path = Path(model)
    if path.is_file():
        return path
    try:
        return Path(bundled_model_path(model))
    except FileNotFoundError:
        return path


@dataclass
class RunConfig:
    '''
    Settings of one run; None means "take it from the model file, then the library default"

    Args:
        command (str): subcommand name
        model (str): model file path or bundled model name
        out (str): output directory
        h (float): flow step
        checkpoints (tuple of float): extra checkpoint times (replace the model's list when given)
        subdivisions (int): patches per face side
        samples (int): sample count for the sampling checks
        d_samples (int): perturbations per checkpoint for the shooting check
        seed (int): RNG seed
        force (bool): run reach on an uncertified model (U is then suppressed)
        Xu (Box): unsafe set for the safety query
        t (float): query or plot time
        dims (tuple of int): 0-based dimensions for the plot projection
        frame (str): flow frame mode
    '''

    command: str
    model: str
    out: str = DEFAULT_OUT
    h: Optional[float] = None
    checkpoints: Optional[tuple] = None
    subdivisions: Optional[int] = None
    samples: Optional[int] = None
    d_samples: Optional[int] = None
    seed: Optional[int] = None
    force: bool = False
    Xu: Optional[Box] = None
    t: Optional[float] = None
    dims: tuple = (0, 1)
    frame: str = FRAME_QR
    verbose: bool = False

    def resolved(self, spec) -> 'RunConfig':
        solver = spec.solver
        safety = spec.safety

        def pick(value, fallback):
            return fallback if value is None else value

        return replace(
            self,
            h=pick(self.h, solver.h),
            checkpoints=tuple(pick(self.checkpoints, solver.checkpoints)),
            subdivisions=pick(self.subdivisions, solver.subdivisions),
            samples=pick(self.samples, solver.samples),
            d_samples=pick(self.d_samples, solver.d_samples),
            seed=pick(self.seed, solver.seed),
            Xu=pick(self.Xu, None if safety is None else safety.Xu),
            t=pick(self.t, None if safety is None else safety.t),
        )

    def validate(self, spec):
        '''Raise ConfigError when the resolved settings do not fit the model.'''
        if not self.h > 0:
            raise ConfigError(f"h must be positive, got {self.h!r}")
        try:
            steps_in(spec.tau, self.h)
        except ValueError:
            raise ConfigError(f"h = {self.h!r} does not divide tau = {spec.tau!r}") from None
        checkpoint_times(spec, self.h, self.checkpoints)
        if self.subdivisions < 1:
            raise ConfigError(f"subdivisions must be at least 1, got {self.subdivisions}")
        if self.samples < 1 or self.d_samples < 1:
            raise ConfigError("sample counts must be at least 1")
        if self.Xu is not None and len(self.Xu) != spec.n:
            raise ConfigError(f"Xu must have dimension {spec.n}, got {len(self.Xu)}")
        if len(self.dims) != 2 or not all(0 <= d < spec.n for d in self.dims):
            raise ConfigError(f"plot dimensions must be two of 1..{spec.n}")

    def solver_params(self, spec) -> SolverParams:
        return replace(spec.solver, h=self.h, checkpoints=self.checkpoints, subdivisions=self.subdivisions,
                       samples=self.samples, d_samples=self.d_samples, seed=self.seed)


@dataclass
class SafetyVerdict:
    '''
    Answer to "can the system be in Xu at time t?"

    RobustlySafe needs O and Xu disjoint; RobustlyUnsafe needs a nonempty
    certified U meeting Xu; anything else is Unknown.
    '''

    verdict: str
    t: float
    Xu: Box
    relation: str
    over: Box
    under: Box

    def to_dict(self):
        return {
            'verdict': self.verdict,
            't': self.t,
            'Xu': self.Xu.to_pairs(),
            'relation': self.relation,
            'over': self.over.to_pairs(),
            'under': None if self.under.is_empty else self.under.to_pairs(),
        }


def safety_verdict(checkpoint, Xu: Box) -> SafetyVerdict:
    '''
    Decide robust safety from one checkpoint

    Xu inside O is still safe when it sits outside every face box and is
    joined to the outside of O around them. The under-approximation is
    re-shrunk from the stored boundary boxes with Xu as focus, which keeps
    the part of O nearest Xu when there is a choice; the result is still a
    valid under-approximation.
    '''
    t, over = checkpoint.t, checkpoint.over
    if not over.intersects(Xu):
        return SafetyVerdict(ROBUSTLY_SAFE, t, Xu, 'O and Xu are disjoint', over, checkpoint.under)
    if checkpoint.certified and separated_from_reach(checkpoint.boundary.values(), over, Xu):
        return SafetyVerdict(ROBUSTLY_SAFE, t, Xu, 'Xu lies outside the region the face boxes enclose',
                             over, checkpoint.under)
    if checkpoint.certified and not checkpoint.under.is_empty:
        under, _ = shrink(list(checkpoint.boundary.values()), checkpoint.witness, over, focus=Xu)
        if under.is_empty or not under.intersects(Xu):
            under = checkpoint.under
        if under.intersects(Xu):
            return SafetyVerdict(ROBUSTLY_UNSAFE, t, Xu, 'U meets Xu', over, under)
        return SafetyVerdict(UNKNOWN, t, Xu, 'O meets Xu but U does not', over, under)
    reason = 'U is empty' if checkpoint.certified else 'tau is not certified'
    return SafetyVerdict(UNKNOWN, t, Xu, f"O meets Xu and {reason}", over, checkpoint.under)


class RunSession:
    '''
    Loads the model once and runs one command against it

    Args:
        config (RunConfig): command-line settings
    '''

    def __init__(self, config: RunConfig):
        spec = load_model_file(resolve_model_path(config.model))
        self.config = config.resolved(spec)
        self.config.validate(spec)
        self.spec = spec.with_changes(solver=self.config.solver_params(spec))
        self.out_dir = Path(self.config.out)
        self.log = []

    def _note(self, message):
        self.log.append(message)
        logger.info(message)

    def check_tau(self, write=True):
        certificate = check_model(self.spec)
        if write:
            path = outputs.write_bounds(self.out_dir, certificate)
            self._note(f"wrote {path}")
        return certificate

    def reach(self):
        '''
        Run the reach pipeline and write its files

        Returns:
            (tuple): (ReachResult or None, CertificateReport); None when the model
                     is uncertified and force is off
        '''
        certificate = self.check_tau()
        if not certificate.certified and not self.config.force:
            return None, certificate
        analyzer = ReachAnalyzer(self.spec, certificate=certificate, frame=self.config.frame,
                                 verbose=self.config.verbose)
        result = analyzer.analyze()
        written = outputs.write_reach(self.out_dir, result, self.spec)
        self._note(f"wrote {len(written)} files to {self.out_dir}")
        return result, certificate

    def load_reach(self):
        return outputs.read_reach(self.out_dir, self.spec)

    def validate(self):
        '''Run every sampling check against the stored reach output.'''
        result = self.load_reach()
        config = self.config
        reports = [
            check_over(self.spec, result, config.samples, config.seed),
            check_under(self.spec, result, config.d_samples, seed=config.seed),
            check_boundary_exclusion(self.spec, result, config.samples, config.seed),
            check_homeomorphism(self.spec, config.samples, config.seed),
            check_gradient(self.spec, seed=config.seed),
        ]
        path = outputs.write_report(self.out_dir, reports, {'model': self.spec.name, 'seed': config.seed})
        self._note(f"wrote {path}")
        over = reports[0]
        if over.endpoints:
            self._note(f"wrote {outputs.write_trajectories(self.out_dir, over.endpoints)}")
        return reports

    def safety(self) -> SafetyVerdict:
        config = self.config
        if config.Xu is None or config.t is None:
            raise ConfigError("safety needs Xu and t (from --xu/--t or the model's [safety] section)")
        result = self.load_reach()
        try:
            checkpoint = result.checkpoint_at(config.t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        verdict = safety_verdict(checkpoint, config.Xu)
        outputs.json_dump(self.out_dir / outputs.SAFETY_FILE, verdict.to_dict())
        return verdict

    def plot(self) -> Path:
        '''Render a 2-D projection of one checkpoint to PNG.'''
        config = self.config
        result = self.load_reach()
        t = result.checkpoints[-1].t if config.t is None else config.t
        try:
            checkpoint = result.checkpoint_at(t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        path = self.out_dir / f"plot_t{outputs.format_time(checkpoint.t)}.png"
        samples = outputs.read_trajectory_states(self.out_dir, checkpoint.t)
        outputs.render_png(path, checkpoint, config.dims, samples, self.spec.name)
        self._note(f"wrote {path}")
        return path


def describe_bounds(certificate) -> list:
    '''Human-readable lines for a certificate report.'''
    bounds = certificate.bounds
    computed = dict(zip(('M_prime', 'M', 'N'), certificate.computed))
    lines = []
    for key, label in (('M_prime', "M'"), ('M', 'M '), ('N', 'N ')):
        value = getattr(bounds, key)
        source = 'override' if key in certificate.overrides else 'computed'
        line = f"{label} = {value!r} ({source}; computed {computed[key]!r})"
        if key in certificate.override_below_computed:
            line += ' WARNING: override below the computed bound'
        lines.append(line)
    terms = ', '.join('inf' if math.isinf(x) else repr(x) for x in bounds.terms)
    lines.append(f"terms: {terms}")
    if bounds.unbounded:
        lines.append("tau_max = inf")
    else:
        lines.append(f"tau_max = {bounds.tau_max!r} (binding term {bounds.binding_term + 1})")
    verdict = 'certified' if certificate.certified else 'NOT certified'
    lines.append(f"tau = {certificate.tau!r}: {verdict} (R = {bounds.R_used!r}, epsilon = {bounds.epsilon_used!r})")
    return lines
