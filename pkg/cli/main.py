'''
ddereach command line

    ddereach check-tau --model example1
    ddereach reach     --model example1 --out runs/ex1
    ddereach validate  --model example1 --out runs/ex1 --samples 1000
    ddereach safety    --model example1 --out runs/ex1 --xu "[0,0.05]x[0.25,0.3]" --t 10
    ddereach plot      --model example1 --out runs/ex1 --t 10 --dims 1,2

Exit codes: 0 success, 1 failed check (uncertified tau, validation
failure, integrator blow-up), 2 usage, parse or configuration error.
'''

import argparse
import logging
import sys

from ddereach.core.model import parse_box
from ddereach.engine.flow import FRAME_BOX, FRAME_QR
from ddereach.exceptions import (
    ConfigError,
    DimensionError,
    DomainExitError,
    ExprSyntaxError,
    ModelError,
    ReachOutputError,
    SingularSensitivityError,
    StepSizeError,
)

from cli.session import DEFAULT_OUT, RunConfig, RunSession, describe_bounds

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _float_list(text):
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _box(text):
    try:
        return parse_box(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dims(text):
    try:
        first, second = (int(part) - 1 for part in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two 1-based dimensions like 1,2, got {text!r}") from None
    return first, second


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--model', required=True, help='model file, or a bundled model name such as example1')
    common.add_argument('--out', default=DEFAULT_OUT, help='output directory')
    common.add_argument('--h', type=float, help='flow step (must divide tau)')
    common.add_argument('--checkpoints', type=_float_list, help='extra checkpoint times, e.g. 0.8,1.0')
    common.add_argument('--subdiv', type=int, dest='subdivisions', help='patches per face side')
    common.add_argument('--samples', type=int, help='sample count for the sampling checks')
    common.add_argument('--seed', type=int, help='RNG seed')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging on stderr')

    parser = argparse.ArgumentParser(prog='ddereach', description='Reach sets of perturbed delay differential equations')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('check-tau', parents=[common], help='certify the time lag')
    reach = sub.add_parser('reach', parents=[common], help='compute over- and under-approximations')
    reach.add_argument('--force', action='store_true', help='run even when tau is not certified (U suppressed)')
    reach.add_argument('--frame', choices=(FRAME_QR, FRAME_BOX), default=FRAME_QR, help='flow set representation')
    validate = sub.add_parser('validate', parents=[common], help='sample-test a previous reach output')
    validate.add_argument('--d-samples', type=int, dest='d_samples', help='perturbations for the shooting check')
    safety = sub.add_parser('safety', parents=[common], help='robust safety verdict for an unsafe set')
    safety.add_argument('--xu', type=_box, dest='Xu', help='unsafe box, e.g. "[0,0.05]x[0.25,0.3]"')
    safety.add_argument('--t', type=float, help='query time (a checkpoint)')
    plot = sub.add_parser('plot', parents=[common], help='render a checkpoint to PNG')
    plot.add_argument('--t', type=float, help='checkpoint time (defaults to the last one)')
    plot.add_argument('--dims', type=_dims, default=(0, 1), help='two 1-based dimensions, e.g. 1,2')
    return parser


def config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        model=args.model,
        out=args.out,
        h=args.h,
        checkpoints=args.checkpoints,
        subdivisions=args.subdivisions,
        samples=args.samples,
        d_samples=getattr(args, 'd_samples', None),
        seed=args.seed,
        force=getattr(args, 'force', False),
        Xu=getattr(args, 'Xu', None),
        t=getattr(args, 't', None),
        dims=getattr(args, 'dims', (0, 1)),
        frame=getattr(args, 'frame', FRAME_QR),
        verbose=args.verbose,
    )


def cmd_check_tau(session: RunSession) -> int:
    spec = session.spec
    certificate = session.check_tau()
    print(f"model {spec.name}: n={spec.n} m={spec.m} tau={spec.tau!r} K={spec.K}")
    for line in describe_bounds(certificate):
        print(line)
    return EXIT_OK if certificate.certified else EXIT_CHECK_FAILED


def cmd_reach(session: RunSession) -> int:
    result, certificate = session.reach()
    if result is None:
        print(f"ddereach: error: tau = {certificate.tau!r} exceeds tau_max = {certificate.bounds.tau_max!r}; "
              f"pass --force to compute over-approximations only", file=sys.stderr)
        return EXIT_CHECK_FAILED
    for checkpoint in result.checkpoints:
        under = 'Empty' if checkpoint.under.is_empty else str(checkpoint.under)
        print(f"t = {checkpoint.t!r}")
        print(f"  O = {checkpoint.over}")
        print(f"  U = {under} ({checkpoint.status})")
    if not result.domain_ok:
        print("warning: reach sets are not provably inside the interior of X")
    print(f"outputs in {session.out_dir}")
    return EXIT_OK


def cmd_validate(session: RunSession) -> int:
    reports = session.validate()
    for report in reports:
        print(report.summary())
    passed = all(r.passed for r in reports)
    print('all checks passed' if passed else 'some checks FAILED')
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_safety(session: RunSession) -> int:
    verdict = session.safety()
    print(f"t = {verdict.t!r}, Xu = {verdict.Xu}")
    print(f"{verdict.verdict}: {verdict.relation}")
    return EXIT_OK


def cmd_plot(session: RunSession) -> int:
    print(f"wrote {session.plot()}")
    return EXIT_OK


COMMANDS = {
    'check-tau': cmd_check_tau,
    'reach': cmd_reach,
    'validate': cmd_validate,
    'safety': cmd_safety,
    'plot': cmd_plot,
}


def _fail(exc) -> None:
    print(f"ddereach: error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format=LOG_FORMAT)
    try:
        session = RunSession(config_from_args(args))
        return COMMANDS[args.command](session)
    except (ModelError, ExprSyntaxError, ConfigError, DimensionError, ReachOutputError) as exc:
        _fail(exc)
        return EXIT_USAGE
    except (StepSizeError, DomainExitError, SingularSensitivityError) as exc:
        _fail(exc)
        return EXIT_CHECK_FAILED


if __name__ == '__main__':
    sys.exit(main())
