from ddereach.validation.signals import PerturbationSignal, sample_perturbation
from ddereach.validation.simulate import SensitivityTrace, Trajectory, sensitivity_flow, simulate
from ddereach.validation.checks import (
    CheckReport,
    check_boundary_exclusion,
    check_gradient,
    check_homeomorphism,
    check_over,
    check_under,
)
