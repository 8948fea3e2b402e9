"""Max-min secrecy-rate beamforming for rate-splitting downlinks with an IRS.

The precoders, artificial noise and secrecy common-rate shares at the access
point and the IRS phase shifts are optimized by alternating between two
semidefinite programs that are convexified around the current iterate.
"""
from .ao import AOConfig, AOTrace, ao_solve, initialize
from .baselines import SchemeId, solve_mulp, solve_no_irs, solve_noma2, solve_scheme
from .channels import ChannelRealization, FadingConfig, SystemGeometry, assemble_channels, realization_rng
from .harness import ExperimentConfig, ExperimentResult, export, run_experiment
from .rates import LiftedPoint, RateReport, TransmitDesign, rate_report, validate_design

__version__ = "0.1.0"

__all__ = [
    "AOConfig", "AOTrace", "ao_solve", "initialize",
    "SchemeId", "solve_mulp", "solve_no_irs", "solve_noma2", "solve_scheme",
    "ChannelRealization", "FadingConfig", "SystemGeometry", "assemble_channels", "realization_rng",
    "ExperimentConfig", "ExperimentResult", "export", "run_experiment",
    "LiftedPoint", "RateReport", "TransmitDesign", "rate_report", "validate_design",
]
