"""Comparison schemes: MU-LP, two-user NOMA and the variants without an IRS."""
from enum import Enum

import numpy as np

from .ao import ao_solve
from .subproblems import MULP, RSMA, SchemeStructure


class SchemeId(str, Enum):
    RSMA = "rsma"
    MULP = "mulp"
    NOMA2 = "noma2"
    RSMA_NO_IRS = "rsma_no_irs"
    MULP_NO_IRS = "mulp_no_irs"
    NOMA2_NO_IRS = "noma2_no_irs"

    @property
    def base(self):
        return SchemeId(self.value.replace("_no_irs", ""))

    @property
    def uses_irs(self):
        return not self.value.endswith("_no_irs")

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scheme {name!r}; choose from {choices}") from None


class UnsupportedConfiguration(ValueError):
    """Raised when a scheme cannot be applied to the given system size."""


def weaker_user(channels):
    """Index of the user with the smaller direct-channel norm (ties go to the lower index)."""
    norms = [np.linalg.norm(channels.h_d[k]) for k in range(channels.K)]
    return int(np.argmin(norms))


def noma2_structure(channels):
    """Restricted rate splitting that realizes two-user NOMA.

    The weaker user has no private stream and owns the whole secrecy common
    rate, so its message rides the common stream that the stronger user
    decodes and cancels first.
    """
    if channels.K != 2:
        raise UnsupportedConfiguration(f"noma2 needs exactly 2 users, got K={channels.K}")
    weak = weaker_user(channels)
    return SchemeStructure(common=True, zero_private=(weak,), common_users=(weak,))


def scheme_structure(scheme, channels):
    base = SchemeId.parse(scheme).base
    if base is SchemeId.RSMA:
        return RSMA
    if base is SchemeId.MULP:
        return MULP
    return noma2_structure(channels)


def _run(channels, config, structure, skip_v=False):
    design, _, trace = ao_solve(channels, config, structure, skip_v=skip_v)
    return design, trace


def scheme_channels(scheme, channels):
    """The channels a scheme's design lives on (direct links only without the IRS)."""
    return channels if SchemeId.parse(scheme).uses_irs else channels.without_irs()


def solve_rsma(channels, config):
    return _run(channels, config, RSMA)


def solve_mulp(channels, config):
    """Private streams only; the secrecy rate has no common part."""
    return _run(channels, config, MULP)


def solve_noma2(channels, config):
    return _run(channels, config, noma2_structure(channels))


def solve_no_irs(scheme, channels, config):
    """Run ``scheme`` on the direct links only, with the IRS step skipped."""
    base = SchemeId.parse(scheme).base
    return solve_scheme(base, channels.without_irs(), config)


def solve_scheme(scheme, channels, config):
    """Dispatch on a ``SchemeId`` (or its string value)."""
    scheme = SchemeId.parse(scheme)
    if not scheme.uses_irs:
        return solve_no_irs(scheme, channels, config)
    if scheme is SchemeId.RSMA:
        return solve_rsma(channels, config)
    if scheme is SchemeId.MULP:
        return solve_mulp(channels, config)
    return solve_noma2(channels, config)
