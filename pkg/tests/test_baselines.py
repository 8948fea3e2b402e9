import numpy as np
import pytest

from dataclasses import replace

from irsrsma.ao import AOConfig, ao_solve
from irsrsma.baselines import (
    SchemeId,
    UnsupportedConfiguration,
    noma2_structure,
    scheme_channels,
    solve_mulp,
    solve_no_irs,
    solve_noma2,
    solve_rsma,
    solve_scheme,
    weaker_user,
)
from irsrsma.channels import ChannelRealization
from irsrsma.rates import rate_report, validate_design
from irsrsma.subproblems import RSMA
from conftest import make_channels

CFG = AOConfig(p_max=0.1, max_outer_iters=30)
# run to a tight fixed point where an optimum-level property is compared
TIGHT = AOConfig(p_max=0.1, max_outer_iters=300, eps_converge=1e-9)


def test_scheme_ids():
    assert SchemeId.parse("RSMA") is SchemeId.RSMA
    assert SchemeId.parse(SchemeId.MULP) is SchemeId.MULP
    assert SchemeId.RSMA_NO_IRS.base is SchemeId.RSMA
    assert not SchemeId.NOMA2_NO_IRS.uses_irs
    with pytest.raises(ValueError, match="choose from"):
        SchemeId.parse("oma")


def test_single_user_mulp_matches_rsma_without_common():
    ch = make_channels(seed=3, K=1, M=2, N=2)
    _, _, t_r = ao_solve(ch, CFG, replace(RSMA, common=False))
    _, t_m = solve_mulp(ch, CFG)
    assert t_r.objectives[-1] == pytest.approx(t_m.objectives[-1], abs=1e-4)


def test_rsma_not_below_mulp_at_fixed_point():
    ch = make_channels(seed=3, K=1, M=2, N=2)
    d_r, _ = solve_rsma(ch, TIGHT)
    d_m, _ = solve_mulp(ch, TIGHT)
    assert rate_report(d_r, ch).min_sr >= rate_report(d_m, ch).min_sr - 1e-3


@pytest.mark.parametrize("scheme", [s for s in SchemeId])
def test_zero_power_gives_zero(scheme):
    ch = make_channels()
    design, _ = solve_scheme(scheme, ch, AOConfig(p_max=0.0))
    assert rate_report(design, scheme_channels(scheme, ch)).min_sr == 0.0


def test_noma2_requires_two_users():
    for K in (1, 3):
        with pytest.raises(UnsupportedConfiguration):
            solve_noma2(make_channels(K=K), CFG)


def test_weaker_user_ties_go_to_lower_index():
    base = make_channels()
    h_d = np.array([base.h_d[0], base.h_d[0]])
    ch = ChannelRealization(base.G, h_d, base.h_de, base.h_r, base.h_re, base.sigma2)
    assert weaker_user(ch) == 0
    h_d = np.array([base.h_d[0], base.h_d[0] * 0.5])
    ch = ChannelRealization(base.G, h_d, base.h_de, base.h_r, base.h_re, base.sigma2)
    assert weaker_user(ch) == 1


@pytest.mark.parametrize("seed", [0, 1])
def test_noma2_weak_user_has_no_private_stream(seed):
    ch = make_channels(seed=seed)
    weak = weaker_user(ch)
    design, _ = solve_noma2(ch, CFG)
    assert not np.any(design.w[weak])
    assert design.r_c_sec[1 - weak] == 0.0
    assert noma2_structure(ch).common_users == (weak,)
    assert validate_design(design, ch, CFG.p_max).feasible


def test_symmetric_users_noma_not_above_rsma():
    base = make_channels(seed=2)
    h_d = np.array([base.h_d[0], base.h_d[0]])
    h_r = np.array([base.h_r[0], base.h_r[0]])
    ch = ChannelRealization(base.G, h_d, base.h_de, h_r, base.h_re, base.sigma2)
    d_n, _ = solve_noma2(ch, TIGHT)
    d_r, _ = solve_rsma(ch, TIGHT)
    assert rate_report(d_n, ch).min_sr <= rate_report(d_r, ch).min_sr + 1e-3


@pytest.mark.parametrize("scheme", ["rsma", "mulp"])
def test_no_irs_is_identical_when_there_is_no_irs(scheme):
    ch = make_channels(seed=1, N=0)
    d1, t1 = solve_scheme(scheme, ch, CFG)
    d2, t2 = solve_no_irs(scheme, ch, CFG)
    np.testing.assert_array_equal(d1.w, d2.w)
    assert t1.objectives == t2.objectives


def test_no_irs_design_lives_on_direct_links():
    ch = make_channels(seed=0, N=4)
    design, trace = solve_scheme("rsma_no_irs", ch, CFG)
    assert design.v.shape == (1,)
    assert all(r.status_v == "skipped" for r in trace.records[1:])
    assert scheme_channels("rsma_no_irs", ch).N == 0


def test_irs_helps_on_seeded_instance():
    ch = make_channels(seed=0, N=8)
    for scheme in ("rsma", "mulp"):
        with_irs, _ = solve_scheme(scheme, ch, CFG)
        without, _ = solve_scheme(scheme + "_no_irs", ch, CFG)
        gain = rate_report(with_irs, ch).min_sr
        base = rate_report(without, ch.without_irs()).min_sr
        assert gain >= base - 1e-3
