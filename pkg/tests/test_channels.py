import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsrsma.channels import (
    ChannelRealization,
    FadingConfig,
    SystemGeometry,
    assemble_channels,
    effective_row,
    los_matrix,
    pathloss_linear,
    realization_rng,
    sample_cascaded_link,
    sample_direct,
    steering,
)
from conftest import make_channels


def test_pathloss_examples():
    assert pathloss_linear(1.0, 2.2, -30.0) == pytest.approx(1e-3)
    assert pathloss_linear(1.0, 3.5, 0.0) == 1.0
    # independent evaluation: 10^(-3) * exp(-2.2 ln 50)
    assert pathloss_linear(50.0, 2.2, -30.0) == pytest.approx(1e-3 * math.exp(-2.2 * math.log(50.0)), rel=1e-12)
    assert pathloss_linear(50.0, 2.2, -30.0) == pytest.approx(1.828e-7, rel=1e-3)


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_pathloss_rejects_nonpositive_distance(d):
    with pytest.raises(ValueError):
        pathloss_linear(d, 2.0, -30.0)


def test_sample_direct_statistics_and_determinism():
    assert np.all(sample_direct(2, 0.0, np.random.default_rng(0)) == 0)
    rng = np.random.default_rng(7)
    draws = np.array([sample_direct(2, 1.0, rng) for _ in range(100_000)])
    var = np.mean(np.abs(draws) ** 2, axis=0)
    assert np.all((0.99 <= var) & (var <= 1.01))
    a = sample_direct(3, 2.0, np.random.default_rng(5))
    b = sample_direct(3, 2.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_cascaded_link_limits():
    los = los_matrix(4, 2, 0.3, -0.2)
    out = sample_cascaded_link(4, 2, 2.0, math.inf, los, np.random.default_rng(0))
    np.testing.assert_array_equal(out, math.sqrt(2.0) * los)
    # kappa = 0 (-inf dB) is Rayleigh: same draws as the direct sampler
    a = sample_cascaded_link(3, 1, 1.5, -math.inf, np.ones((3, 1)), np.random.default_rng(3))
    rng = np.random.default_rng(3)
    re = rng.standard_normal((3, 1))
    im = rng.standard_normal((3, 1))
    np.testing.assert_allclose(a, math.sqrt(1.5) * (re + 1j * im) / math.sqrt(2.0))


def test_cascaded_link_power_normalized():
    rng = np.random.default_rng(11)
    los = los_matrix(4, 2, 0.7, 0.1)
    p = [np.linalg.norm(sample_cascaded_link(4, 2, 3.0, 3.0, los, rng)) ** 2 / (8 * 3.0) for _ in range(10_000)]
    assert 0.99 <= np.mean(p) <= 1.01


def test_steering_unit_modulus():
    np.testing.assert_allclose(np.abs(steering(8, 0.4)), 1.0)
    assert steering(3, 0.0)[0] == 1.0


def test_shapes_and_cascade_definition():
    ch = make_channels(seed=3, M=2, K=2, N=4)
    assert ch.Q.shape == (3, 4, 2) and ch.H.shape == (3, 5, 2)
    rows_r = list(ch.h_r) + [ch.h_re]
    rows_d = list(ch.h_d) + [ch.h_de]
    for j in range(3):
        for n in range(4):
            for m in range(2):
                assert abs(ch.Q[j][n, m] - np.conj(rows_r[j][n]) * ch.G[n, m]) <= 1e-12
        np.testing.assert_array_equal(ch.H[j][-1], np.conj(rows_d[j]))


def test_no_irs_geometry():
    ch = assemble_channels(SystemGeometry(N=0), FadingConfig(), realization_rng(0, 0))
    assert ch.H.shape == (3, 1, 2)
    np.testing.assert_array_equal(ch.H[0][0], ch.h_d[0].conj())
    ch8 = make_channels(N=8)
    direct = ch8.without_irs()
    assert direct.N == 0
    np.testing.assert_array_equal(direct.h_d, ch8.h_d)


def test_effective_row_examples():
    ch = make_channels(seed=1, N=4)
    v = np.zeros(5, complex)
    v[-1] = 1.0
    np.testing.assert_array_equal(effective_row(ch.H[0], v), ch.h_d[0].conj())
    ch1 = make_channels(seed=2, N=1)
    theta = 0.77
    v = np.array([np.exp(1j * theta), 1.0])
    # v^H H = conj(e^{j theta}) conj(h_r) G + h_d^H
    hand = np.exp(-1j * theta) * np.conj(ch1.h_r[1][0]) * ch1.G[0] + np.conj(ch1.h_d[1])
    np.testing.assert_allclose(effective_row(ch1.H[1], v), hand, atol=1e-12 * np.abs(hand).max())
    with pytest.raises(ValueError):
        effective_row(ch.H[0], np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cascaded_identity_and_triangle_bound(seed):
    ch = make_channels(seed=seed % 50, N=6)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        j = int(rng.integers(0, ch.K + 1))
        u_conj = np.exp(1j * rng.uniform(0, 2 * np.pi, ch.N))
        v = np.concatenate([u_conj, [1.0]])
        w = rng.standard_normal(ch.M) + 1j * rng.standard_normal(ch.M)
        rows_r = list(ch.h_r) + [ch.h_re]
        rows_d = list(ch.h_d) + [ch.h_de]
        # u^H diag(h_r^H) G with u^H = conj(v[:N])
        direct = np.conj(rows_d[j]) + (v[:ch.N].conj() * np.conj(rows_r[j])) @ ch.G
        got = effective_row(ch.H[j], v) @ w
        scale = np.abs(ch.H[j]).sum() * np.linalg.norm(w)
        assert abs(got - direct @ w) <= 1e-10 * scale
        assert np.linalg.norm(effective_row(ch.H[j], v)) <= np.linalg.norm(ch.H[j], axis=1).sum() + 1e-15


def test_determinism_and_seed_isolation():
    a = make_channels(seed=4)
    b = make_channels(seed=4)
    for name in ("G", "h_d", "h_de", "h_r", "h_re", "H"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = make_channels(seed=5)
    assert not np.array_equal(a.h_d, c.h_d)


def test_link_powers_follow_pathloss():
    # 16 antennas give 1.6e5 samples per link, so 1% is about four standard errors
    g = SystemGeometry(M=16, N=2)
    f = FadingConfig()
    rng = np.random.default_rng(0)
    draws = [assemble_channels(g, f, rng) for _ in range(10_000)]
    d_ap_lu = math.hypot(*g.lu_pos[0])
    expect = pathloss_linear(d_ap_lu, f.alpha_direct, f.pl0_db)
    got = np.mean([np.abs(ch.h_d[0]) ** 2 for ch in draws])
    assert got == pytest.approx(expect, rel=0.01)
    expect_g = pathloss_linear(50.0, f.alpha_cascaded, f.pl0_db)
    got_g = np.mean([np.mean(np.abs(ch.G) ** 2) for ch in draws])
    assert got_g == pytest.approx(expect_g, rel=0.01)


def test_realization_immutable_and_validated():
    ch = make_channels()
    with pytest.raises(ValueError):
        ch.H[0][0, 0] = 1.0
    with pytest.raises(ValueError):
        ChannelRealization(np.zeros((1, 2)), [[np.nan, 0]], [0, 0], [[0]], [0], 1.0)
    with pytest.raises(ValueError):
        ChannelRealization(np.zeros((1, 2)), [[1, 0]], [0, 0], [[0]], [0], 0.0)


def test_geometry_validation():
    with pytest.raises(ValueError):
        SystemGeometry(M=0)
    with pytest.raises(ValueError):
        SystemGeometry(N=-1)
    with pytest.raises(ValueError):
        SystemGeometry(lu_pos=((0.0, math.inf),))
    with pytest.raises(ValueError):
        FadingConfig(alpha_direct=0.0)
    assert SystemGeometry().K == 2


def test_with_users_rejects_missing_positions():
    g = SystemGeometry()
    assert g.with_users(1).K == 1
    with pytest.raises(ValueError, match="user positions"):
        g.with_users(3)
