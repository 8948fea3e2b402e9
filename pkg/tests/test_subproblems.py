import math

import numpy as np
import pytest

from irsrsma import conic
from irsrsma.ao import AOConfig, initialize
from irsrsma.channels import ChannelRealization
from irsrsma.checks import dominance_violations, gradient_errors, random_lifted_point
from irsrsma.rates import LiftedPoint, TransmitDesign, eval_log_term, lifted_rates, allocate_common_rate
from irsrsma.subproblems import (
    LINEARIZED_KINDS,
    build_v_subproblem,
    build_w_subproblem,
    extract_rank_one,
    penalty_state,
    project_unit_modulus,
    taylor_of_log_term,
)
from conftest import make_channels

LN2 = math.log(2.0)


def zero_point(ch):
    K, M, N = ch.K, ch.M, ch.N
    return LiftedPoint(np.zeros((K + 1, M, M)), np.zeros((M, M)), np.eye(N + 1), np.zeros(K), np.zeros(K), 0.0)


def herm_coords(X):
    """Coordinates of ``X`` in the conic layer's Hermitian basis."""
    n = X.shape[0]
    out = [X[i, i].real for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            out += [X[i, j].real, X[i, j].imag]
    return out


def pack(sub, point, channels):
    """Solution vector that places ``point`` (with its exact log values) in ``sub.prog``."""
    prog = sub.prog
    x = np.zeros(prog.nvars)
    for name, var in prog.herm_vars.items():
        X = point.V if name == "V" else (point.Z if name == "Z" else point.W[0 if name == "W_c" else int(name[2:])])
        if name != "V":
            X = X / sub.scale
        x[var.offset:var.offset + var.n * var.n] = herm_coords(X)
    for name, i in prog.scalar_vars.items():
        if name == "t":
            x[i] = point.t
        elif name.startswith(("r_c_", "r_p_")):
            x[i] = (point.r_c if name.startswith("r_c") else point.r_p)[int(name[4:]) - 1]
        elif name.startswith("log_"):
            kind, k = name[4:].rsplit("_", 1)
            val = eval_log_term(kind, point, channels, int(k) - 1)
            from irsrsma.rates import log_term_spec

            j, _ = log_term_spec(kind, channels.K, int(k) - 1)
            x[i] = val - math.log2(channels.sigma2[j])
        # residual variables stay at zero
    return x


# -- Taylor expansions -----------------------------------------------------------

def test_taylor_zero_point_unit_noise():
    ch = make_channels(N=3).with_noise(1.0)
    pt = zero_point(ch)
    for kind in LINEARIZED_KINDS:
        te = taylor_of_log_term(kind, pt, ch, 0, "WZ")
        assert te.base_value == pytest.approx(0.0)
        A = ch.H[te.receiver].conj().T @ pt.V @ ch.H[te.receiver]
        np.testing.assert_allclose(te.gradients["Z"], A / LN2, atol=1e-15)


def test_taylor_scalar_argument_two():
    ch = ChannelRealization(np.zeros((0, 1)), [[1.0]], [0.0], np.zeros((1, 0)), np.zeros(0), 1.0)
    pt = LiftedPoint(np.array([[[0.0]], [[1.0]]]), [[0.0]], [[1.0]], [0.0], [0.0], 0.0)
    te = taylor_of_log_term("g_ck", pt, ch, 0, "WZ")
    assert te.base_value == pytest.approx(1.0)
    assert te.gradients["W_1"][0, 0].real == pytest.approx(1.0 / (2.0 * LN2))
    assert "W_c" not in te.gradients


@pytest.mark.parametrize("seed", [0, 1])
def test_taylor_gradients_match_finite_differences(seed):
    ch = make_channels(seed=seed, N=4)
    rng = np.random.default_rng(seed)
    pt = random_lifted_point(ch, rng, 0.1)
    errs = gradient_errors(pt, ch, rng)
    assert max(e for _, e in errs) <= 1e-5


def test_taylor_dominance_and_tangency():
    ch = make_channels(seed=2, N=4)
    rng = np.random.default_rng(2)
    pt = random_lifted_point(ch, rng, 0.1)
    for _, worst in dominance_violations(pt, ch, rng, 100, 0.1):
        assert worst <= 1e-9
    for kind in LINEARIZED_KINDS:
        for wrt in ("WZ", "V"):
            te = taylor_of_log_term(kind, pt, ch, 1 if kind != "f_e" else 0, wrt)
            assert te.upper_bound({}) == pytest.approx(te.base_value, abs=1e-10)
            for G in te.gradients.values():
                assert np.max(np.abs(G - G.conj().T)) <= 1e-12 * max(1.0, np.abs(G).max())


def test_taylor_rejects_bad_arguments():
    ch = make_channels()
    pt = zero_point(ch)
    with pytest.raises(ValueError):
        taylor_of_log_term("f_e", pt, ch, 0, "U")
    pt.Z = -np.eye(2)
    with pytest.raises(ValueError, match="not positive"):
        taylor_of_log_term("f_e", pt, ch, 0, "WZ")


# -- W step -------------------------------------------------------------------------

def test_w_step_single_user_without_eve_reaches_capacity():
    base = make_channels(seed=6, K=1, N=3)
    ch = ChannelRealization(base.G, base.h_d, np.zeros(2), base.h_r, np.zeros(3), base.sigma2)
    cfg = AOConfig(p_max=0.1)
    _, prev = initialize(ch, cfg)
    prev = LiftedPoint(prev.W, np.zeros_like(prev.Z), prev.V, prev.r_c, prev.r_p, prev.t)
    sub = build_w_subproblem(ch, prev.V, prev, cfg.p_max)
    sub.prog.add_constraint(sub.prog.herm_expr("Z").trace(), "<=", 0.0)
    res = sub.solve(tol=1e-10)
    assert res.optimal
    row = ch.effective(extract_rank_one(prev.V)[0])[0]
    cap = math.log2(1 + cfg.p_max * np.linalg.norm(row) ** 2 / ch.sigma2[0])
    assert res.objective == pytest.approx(cap, abs=1e-4)


def test_w_step_vanishing_power():
    # the exact p_max = 0 program has no interior; the AO loop short-circuits it
    ch = make_channels()
    _, prev = initialize(ch, AOConfig(p_max=1e-12))
    sub = build_w_subproblem(ch, prev.V, prev, 1e-12)
    res = sub.solve(tol=1e-9)
    pt = sub.to_point(res)
    assert abs(res.objective) <= 1e-6
    assert np.abs(pt.W).max() <= 1e-11 and np.abs(pt.Z).max() <= 1e-11


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_previous_iterate_is_feasible(seed):
    ch = make_channels(seed=seed)
    cfg = AOConfig(p_max=0.1)
    _, init = initialize(ch, cfg)
    # a solved W step is feasible for the exact problem, hence a valid expansion point
    prev = build_w_subproblem(ch, init.V, init, cfg.p_max)
    prev = prev.to_point(prev.solve(tol=1e-9))
    sub = build_w_subproblem(ch, prev.V, prev, cfg.p_max)
    x = pack(sub, prev, ch)
    assert max(sub.prog.residuals(x).values()) <= 1e-8
    res = sub.solve(tol=1e-9)
    assert res.objective >= prev.t - 1e-7

    fixed = sub.to_point(res)
    vp = build_v_subproblem(ch, fixed, fixed.V, penalty_state(fixed.V, cfg.rho))
    x = pack(vp, fixed, ch)
    assert max(vp.prog.residuals(x).values()) <= 1e-7


def _exact_objective(point, ch):
    priv, comm = lifted_rates(point, ch)
    priv = np.maximum(priv, 0.0)
    r_c = allocate_common_rate(max(float(np.min(comm)), 0.0), priv)
    return float(np.min(priv + r_c))


def test_sca_objective_below_exact_restricted_grid():
    ch = make_channels(seed=4)
    cfg = AOConfig(p_max=0.1)
    _, prev = initialize(ch, cfg)
    sub = build_w_subproblem(ch, prev.V, prev, cfg.p_max)
    res = sub.solve(tol=1e-9)
    pt = sub.to_point(res)
    best = -math.inf
    # two-parameter restriction: scale the common covariance and the AN covariance
    for a in np.linspace(0.0, 1.0, 21):
        for b in np.linspace(0.0, 1.0, 21):
            W = pt.W.copy()
            W[0] *= a
            cand = LiftedPoint(W, pt.Z * b, pt.V, pt.r_c, pt.r_p, 0.0)
            best = max(best, _exact_objective(cand, ch))
    assert best >= res.objective - 1e-3


def test_w_build_rejects_infeasible_previous_point():
    ch = make_channels()
    pt = zero_point(ch)
    pt.Z = -np.eye(2)
    with pytest.raises(ValueError, match="log argument"):
        build_w_subproblem(ch, pt.V, pt, 0.1)


# -- V step -------------------------------------------------------------------------

def _fixed_point(ch, cfg):
    _, prev = initialize(ch, cfg)
    sub = build_w_subproblem(ch, prev.V, prev, cfg.p_max)
    return sub.to_point(sub.solve(tol=1e-9))


def test_v_step_penalty_off_matches_phase_grid():
    ch = make_channels(seed=1, N=1)
    cfg = AOConfig(p_max=0.1)
    fixed = _fixed_point(ch, cfg)
    pen = penalty_state(fixed.V, 1e12)
    relaxed = build_v_subproblem(ch, fixed, fixed.V, pen).solve(tol=1e-10)
    assert relaxed.optimal
    best = math.inf
    for theta in np.linspace(0, 2 * np.pi, 360, endpoint=False):
        v = np.array([np.exp(1j * theta), 1.0])
        Vf = np.outer(v, v.conj())
        vp = build_v_subproblem(ch, fixed, fixed.V, pen)
        V = vp.prog.herm_expr("V")
        vp.prog.add_constraint(V.entry_real(0, 1) - Vf[0, 1].real, "==", 0.0)
        vp.prog.add_constraint(V.inner(np.array([[0, 1j], [-1j, 0]]) * 0.5) - Vf[0, 1].imag, "==", 0.0)
        r = vp.solve(tol=1e-10)
        if r.optimal:
            best = min(best, r.objective)
    assert relaxed.objective <= best + 1e-6
    assert best - relaxed.objective <= 1e-3


def test_v_penalty_vanishes_for_rank_one():
    v = np.exp(1j * np.array([0.3, -1.2, 2.0, 0.0]))
    V = np.outer(v, v.conj())
    pen = penalty_state(V, 5e-4)
    assert pen.residual == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(pen.lambda_max_vec) == pytest.approx(1.0)
    ch = make_channels(N=3)
    fixed = _fixed_point(ch, AOConfig(p_max=0.1))
    vp = build_v_subproblem(ch, fixed, V, pen)
    x = pack(vp, LiftedPoint(fixed.W, fixed.Z, V, fixed.r_c, fixed.r_p, fixed.t), ch)
    # objective at V = V_prev with zero residuals is just -t
    assert vp.prog.objective.value(x) == pytest.approx(-fixed.t, abs=1e-9)
    with pytest.raises(ValueError):
        penalty_state(V, 0.0)


def test_v_step_bounded_with_zero_rates():
    ch = make_channels(seed=3, N=4)
    cfg = AOConfig(p_max=0.1)
    fixed = _fixed_point(ch, cfg)
    fixed = LiftedPoint(fixed.W, fixed.Z, fixed.V, np.zeros(2), np.zeros(2), 0.0)
    res = build_v_subproblem(ch, fixed, fixed.V, penalty_state(fixed.V, cfg.rho)).solve(tol=1e-9)
    assert res.optimal
    gain = max(np.linalg.norm(ch.H[k]) ** 2 * (ch.N + 1) for k in range(ch.K))
    bound = math.log2(1 + cfg.p_max * gain / ch.sigma2[0])
    dt = res.values["dt"]
    assert np.isfinite(dt) and 0 <= dt <= bound


# -- extraction -------------------------------------------------------------------

def test_extract_rank_one_examples(caplog):
    x = np.array([1 + 2j, -0.5j, 3.0])
    vec, ratio = extract_rank_one(np.outer(x, x.conj()))
    assert ratio == pytest.approx(0.0, abs=1e-12)
    phase = np.vdot(vec, x) / abs(np.vdot(vec, x))
    np.testing.assert_allclose(vec * phase, x, atol=1e-12)
    vec, ratio = extract_rank_one(np.eye(2))
    assert ratio == pytest.approx(0.5)
    assert "degenerate" in caplog.text
    vec, ratio = extract_rank_one(np.zeros((3, 3)))
    assert ratio == 0.0 and not np.any(vec)


def test_project_unit_modulus_examples():
    out = project_unit_modulus([2 * np.exp(1j * np.pi / 4), 3.0])
    np.testing.assert_allclose(out, [np.exp(1j * np.pi / 4), 1.0], atol=1e-15)
    v = np.array([np.exp(0.4j), np.exp(-2j), 1.0])
    np.testing.assert_allclose(project_unit_modulus(v), v, atol=1e-15)
    raw = np.random.default_rng(0).standard_normal(6) + 1j * np.random.default_rng(1).standard_normal(6)
    raw[2] = 0
    out = project_unit_modulus(raw)
    np.testing.assert_allclose(np.abs(out), 1.0, atol=1e-15)
    assert out[-1] == pytest.approx(1.0)


def test_rank_one_reconstruction_keeps_constraints():
    ch = make_channels(seed=0)
    cfg = AOConfig(p_max=0.1)
    from irsrsma.ao import ao_solve
    from irsrsma.rates import lifted_residuals

    _, point, _ = ao_solve(ch, cfg)
    ratios = [extract_rank_one(Wl)[1] for Wl in point.W]
    if max(ratios) <= 1e-4:
        W = np.array([np.outer(v, v.conj()) for v in (extract_rank_one(Wl)[0] for Wl in point.W)])
        rebuilt = LiftedPoint(W, point.Z, point.V, point.r_c, point.r_p, point.t)
        res = lifted_residuals(rebuilt, ch, cfg.p_max)
        assert min(res[k] for k in ("rate_sum", "private", "common", "power")) >= -1e-5
