"""Invariant and oracle checks on small instances.

Every check yields ``CheckRow`` entries. The rows carry no timings, so
running the suite twice with the same seeds gives identical output.
"""
import io
import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .ao import AOConfig, ao_solve
from .baselines import SchemeId, solve_scheme, weaker_user
from .channels import FadingConfig, SystemGeometry, assemble_channels, realization_rng
from .numerics import dbm_to_watt
from .rates import LiftedPoint, eval_log_term, rate_report, validate_design
from .subproblems import LINEARIZED_KINDS, taylor_of_log_term

CHECK_COLUMNS = ("check", "instance", "value", "tolerance", "passed")


@dataclass(frozen=True)
class CheckRow:
    check: str
    instance: str
    value: float
    tolerance: float
    passed: bool

    def cells(self):
        return [self.check, self.instance, f"{self.value:.6e}", f"{self.tolerance:.1e}",
                "pass" if self.passed else "FAIL"]


def _row(check, instance, value, tol, passed=None):
    value = float(value)
    if passed is None:
        passed = bool(value <= tol)
    return CheckRow(check, str(instance), value, float(tol), bool(passed))


# -- conic core ----------------------------------------------------------------

def conic_examples(tol=1e-9):
    """Three programs with closed-form optima; returns ``(name, found, expected)``."""
    out = []
    prog = conic.ConicProgram()
    X = prog.hermitian("X", 3)
    prog.add_psd(X - np.eye(3))
    prog.set_objective(X.trace(), "min")
    out.append(("min_trace", conic.solve(prog, tol=tol).objective, 3.0))

    prog = conic.ConicProgram()
    t = prog.scalar("t")
    a = prog.scalar("a", lb=1.0)
    prog.add_constraint(a, "<=", 8.0)
    conic.add_log2_lower_bound(prog, a, t)
    prog.set_objective(t, "max")
    out.append(("log2_epigraph", conic.solve(prog, tol=tol).objective, 3.0))

    # vertex of {x + 2y <= 4, 3x + y <= 6, x, y >= 0} maximizing x + y
    prog = conic.ConicProgram()
    x = prog.scalar("x", lb=0.0)
    y = prog.scalar("y", lb=0.0)
    prog.add_constraint(x + y * 2.0, "<=", 4.0)
    prog.add_constraint(x * 3.0 + y, "<=", 6.0)
    prog.set_objective(x + y, "max")
    out.append(("lp_vertex", conic.solve(prog, tol=tol).objective, 2.8))
    return out


def random_hermitian(n, rng):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (A + A.conj().T)


def embedding_error(X):
    """Distance between the spectrum of the real embedding and the doubled spectrum of ``X``."""
    lam = np.linalg.eigvalsh(X)
    emb = np.linalg.eigvalsh(conic.hermitian_embedding(X))
    return float(np.max(np.abs(np.sort(np.repeat(lam, 2)) - emb)))


# -- Taylor expansions -------------------------------------------------------------

def random_psd(n, rng, trace=1.0, rank=None):
    rank = n if rank is None else rank
    B = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    S = B @ B.conj().T
    return S * (trace / np.trace(S).real)


def random_unit_diag_psd(n, rng):
    S = random_psd(n, rng, trace=n)
    d = 1.0 / np.sqrt(np.real(np.diag(S)))
    return S * np.outer(d, d)


def random_lifted_point(channels, rng, p_max):
    """A random feasible-shaped lifted point (rates left at zero)."""
    K, M, N = channels.K, channels.M, channels.N
    share = rng.dirichlet(np.ones(K + 2)) * p_max
    W = np.array([random_psd(M, rng, share[l]) for l in range(K + 1)])
    Z = random_psd(M, rng, share[K + 1])
    V = random_unit_diag_psd(N + 1, rng)
    return LiftedPoint(W, Z, V, np.zeros(K), np.zeros(K), 0.0)


def _with(point, name, X):
    W, Z, V = point.W.copy(), point.Z, point.V
    if name == "Z":
        Z = X
    elif name == "V":
        V = X
    else:
        W[0 if name == "W_c" else int(name[2:])] = X
    return LiftedPoint(W, Z, V, point.r_c, point.r_p, point.t)


def gradient_errors(point, channels, rng):
    """Relative error of every Taylor gradient against a central difference.

    Each gradient is probed along a random PSD direction, so the directional
    derivative is strictly positive and the relative error is well defined.
    """
    out = []
    for kind in LINEARIZED_KINDS:
        for k in range(channels.K if kind != "f_e" else 1):
            for wrt in ("WZ", "V"):
                exp = taylor_of_log_term(kind, point, channels, k, wrt)
                mats = {"V": point.V, "Z": point.Z, "W_c": point.W[0]}
                mats.update({f"W_{i + 1}": point.W[1 + i] for i in range(channels.K)})
                for name, G in exp.gradients.items():
                    D = random_psd(G.shape[0], rng, trace=float(np.trace(mats[name]).real) or 1.0)
                    slope = float(np.real(np.vdot(G, D)))
                    # step sized so the log argument moves by about 0.1%
                    h = 1e-3 / (math.log(2) * slope)
                    up = eval_log_term(kind, _with(point, name, mats[name] + h * D), channels, k)
                    dn = eval_log_term(kind, _with(point, name, mats[name] - h * D), channels, k)
                    fd = (up - dn) / (2 * h)
                    out.append((f"{kind}[{k}]/{wrt}/{name}", abs(slope - fd) / abs(fd)))
    return out


def dominance_violations(point, channels, rng, samples, p_max):
    """Worst ``f(Y) - bound(Y)`` over random PSD points ``Y``, per expansion."""
    out = []
    for kind in LINEARIZED_KINDS:
        for k in range(channels.K if kind != "f_e" else 1):
            for wrt in ("WZ", "V"):
                exp = taylor_of_log_term(kind, point, channels, k, wrt)
                worst = -math.inf
                for _ in range(samples):
                    Y = random_lifted_point(channels, rng, p_max)
                    if wrt == "WZ":
                        Y = LiftedPoint(Y.W, Y.Z, point.V, Y.r_c, Y.r_p, 0.0)
                        mats = {"Z": Y.Z, "W_c": Y.W[0]}
                        mats.update({f"W_{i + 1}": Y.W[1 + i] for i in range(channels.K)})
                    else:
                        Y = LiftedPoint(point.W, point.Z, Y.V, Y.r_c, Y.r_p, 0.0)
                        mats = {"V": Y.V}
                    worst = max(worst, eval_log_term(kind, Y, channels, k) - exp.upper_bound(mats))
                out.append((f"{kind}[{k}]/{wrt}", worst))
    return out


# -- end-to-end ----------------------------------------------------------------------

def small_channels(seed, N=4, M=2, K=2):
    geometry = SystemGeometry(M=M, N=N).with_users(K)
    return assemble_channels(geometry, FadingConfig(), realization_rng(0, seed))


def ao_checks(seed, channels, config):
    """Monotonicity, feasibility, extraction and accounting of one RSMA run."""
    rows = []
    inst = f"seed={seed}"
    design, point, trace = ao_solve(channels, config)
    slack = 10 * config.eps_converge
    drops = [a - b for a, b in zip(trace.objectives, trace.objectives[1:])]
    rows.append(_row("ao_monotone", inst, max(drops, default=0.0), slack))
    feas = validate_design(design, channels, config.p_max)
    rows.append(_row("design_feasible", inst, feas.max_violation(), 1e-6))
    rep = rate_report(design, channels)
    rows.append(_row("extraction_gap", inst, point.t - rep.min_sr, 0.05))
    split = design.power_split()
    rows.append(_row("power_split", inst, sum(split.values()) - config.p_max, 1e-6))
    rows.append(_row("common_budget", inst, float(np.sum(design.r_c_sec)) - (rep.R_c_cap - rep.R_c_e), 1e-6))
    priv = np.maximum(0.0, rep.R_p_k - rep.R_pe_k)
    rows.append(_row("sr_decomposition", inst, float(np.max(np.abs(design.r_c_sec + priv - rep.sr_k))), 1e-6))
    return rows, trace


def scheme_checks(seed, channels, config, rsma_objective):
    rows = []
    inst = f"seed={seed}"
    for scheme in (SchemeId.MULP, SchemeId.NOMA2):
        design, trace = solve_scheme(scheme, channels, config)
        rows.append(_row(f"rsma_vs_{scheme.value}", inst, trace.objectives[-1] - rsma_objective, 1e-3))
        if scheme is SchemeId.NOMA2:
            norm = float(np.linalg.norm(design.w[weaker_user(channels)]))
    rows.append(_row("noma2_weak_private_zero", inst, norm, 0.0))
    return rows


def run_checks(seeds=(0, 1, 2), gradient_points=3, dominance_samples=20, pmax_dbm=20.0):
    """The full suite; returns a list of ``CheckRow``."""
    rows = []
    for name, found, expected in conic_examples():
        rows.append(_row(f"conic_{name}", "closed_form", abs(found - expected), 1e-6))
    rng = np.random.default_rng(seeds[0] if seeds else 0)
    worst = max(embedding_error(random_hermitian(int(rng.integers(1, 7)), rng)) for _ in range(100))
    rows.append(_row("hermitian_embedding", "100_random", worst, 1e-10))

    p_max = float(dbm_to_watt(pmax_dbm))
    for seed in seeds:
        channels = small_channels(seed)
        prng = np.random.default_rng(1000 + seed)
        grad, dom = 0.0, -math.inf
        for _ in range(gradient_points):
            point = random_lifted_point(channels, prng, p_max)
            grad = max([grad] + [e for _, e in gradient_errors(point, channels, prng)])
            dom = max([dom] + [v for _, v in dominance_violations(point, channels, prng, dominance_samples, p_max)])
        rows.append(_row("taylor_gradient", f"seed={seed}", grad, 1e-5))
        rows.append(_row("taylor_dominance", f"seed={seed}", max(dom, 0.0), 1e-9))

        config = AOConfig(p_max=p_max, seed=seed)
        ao_rows, trace = ao_checks(seed, channels, config)
        rows += ao_rows
        rows += scheme_checks(seed, channels, config, trace.objectives[-1])
    return rows


def rows_to_csv(rows):
    import csv

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CHECK_COLUMNS)
    for row in rows:
        writer.writerow(row.cells())
    return buf.getvalue()
