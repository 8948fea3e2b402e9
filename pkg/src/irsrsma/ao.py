"""Alternating optimization between the precoder SDP and the IRS SDP."""
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import conic
from .numerics import STALL_ACCEPT_TOL, ZERO_STREAM_TOL, min_eig
from .rates import (
    LiftedPoint,
    TransmitDesign,
    allocate_common_rate,
    lifted_rates,
    rate_report,
)
from .subproblems import (
    RSMA,
    build_v_subproblem,
    build_w_subproblem,
    extract_rank_one,
    penalty_state,
    project_unit_modulus,
)

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("mrt_equal_power", "random_phase", "identity_phase")


@dataclass
class AOConfig:
    p_max: float = 0.1
    rho: float = 5e-4
    eps_converge: float = 1e-4
    eps_solver: float = 1e-8
    max_outer_iters: int = 50
    init_strategy: str = "mrt_equal_power"
    seed: int = 0
    rank_tol: float = 1e-3
    rho_retry: bool = True
    an_init_fraction: float = 0.05

    def __post_init__(self):
        if self.p_max < 0:
            raise ValueError("p_max must be non-negative")
        if self.rho <= 0 or self.eps_converge <= 0 or self.eps_solver <= 0:
            raise ValueError("rho and tolerances must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")


@dataclass
class IterationRecord:
    iteration: int
    t: float
    t_after_w: float
    penalty_residual: float
    rank_ratio_V: float
    rank_ratio_W: list
    status_w: str
    status_v: str
    time_w: float
    time_v: float
    feasibility: float
    rho: float


@dataclass
class AOTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    converged: bool = False
    rho_retried: bool = False

    @property
    def objectives(self):
        return [r.t for r in self.records]

    @property
    def iterations(self):
        return max(len(self.records) - 1, 0)

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def is_monotone(self, slack):
        t = self.objectives
        return all(b >= a - slack for a, b in zip(t, t[1:]))


def convergence_check(trace, eps_converge):
    """True iff the last relative objective gain is below ``eps_converge``."""
    t = trace.objectives if isinstance(trace, AOTrace) else list(trace)
    if len(t) < 2:
        return False
    return (t[-1] - t[-2]) / max(1.0, abs(t[-2])) < eps_converge


# -- initialization ------------------------------------------------------------

def initial_phases(channels, strategy, rng):
    N = channels.N
    if N == 0:
        return np.ones(1, dtype=complex)
    if strategy == "identity_phase":
        u = np.ones(N, dtype=complex)
    elif strategy == "random_phase":
        u = np.exp(1j * rng.uniform(0.0, 2 * np.pi, N))
    else:
        # co-phase every reflected path with the direct path of the weakest user,
        # using that user's direct-channel matched filter at the AP
        K = channels.K
        k = int(np.argmin([np.linalg.norm(channels.h_d[i]) for i in range(K)]))
        Hk = channels.H[k]
        w = channels.h_d[k] / max(np.linalg.norm(channels.h_d[k]), 1e-300)
        paths = Hk @ w  # reflected paths followed by the direct path
        u = np.exp(1j * (np.angle(paths[:N]) - np.angle(paths[N])))
    return np.concatenate([u, [1.0]])


def _matched(row):
    nrm = np.linalg.norm(row)
    if nrm == 0:
        return np.zeros_like(row)
    return row.conj() / nrm


def feasible_rates(design, channels, structure=RSMA):
    """Make a vector design satisfy the secrecy constraints and fill in its rates.

    Streams that leak more to Eve than they deliver are switched off, the common
    stream is switched off when Eve decodes it better than the weakest user,
    and the available common secrecy rate is water-filled.
    """
    design = TransmitDesign(design.w_c, design.w.copy(), design.Z, design.v, np.zeros(design.K))
    # switching one stream off changes the interference seen by the others,
    # so repeat until nothing leaks
    for _ in range(design.K + 2):
        rep = rate_report(design, channels)
        bad = [k for k in range(design.K) if rep.R_p_k[k] < rep.R_pe_k[k] and np.any(design.w[k])]
        if bad:
            design.w[bad] = 0.0
        elif np.any(design.w_c) and rep.R_c_cap < rep.R_c_e:
            design.w_c = np.zeros_like(design.w_c)
        else:
            break
    rep = rate_report(design, channels)
    priv = np.maximum(0.0, rep.R_p_k - rep.R_pe_k)
    eligible = [k for k in range(design.K) if structure.share_enabled(k)]
    budget = rep.R_c_cap - rep.R_c_e if np.any(design.w_c) else 0.0
    design.r_c_sec = allocate_common_rate(budget, priv, eligible)
    return design, priv


def initialize(channels, config, rng=None, structure=RSMA):
    """Starting point whose lifted form is feasible for the first W step."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    K, M = channels.K, channels.M
    p = config.p_max
    v = initial_phases(channels, config.init_strategy, rng)
    rows = channels.effective(v)[:K]
    active = [structure.common] + [structure.private_enabled(k) for k in range(K)]
    per_stream = (1.0 - config.an_init_fraction) * p / max(sum(active), 1)
    w = np.array([_matched(rows[k]) * math.sqrt(per_stream) if active[1 + k] else np.zeros(M, complex)
                  for k in range(K)])
    weakest = int(np.argmin(np.linalg.norm(rows, axis=1)))
    w_c = _matched(rows[weakest]) * math.sqrt(per_stream) if structure.common else np.zeros(M, complex)
    Z = (config.an_init_fraction * p / M) * np.eye(M)
    design, priv = feasible_rates(TransmitDesign(w_c, w, Z, v, np.zeros(K)), channels, structure)
    point = design.lift()
    point.r_p = priv
    point.t = float(np.min(point.r_c + point.r_p))
    return design, point


# -- loop ----------------------------------------------------------------------

def _repair(point, channels, structure, p_max):
    """Snap switched-off streams to zero and clip rates to their exact values.

    Keeps the stored iterate feasible for the lifted max-min problem despite
    solver round-off, which is what makes the next linearization feasible.
    """
    W = point.W.copy()
    tr = np.real(np.trace(W, axis1=1, axis2=2))
    ref = max(p_max, 1e-300)
    r_c, r_p = point.r_c.copy(), point.r_p.copy()
    for l in range(W.shape[0]):
        if tr[l] > ZERO_STREAM_TOL * ref:
            # eigen-directions this weak are interior-point noise
            vals, vecs = np.linalg.eigh(0.5 * (W[l] + W[l].conj().T))
            vals = np.where(vals > ZERO_STREAM_TOL * ref, vals, 0.0)
            W[l] = (vecs * vals) @ vecs.conj().T
        else:
            W[l] = 0.0
            if l == 0:
                r_c[:] = 0.0
            else:
                r_p[l - 1] = 0.0
    pt = replace(point, W=W)
    priv, comm = lifted_rates(pt, channels)
    r_p = np.clip(np.minimum(r_p, priv), 0.0, None)
    r_c = np.clip(r_c, 0.0, None)
    cap = max(float(np.min(comm)), 0.0) if structure.common and np.any(W[0]) else 0.0
    if r_c.sum() > cap:
        r_c = r_c * (cap / r_c.sum()) if r_c.sum() > 0 else r_c
    t = min(point.t, float(np.min(r_c + r_p)))
    return LiftedPoint(W, point.Z, point.V, r_c, r_p, t)


def _usable(res, prog):
    """Optimal results, or stalled ones whose point is still feasible."""
    if res.optimal:
        return True
    if res.status != "numerical_limit" or not np.all(np.isfinite(res.x)):
        return False
    worst = max(prog.residuals(res.x).values())
    if worst <= STALL_ACCEPT_TOL:
        logger.info("accepting stalled backend result (%s), residual %.1e", res.backend_status, worst)
        res.values = prog.unpack(res.x)
        res.objective = prog.objective.value(res.x)
        return True
    return False


def _rank_ratios(point):
    return [extract_rank_one(Wl)[1] for Wl in point.W]


def extract_design(point, channels, p_max, structure=RSMA):
    """Vector design from a lifted point, with rates recomputed in vector form."""
    vecs = [extract_rank_one(Wl)[0] for Wl in point.W]
    w_c, w = vecs[0], np.array(vecs[1:])
    if channels.N > 0:
        v = project_unit_modulus(extract_rank_one(point.V)[0])
    else:
        v = np.ones(1, dtype=complex)
    Z = 0.5 * (point.Z + point.Z.conj().T)
    vals, vecsZ = np.linalg.eigh(Z)
    Z = (vecsZ * np.clip(vals, 0.0, None)) @ vecsZ.conj().T
    for k in structure.zero_private:
        w[k] = 0.0
    design = TransmitDesign(w_c, w, Z, v, np.zeros(channels.K))
    power = design.total_power()
    if power > p_max > 0:
        s = math.sqrt(p_max / power)
        design = TransmitDesign(w_c * s, w * s, Z * (s * s), v, np.zeros(channels.K))
    elif p_max <= 0:
        design = TransmitDesign.zeros(channels.M, channels.K, channels.N)
    rep = rate_report(design, channels)
    priv = np.maximum(0.0, rep.R_p_k - rep.R_pe_k)
    budget = rep.R_c_cap - rep.R_c_e if structure.common and np.any(design.w_c) else 0.0
    if budget < -1e-6:
        logger.info("extracted common stream is decodable by Eve (gap %.3e); dropping it", budget)
        design.w_c = np.zeros_like(design.w_c)
        rep = rate_report(design, channels)
        priv = np.maximum(0.0, rep.R_p_k - rep.R_pe_k)
        budget = 0.0
    eligible = [k for k in range(channels.K) if structure.share_enabled(k)]
    design.r_c_sec = allocate_common_rate(max(budget, 0.0), priv, eligible)
    return design


def _record(it, point, t_w, sw, sv, tw, tv, channels, p_max, rho):
    from .rates import lifted_residuals

    res = lifted_residuals(point, channels, p_max)
    feas = max(0.0, -min(v for k, v in res.items() if k != "psd"), -res["psd"])
    return IterationRecord(
        iteration=it,
        t=float(point.t),
        t_after_w=float(t_w),
        penalty_residual=float(penalty_state(point.V, rho).residual) if point.V.shape[0] > 1 else 0.0,
        rank_ratio_V=float(extract_rank_one(point.V)[1]) if point.V.shape[0] > 1 else 0.0,
        rank_ratio_W=[float(x) for x in _rank_ratios(point)],
        status_w=sw,
        status_v=sv,
        time_w=float(tw),
        time_v=float(tv),
        feasibility=float(feas),
        rho=float(rho),
    )


def ao_solve(channels, config, structure=RSMA, skip_v=False):
    """Run the alternating optimization and return ``(design, point, trace)``.

    On a subproblem failure the best iterate so far is returned and
    ``trace.status`` says what happened.
    """
    rng = np.random.default_rng(config.seed)
    trace = AOTrace()
    p_max = config.p_max
    _, point = initialize(channels, config, rng, structure)
    skip_v = skip_v or channels.N == 0
    rho = config.rho
    trace.records.append(_record(0, point, point.t, "init", "init", 0.0, 0.0, channels, p_max, rho))
    if p_max <= 0:
        trace.status = "optimal"
        trace.converged = True
        return extract_design(point, channels, p_max, structure), point, trace

    it = 0
    while it < config.max_outer_iters:
        it += 1
        try:
            wp = build_w_subproblem(channels, point.V, point, p_max, structure)
        except ValueError as exc:
            logger.error("W step build failed: %s", exc)
            trace.status = "build_error"
            break
        res = wp.solve(tol=config.eps_solver)
        if not _usable(res, wp.prog):
            logger.warning("W step %d: %s (%s)", it, res.status, res.backend_status)
            logger.debug("failed program:\n%s", conic.dumps(wp.prog))
            trace.status = f"w_{res.status}"
            break
        cand = _repair(wp.to_point(res), channels, structure, p_max)
        slack = 10 * config.eps_solver
        if cand.t < point.t - slack and res.backend_status.startswith("Almost"):
            # the previous iterate is feasible for this program, so a lower
            # value is a reduced-accuracy answer; insist on a full solve
            again = wp.solve(tol=config.eps_solver, strict=True)
            if _usable(again, wp.prog):
                res = again
                cand = _repair(wp.to_point(res), channels, structure, p_max)
        if cand.t < point.t - slack:
            # still short of a feasible point: backend inaccuracy, keep the iterate
            logger.warning("W step %d returned %.6g below the feasible %.6g; keeping the iterate",
                           it, cand.t, point.t)
            cand = point
        t_w = cand.t
        sv, tv = "skipped", 0.0
        if not skip_v:
            vp = build_v_subproblem(channels, cand, cand.V, penalty_state(cand.V, rho), structure)
            vres = vp.solve(tol=config.eps_solver)
            sv, tv = vres.status, vres.solve_time
            if _usable(vres, vp.prog):
                sv = "optimal" if vres.optimal else "stalled"
                cand = _repair(vp.to_point(vres), channels, structure, p_max)
            else:
                logger.warning("V step %d: %s (%s)", it, vres.status, vres.backend_status)
                logger.debug("failed program:\n%s", conic.dumps(vp.prog))
        if cand.t < point.t:
            # solver round-off only; keep the better iterate
            logger.debug("iteration %d lost %.3e in objective", it, point.t - cand.t)
        point = cand
        trace.records.append(_record(it, point, t_w, res.status, sv, res.solve_time, tv, channels, p_max, rho))
        if sv not in ("optimal", "stalled", "skipped"):
            trace.status = f"v_{sv}"
            break
        if convergence_check(trace, config.eps_converge):
            ratio_v = trace.records[-1].rank_ratio_V
            if ratio_v > config.rank_tol and config.rho_retry and not trace.rho_retried:
                rho /= 10.0
                trace.rho_retried = True
                logger.info("rank residual %.3e at convergence; retrying with rho=%.1e", ratio_v, rho)
                continue
            trace.converged = True
            trace.status = "optimal"
            break
    else:
        trace.status = "max_iters"
    design = extract_design(point, channels, p_max, structure)
    return design, point, trace


def design_summary(design, channels, p_max):
    """Flat metrics used by the harness and CLI."""
    rep = rate_report(design, channels)
    split = design.power_split()
    priv = np.maximum(0.0, rep.R_p_k - rep.R_pe_k)
    return {
        "min_sr": rep.min_sr,
        "power_common": split["common"],
        "power_private": split["private"],
        "power_an": split["an"],
        "r_c_sec": [float(x) for x in design.r_c_sec],
        "r_p_sec": [float(x) for x in priv],
        "z_min_eig": min_eig(design.Z),
    }
