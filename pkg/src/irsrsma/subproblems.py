"""The two convex programs solved in each alternating-optimization round.

Both programs use normalized log terms ``log2(arg / sigma_j^2)``: the noise
offset cancels inside every difference of logs, and it keeps the
exponential-cone arguments of order one instead of order ``1e-11``. Covariance
variables are scaled by ``p_max`` for the same reason.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .conic import Affine, ConicProgram, add_log2_lower_bound, asum
from .numerics import ZERO_STREAM_TOL, hermitize
from .rates import LiftedPoint, log_argument, log_term_spec, receiver_gram

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
EXACT_KINDS = ("f_pk", "g_pe_k", "f_ck", "g_ce")
LINEARIZED_KINDS = ("g_pk", "f_e", "g_ck")


@dataclass(frozen=True)
class SchemeStructure:
    """Which streams and rate shares a transmission scheme may use.

    ``zero_private`` lists users whose private precoder is fixed to zero;
    ``common_users`` lists users that may receive a secrecy common-rate share
    (``None`` means all of them).
    """

    common: bool = True
    zero_private: tuple = ()
    common_users: tuple = None

    def private_enabled(self, k):
        return k not in self.zero_private

    def share_enabled(self, k):
        return self.common and (self.common_users is None or k in self.common_users)


RSMA = SchemeStructure()
MULP = SchemeStructure(common=False)


def stream_names(K):
    return ["W_c"] + [f"W_{k + 1}" for k in range(K)]


def point_matrices(point):
    out = dict(zip(stream_names(point.K), point.W))
    out["Z"] = point.Z
    out["V"] = point.V
    return out


@dataclass
class TaylorExpansion:
    """First-order expansion of a concave log term at ``base_point``.

    Because the term is concave, ``upper_bound`` dominates it everywhere.
    """

    kind: str
    k: int
    wrt: str
    receiver: int
    base_value: float
    gradients: dict
    base_point: LiftedPoint = field(repr=False)

    def upper_bound(self, mats):
        """Evaluate at ``{name: matrix}``; names missing from ``mats`` stay at the base."""
        base = point_matrices(self.base_point)
        total = self.base_value
        for name, grad in self.gradients.items():
            X = mats.get(name, base[name])
            total += float(np.real(np.vdot(grad, X - base[name])))
        return total

    def affine(self, exprs, offset=0.0):
        """The same bound as a conic expression over ``{name: HermAffine}``."""
        base = point_matrices(self.base_point)
        out = Affine.constant(self.base_value + offset)
        for name, grad in self.gradients.items():
            out = out + exprs[name].inner(grad) - float(np.real(np.vdot(grad, base[name])))
        return out


def taylor_of_log_term(kind, point, channels, k=0, wrt="WZ"):
    """Linearize ``kind`` at ``point`` w.r.t. the covariances (``"WZ"``) or ``"V"``.

    The gradient of ``log2(c + sum_i <A_i, X_i>)`` w.r.t. ``X_i`` is
    ``A_i / (ln2 * arg)``. On the IRS side the pairing matrix is
    ``H_j (sum_i W_i + Z) H_j^H``.
    """
    if wrt not in ("WZ", "V"):
        raise ValueError(f"wrt must be 'WZ' or 'V', got {wrt!r}")
    j, wts = log_term_spec(kind, channels.K, k)
    arg = log_argument(kind, point, channels, k)
    if not (arg > 0 and np.isfinite(arg)):
        raise ValueError(f"log argument of {kind}[{k}] is not positive: {arg}")
    scale = 1.0 / (LN2 * arg)
    grads = {}
    if wrt == "WZ":
        A = receiver_gram(channels, j, point.V) * scale
        A = hermitize(A, "gradient")
        for name, w in zip(stream_names(channels.K), wts):
            if w:
                grads[name] = A
        grads["Z"] = A
    else:
        Hj = channels.H[j]
        S = np.tensordot(wts, point.W, axes=1) + point.Z
        grads["V"] = hermitize(Hj @ S @ Hj.conj().T * scale, "gradient")
    return TaylorExpansion(kind, k, wrt, j, math.log2(arg), grads, point)


@dataclass
class PenaltyState:
    rho: float
    lambda_max_vec: np.ndarray
    lambda_max: float
    residual: float


def penalty_state(V, rho):
    """Dominant eigenpair of ``V`` and its rank residual ``||V||_* - ||V||_2``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    V = hermitize(V, "V")
    vals, vecs = np.linalg.eigh(V)
    nuc = float(np.sum(np.abs(vals)))
    return PenaltyState(float(rho), vecs[:, -1], float(vals[-1]), nuc - float(np.abs(vals).max()))


# -- W step --------------------------------------------------------------------

@dataclass
class Subproblem:
    prog: ConicProgram
    kind: str
    base: LiftedPoint
    scale: float
    structure: SchemeStructure
    names: dict

    def solve(self, tol=1e-8, strict=False):
        return conic.solve(self.prog, tol=tol, strict=strict)

    def to_point(self, result):
        """Merge a solution into a new :class:`LiftedPoint`."""
        vals = result.values
        K = self.base.K
        if self.kind == "W":
            W = np.zeros_like(self.base.W)
            for l, name in enumerate(stream_names(K)):
                if name in vals:
                    W[l] = hermitize(self.scale * vals[name], name)
            Z = hermitize(self.scale * vals["Z"], "Z")
            r_c = np.array([vals.get(f"r_c_{k + 1}", 0.0) for k in range(K)])
            r_p = np.array([vals.get(f"r_p_{k + 1}", 0.0) for k in range(K)])
            return LiftedPoint(W, Z, self.base.V.copy(), r_c, r_p, vals["t"])
        V = hermitize(vals["V"], "V")
        dr_c = np.array([vals.get(f"dr_c_{k + 1}", 0.0) for k in range(K)])
        dr_p = np.array([vals.get(f"dr_p_{k + 1}", 0.0) for k in range(K)])
        return LiftedPoint(self.base.W.copy(), self.base.Z.copy(), V,
                           self.base.r_c + dr_c, self.base.r_p + dr_p, self.base.t + vals["dt"])


def _check_args(point, channels):
    for kind in EXACT_KINDS + LINEARIZED_KINDS:
        for k in range(channels.K):
            arg = log_argument(kind, point, channels, k)
            if not (arg > 0 and np.isfinite(arg)):
                raise ValueError(f"previous point infeasible: log argument {kind}[{k}] = {arg}")


def build_w_subproblem(channels, V, prev, p_max, structure=RSMA):
    """Precoder / AN / rate-allocation SDP for fixed ``V``, linearized at ``prev``."""
    K = channels.K
    base = replace(prev, V=np.asarray(V, dtype=complex))
    _check_args(base, channels)
    scale = p_max if p_max > 0 else 1.0
    prog = ConicProgram()
    names = stream_names(K)
    M = channels.M
    zero = conic.HermAffine.constant(np.zeros((M, M), complex))

    W = {}
    power = Affine()
    for l, name in enumerate(names):
        enabled = structure.common if l == 0 else structure.private_enabled(l - 1)
        if enabled:
            X = prog.hermitian(name, M)
            prog.add_psd(X)
            power = power + X.trace()
            W[name] = X * scale
        else:
            W[name] = zero
    Zv = prog.hermitian("Z", M)
    prog.add_psd(Zv)
    power = power + Zv.trace()
    exprs = dict(W, Z=Zv * scale)
    prog.add_constraint(power, "<=", p_max / scale)

    t = prog.scalar("t")
    r_c = [prog.scalar(f"r_c_{k + 1}", lb=0.0) if structure.share_enabled(k) else Affine() for k in range(K)]
    r_p = [prog.scalar(f"r_p_{k + 1}", lb=0.0) if structure.private_enabled(k) else Affine() for k in range(K)]
    for k in range(K):
        prog.add_constraint(r_c[k] + r_p[k], ">=", t)

    grams = [receiver_gram(channels, j, base.V) for j in range(K + 1)]
    exact_cache = {}

    def exact(kind, k):
        key = (kind, k) if kind in ("f_pk", "g_pe_k", "f_ck") else (kind, 0)
        if key not in exact_cache:
            j, wts = log_term_spec(kind, K, k)
            A = grams[j] / channels.sigma2[j]
            arg = asum(exprs[n].inner(A) for n, w in zip(names, wts) if w) + exprs["Z"].inner(A) + 1.0
            s = prog.scalar(f"log_{kind}_{key[1] + 1}")
            add_log2_lower_bound(prog, arg, s)
            exact_cache[key] = s
        return exact_cache[key]

    def lin(kind, k):
        te = taylor_of_log_term(kind, base, channels, k, wrt="WZ")
        return te.affine(exprs, offset=-math.log2(channels.sigma2[te.receiver]))

    f_e = lin("f_e", 0)
    for k in range(K):
        if not structure.private_enabled(k):
            continue
        lhs = exact("f_pk", k) - lin("g_pk", k) - f_e + exact("g_pe_k", k)
        prog.add_constraint(lhs, ">=", r_p[k])
    if structure.common:
        total_share = asum(r_c)
        for k in range(K):
            rhs = exact("f_ck", k) - lin("g_ck", k) - f_e + exact("g_ce", k)
            prog.add_constraint(total_share, "<=", rhs)
    prog.set_objective(t, "max")
    return Subproblem(prog, "W", base, scale, structure, {"t": "t"})


# -- V step --------------------------------------------------------------------

def active_streams(point, structure, rel_tol=ZERO_STREAM_TOL):
    """(common_active, private_active[K]) judged by the covariance traces."""
    tr = np.real(np.trace(point.W, axis1=1, axis2=2))
    ref = max(float(np.sum(tr) + np.real(np.trace(point.Z))), 1e-300)
    common = structure.common and tr[0] > rel_tol * ref
    private = np.array([structure.private_enabled(k) and tr[1 + k] > rel_tol * ref
                        for k in range(point.K)])
    return common, private


def build_v_subproblem(channels, fixed, V_prev, penalty, structure=RSMA):
    """Penalized IRS SDP for fixed covariances and rates.

    Residual variables ``dt``, ``dr_c``, ``dr_p`` measure the improvement over
    the fixed rates. A stream whose covariance is zero contributes identically
    zero secrecy rate for every ``V``, so its constraint is omitted rather
    than linearized.
    """
    K = channels.K
    n = channels.N + 1
    base = replace(fixed, V=hermitize(V_prev, "V_prev"))
    _check_args(base, channels)
    common_on, private_on = active_streams(base, structure)

    prog = ConicProgram()
    V = prog.hermitian("V", n)
    prog.add_psd(V)
    for i in range(n):
        prog.add_constraint(V.entry_real(i, i), "==", 1.0)
    dt = prog.scalar("dt", lb=0.0)
    dr_c = [prog.scalar(f"dr_c_{k + 1}", lb=0.0) if common_on and structure.share_enabled(k) else Affine()
            for k in range(K)]
    dr_p = [prog.scalar(f"dr_p_{k + 1}", lb=0.0) if private_on[k] else Affine() for k in range(K)]
    r_c = base.r_c if common_on else np.zeros(K)
    for k in range(K):
        prog.add_constraint(dr_c[k] + dr_p[k] + float(r_c[k] + base.r_p[k]), ">=", dt + base.t)

    exact_cache = {}

    def exact(kind, k):
        key = (kind, k) if kind in ("f_pk", "g_pe_k", "f_ck") else (kind, 0)
        if key not in exact_cache:
            j, wts = log_term_spec(kind, K, k)
            Hj = channels.H[j]
            S = np.tensordot(wts, base.W, axes=1) + base.Z
            B = Hj @ S @ Hj.conj().T / channels.sigma2[j]
            s = prog.scalar(f"log_{kind}_{key[1] + 1}")
            add_log2_lower_bound(prog, V.inner(B) + 1.0, s)
            exact_cache[key] = s
        return exact_cache[key]

    def lin(kind, k):
        te = taylor_of_log_term(kind, base, channels, k, wrt="V")
        return te.affine({"V": V}, offset=-math.log2(channels.sigma2[te.receiver]))

    f_e = lin("f_e", 0)
    for k in range(K):
        if not private_on[k]:
            continue
        lhs = exact("f_pk", k) - lin("g_pk", k) - f_e + exact("g_pe_k", k)
        prog.add_constraint(lhs, ">=", dr_p[k] + float(base.r_p[k]))
    if common_on:
        total_share = asum(dr_c) + float(np.sum(base.r_c))
        for k in range(K):
            rhs = exact("f_ck", k) - lin("g_ck", k) - f_e + exact("g_ce", k)
            prog.add_constraint(total_share, "<=", rhs)

    lam = penalty.lambda_max_vec
    L = np.outer(lam, lam.conj())
    gap = V.trace() - penalty.lambda_max - (V.inner(L) - float(np.real(np.vdot(L, base.V))))
    prog.set_objective(-dt - base.t + gap * (1.0 / (2.0 * penalty.rho)), "min")
    if not common_on:
        base = replace(base, r_c=np.zeros(K))
    return Subproblem(prog, "V", base, 1.0, structure, {"t": "dt"})


# -- extraction ----------------------------------------------------------------

def extract_rank_one(X, tol=1e-3):
    """Best rank-one factor ``sqrt(l1) u1`` of a PSD matrix and ``(tr - l1) / tr``.

    The ratio is at most ``tol`` when ``X`` is effectively rank one.
    """
    X = hermitize(X, "X")
    tr = float(np.real(np.trace(X)))
    n = X.shape[0]
    if tr <= 0:
        return np.zeros(n, dtype=complex), 0.0
    vals, vecs = np.linalg.eigh(X)
    top = vals[-1]
    tied = np.flatnonzero(np.abs(vals - top) <= 1e-12 * max(abs(top), 1e-300))
    if len(tied) > 1:
        logger.warning("degenerate top eigenvalue (multiplicity %d); taking the first eigenvector", len(tied))
    u = vecs[:, tied[0]]
    vec = math.sqrt(max(top, 0.0)) * u
    ratio = max(0.0, (tr - top) / tr)
    if ratio > tol:
        logger.info("rank-one residual %.3e exceeds %.1e", ratio, tol)
    return vec, ratio


def project_unit_modulus(v_raw):
    """Unit-modulus reflection vector with the last entry rotated to 1."""
    v = np.asarray(v_raw, dtype=complex).reshape(-1).copy()
    mag = np.abs(v)
    v = np.where(mag > 0, v / np.where(mag > 0, mag, 1.0), 1.0 + 0j)
    return v * v[-1].conj()
