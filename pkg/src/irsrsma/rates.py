"""SINR, rate and secrecy-rate evaluation in vector and lifted form."""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import FEAS_TOL, hermitize, min_eig

LOG_KINDS = ("f_pk", "g_pk", "f_e", "g_pe_k", "f_ck", "g_ck", "g_ce")


@dataclass
class TransmitDesign:
    """Vector-form solution.

    ``w`` is ``(K, M)`` (one private precoder per row); ``v`` has ``N + 1``
    entries with the last one equal to 1.
    """

    w_c: np.ndarray
    w: np.ndarray
    Z: np.ndarray
    v: np.ndarray
    r_c_sec: np.ndarray

    def __post_init__(self):
        self.w_c = np.asarray(self.w_c, dtype=complex).reshape(-1)
        M = self.w_c.shape[0]
        self.w = np.asarray(self.w, dtype=complex).reshape(-1, M)
        self.Z = np.asarray(self.Z, dtype=complex).reshape(M, M)
        self.v = np.asarray(self.v, dtype=complex).reshape(-1)
        self.r_c_sec = np.asarray(self.r_c_sec, dtype=float).reshape(self.w.shape[0])

    @classmethod
    def zeros(cls, M, K, N):
        v = np.ones(N + 1, dtype=complex)
        return cls(np.zeros(M), np.zeros((K, M)), np.zeros((M, M)), v, np.zeros(K))

    @property
    def K(self):
        return self.w.shape[0]

    @property
    def precoders(self):
        """``(K+1, M)`` stack with the common precoder first."""
        return np.vstack([self.w_c[None, :], self.w])

    def power_split(self):
        return {
            "common": float(np.vdot(self.w_c, self.w_c).real),
            "private": float(np.sum(np.abs(self.w) ** 2)),
            "an": float(np.trace(self.Z).real),
        }

    def total_power(self):
        return sum(self.power_split().values())

    def lift(self):
        """Lifted point with ``W_l = w_l w_l^H`` and ``V = v v^H``; ``r_p`` and ``t`` start at 0."""
        W = np.array([np.outer(x, x.conj()) for x in self.precoders])
        V = np.outer(self.v, self.v.conj())
        K = self.K
        return LiftedPoint(W, self.Z.copy(), V, self.r_c_sec.copy(), np.zeros(K), 0.0)


@dataclass
class LiftedPoint:
    """Matrix-form iterate: ``W[0]`` is the common covariance, ``W[1+k]`` user k's."""

    W: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    r_c: np.ndarray
    r_p: np.ndarray
    t: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=complex)
        self.Z = np.asarray(self.Z, dtype=complex)
        self.V = np.asarray(self.V, dtype=complex)
        self.r_c = np.asarray(self.r_c, dtype=float)
        self.r_p = np.asarray(self.r_p, dtype=float)
        self.t = float(self.t)

    @property
    def K(self):
        return self.W.shape[0] - 1

    def copy(self):
        return LiftedPoint(self.W.copy(), self.Z.copy(), self.V.copy(),
                           self.r_c.copy(), self.r_p.copy(), self.t)

    def symmetrized(self):
        W = np.array([hermitize(Wl, f"W[{l}]") for l, Wl in enumerate(self.W)])
        return LiftedPoint(W, hermitize(self.Z, "Z"), hermitize(self.V, "V"),
                           self.r_c.copy(), self.r_p.copy(), self.t)


@dataclass
class RateReport:
    R_c_k: np.ndarray
    R_c_e: float
    R_p_k: np.ndarray
    R_pe_k: np.ndarray
    R_c_cap: float
    sr_k: np.ndarray
    min_sr: float
    r_c_sec: np.ndarray = field(default=None)

    def to_dict(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d):
        arrays = {"R_c_k", "R_p_k", "R_pe_k", "sr_k", "r_c_sec"}
        return cls(**{k: (np.asarray(v) if k in arrays and v is not None else v) for k, v in d.items()})


# -- vector form ---------------------------------------------------------------

def _received(design, channels):
    """Received powers: ``P[j, l] = |v^H H_j w_l|^2`` and AN power per receiver."""
    rows = channels.effective(design.v)  # (K+1, M)
    P = np.abs(rows @ design.precoders.T) ** 2  # (K+1 receivers, K+1 streams)
    an = np.real(np.einsum("jm,mn,jn->j", rows, design.Z, rows.conj()))
    return P, np.maximum(an, 0.0)


def sinr_common(design, channels, j):
    """SINR of the common stream at receiver ``j`` (``j = K`` is Eve)."""
    P, an = _received(design, channels)
    return P[j, 0] / (np.sum(P[j, 1:]) + an[j] + channels.sigma2[j])


def sinr_private(design, channels, k):
    """SINR of user k's private stream after the common stream is cancelled."""
    P, an = _received(design, channels)
    interf = np.sum(P[k, 1:]) - P[k, 1 + k]
    return P[k, 1 + k] / (interf + an[k] + channels.sigma2[k])


def sinr_eve_private(design, channels, k):
    """SINR of user k's private stream at Eve; the common stream is interference."""
    P, an = _received(design, channels)
    e = channels.eve
    interf = np.sum(P[e]) - P[e, 1 + k]
    return P[e, 1 + k] / (interf + an[e] + channels.sigma2[e])


def rate_report(design, channels):
    K = channels.K
    R_c_k = np.log2(1 + np.array([sinr_common(design, channels, k) for k in range(K)]))
    R_c_e = float(np.log2(1 + sinr_common(design, channels, channels.eve)))
    R_p_k = np.log2(1 + np.array([sinr_private(design, channels, k) for k in range(K)]))
    R_pe_k = np.log2(1 + np.array([sinr_eve_private(design, channels, k) for k in range(K)]))
    sr_k = design.r_c_sec + np.maximum(0.0, R_p_k - R_pe_k)
    return RateReport(
        R_c_k=R_c_k,
        R_c_e=R_c_e,
        R_p_k=R_p_k,
        R_pe_k=R_pe_k,
        R_c_cap=float(np.min(R_c_k)),
        sr_k=sr_k,
        min_sr=float(np.min(sr_k)),
        r_c_sec=design.r_c_sec.copy(),
    )


def allocate_common_rate(budget, private_sr, eligible=None):
    """Split a common secrecy-rate budget to maximize ``min_k(r_k + private_sr[k])``.

    Water-filling over the eligible users; non-eligible users get 0.
    """
    private_sr = np.asarray(private_sr, dtype=float)
    K = private_sr.shape[0]
    r = np.zeros(K)
    if budget <= 0:
        return r
    idx = np.arange(K) if eligible is None else np.asarray(sorted(eligible), dtype=int)
    if idx.size == 0:
        return r
    base = private_sr[idx]
    order = np.sort(base)
    # find the level L with sum(max(0, L - base)) = budget
    level = order[0] + budget
    for m in range(1, idx.size + 1):
        cand = (budget + order[:m].sum()) / m
        if m == idx.size or cand <= order[m]:
            level = cand
            break
    r[idx] = np.maximum(0.0, level - base)
    # guard against round-off pushing the sum past the budget
    s = r.sum()
    if s > budget:
        r *= budget / s
    return r


@dataclass
class FeasibilityReport:
    """Signed slack per constraint (negative means violated)."""

    residuals: dict
    violations: list
    common_strict_gap: float

    @property
    def feasible(self):
        return not self.violations

    def max_violation(self):
        return max((amt for _, amt in self.violations), default=0.0)


def validate_design(design, channels, p_max, tol=FEAS_TOL):
    """Check power, unit-modulus, AN and common-rate constraints of a vector design."""
    res = {}
    power = design.total_power()
    res["power"] = p_max - power
    N = channels.N
    v = design.v
    um = np.max(np.abs(np.abs(v[:N]) - 1.0)) if N else 0.0
    res["unit_modulus"] = -max(um, abs(v[N] - 1.0))
    Z = design.Z
    trZ = max(float(np.trace(Z).real), 0.0)
    res["an_psd"] = min_eig(Z) + 1e-9 * trZ
    res["r_c_nonneg"] = float(np.min(design.r_c_sec)) if design.K else 0.0
    rep = rate_report(design, channels)
    gap = rep.R_c_cap - rep.R_c_e
    res["common_budget"] = gap - float(np.sum(design.r_c_sec))
    viol = [(name, -s) for name, s in res.items() if s < -tol]
    return FeasibilityReport(res, viol, gap)


# -- lifted form -----------------------------------------------------------------

def log_term_spec(kind, K, k=0):
    """Receiver index and 0/1 weights over the ``K + 1`` covariances.

    Stream 0 is the common stream; stream ``1 + i`` is user i's private stream.
    Every term also includes the AN covariance and the receiver's noise.
    """
    if kind not in LOG_KINDS:
        raise ValueError(f"unknown log term {kind!r}")
    wts = np.zeros(K + 1)
    eve = K
    if kind == "f_pk":  # all private streams at user k
        j, wts[1:] = k, 1
    elif kind == "g_pk":  # private streams except k, at user k
        j, wts[1:] = k, 1
        wts[1 + k] = 0
    elif kind == "f_e":  # everything at Eve
        j, wts[:] = eve, 1
    elif kind == "g_pe_k":  # everything but stream k at Eve
        j, wts[:] = eve, 1
        wts[1 + k] = 0
    elif kind == "f_ck":  # everything at user k
        j, wts[:] = k, 1
    elif kind == "g_ck":  # private streams at user k
        j, wts[1:] = k, 1
    else:  # g_ce: private streams at Eve
        j, wts[1:] = eve, 1
    return j, wts


def receiver_gram(channels, j, V):
    """``H_j^H V H_j``."""
    Hj = channels.H[j]
    return Hj.conj().T @ V @ Hj


def log_argument(kind, point, channels, k=0):
    j, wts = log_term_spec(kind, channels.K, k)
    A = receiver_gram(channels, j, point.V)
    S = np.tensordot(wts, point.W, axes=1) + point.Z
    return float(np.real(np.vdot(A, S))) + channels.sigma2[j]


def eval_log_term(kind, point, channels, k=0):
    """``log2(sum_i tr(H^H V H W_i) + tr(H^H V H Z) + sigma^2)`` for the given kind."""
    arg = log_argument(kind, point, channels, k)
    assert arg > 0, f"non-positive log argument {arg} for {kind}"
    return math.log2(arg)


def lifted_rates(point, channels):
    """Exact secrecy-rate expressions at a lifted point.

    Returns ``(private_sr, common_gap)`` where ``private_sr[k]`` is
    ``(f_pk - g_pk) - (f_e - g_pe_k)`` and ``common_gap[k]`` is
    ``(f_ck - g_ck) - (f_e - g_ce)``.
    """
    K = channels.K
    f_e = eval_log_term("f_e", point, channels)
    g_ce = eval_log_term("g_ce", point, channels)
    priv = np.empty(K)
    comm = np.empty(K)
    for k in range(K):
        priv[k] = (eval_log_term("f_pk", point, channels, k) - eval_log_term("g_pk", point, channels, k)
                   - (f_e - eval_log_term("g_pe_k", point, channels, k)))
        comm[k] = (eval_log_term("f_ck", point, channels, k) - eval_log_term("g_ck", point, channels, k)
                   - (f_e - g_ce))
    return priv, comm


def lifted_residuals(point, channels, p_max):
    """Signed slacks of the lifted max-min constraints at ``point``."""
    priv, comm = lifted_rates(point, channels)
    res = {
        "rate_sum": float(np.min(point.r_c + point.r_p - point.t)),
        "private": float(np.min(priv - point.r_p)),
        "common": float(np.min(comm) - np.sum(point.r_c)),
        "power": p_max - float(np.real(sum(np.trace(Wl) for Wl in point.W) + np.trace(point.Z))),
        "diag_V": -float(np.max(np.abs(np.diag(point.V) - 1.0))),
        "psd": min([min_eig(Wl) for Wl in point.W] + [min_eig(point.Z), min_eig(point.V)]),
        "nonneg": float(min(np.min(point.r_c), np.min(point.r_p))),
    }
    return res

