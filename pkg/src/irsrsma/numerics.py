"""Shared tolerance constants and small linear-algebra helpers."""
import logging

import numpy as np

logger = logging.getLogger(__name__)

#: equality tolerance for closed-form identities
EQ_TOL = 1e-9
#: feasibility tolerance used when validating designs
FEAS_TOL = 1e-6
#: asymmetry above which `hermitize` warns
HERM_WARN_TOL = 1e-8
#: power fraction of p_max below which a lifted stream is treated as switched off
ZERO_STREAM_TOL = 1e-6
#: constraint residual accepted from a backend run that stopped short
STALL_ACCEPT_TOL = 1e-7


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


def hermitize(X, name="matrix"):
    """Return (X + X^H)/2, warning when X was noticeably non-Hermitian."""
    X = np.asarray(X, dtype=complex)
    asym = np.max(np.abs(X - X.conj().T)) if X.size else 0.0
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    if asym > HERM_WARN_TOL * scale:
        logger.warning("%s asymmetric by %.3e before symmetrization", name, asym)
    return 0.5 * (X + X.conj().T)


def herm_inner(A, B):
    """Real inner product tr(A^H B) for Hermitian arguments."""
    return float(np.real(np.vdot(A, B)))


def min_eig(X):
    X = np.asarray(X)
    if X.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0])
