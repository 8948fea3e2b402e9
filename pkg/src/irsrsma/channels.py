"""Channel generation for the IRS-aided downlink.

Receivers are indexed ``0..K-1`` for the legitimate users and ``K`` for the
eavesdropper throughout the package.
"""
from dataclasses import dataclass, field

import numpy as np

from .numerics import db_to_linear, dbm_to_watt


@dataclass(frozen=True)
class SystemGeometry:
    """Node positions (metres) and array sizes.

    ``N = 0`` describes the system without an IRS.
    """

    ap_pos: tuple = (0.0, 0.0)
    irs_pos: tuple = (50.0, 0.0)
    eve_pos: tuple = (45.0, 0.0)
    lu_pos: tuple = ((0.0, 20.0), (50.0, 5.0))
    M: int = 2
    N: int = 8

    def __post_init__(self):
        object.__setattr__(self, "ap_pos", _point(self.ap_pos))
        object.__setattr__(self, "irs_pos", _point(self.irs_pos))
        object.__setattr__(self, "eve_pos", _point(self.eve_pos))
        object.__setattr__(self, "lu_pos", tuple(_point(p) for p in self.lu_pos))
        if int(self.M) < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if int(self.N) < 0:
            raise ValueError(f"N must be >= 0, got {self.N}")
        if len(self.lu_pos) < 1:
            raise ValueError("at least one legitimate user is required")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))

    @property
    def K(self):
        return len(self.lu_pos)

    def with_users(self, k):
        """Geometry restricted to the first ``k`` users."""
        if not 1 <= k <= len(self.lu_pos):
            raise ValueError(f"geometry defines {len(self.lu_pos)} user positions, asked for {k}")
        return SystemGeometry(self.ap_pos, self.irs_pos, self.eve_pos, self.lu_pos[:k], self.M, self.N)


def _point(p):
    p = tuple(float(c) for c in p)
    if len(p) != 2 or not all(np.isfinite(p)):
        raise ValueError(f"positions must be finite 2D coordinates, got {p}")
    return p


@dataclass(frozen=True)
class FadingConfig:
    pl0_db: float = -30.0
    alpha_direct: float = 3.5
    alpha_cascaded: float = 2.2
    rician_k_db: float = 3.0

    def __post_init__(self):
        if self.alpha_direct <= 0 or self.alpha_cascaded <= 0:
            raise ValueError("path-loss exponents must be positive")


def pathloss_linear(distance_m, exponent, pl0_db):
    """Linear power gain ``10^(pl0/10) * d^-exponent``."""
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    if not exponent > 0:
        raise ValueError(f"exponent must be positive, got {exponent}")
    return 10.0 ** (pl0_db / 10.0) * distance_m ** (-exponent)


def sample_direct(dim, gain, rng):
    """Rayleigh vector: i.i.d. CN(0, gain) entries."""
    if gain < 0:
        raise ValueError("gain must be non-negative")
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return np.sqrt(gain / 2.0) * z


def steering(n, angle):
    """Half-wavelength ULA response; the array axis is the y-axis."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def _angle(src, dst):
    return np.arctan2(dst[1] - src[1], dst[0] - src[0])


def los_matrix(rows, cols, angle_rows, angle_cols):
    """Unit-modulus LoS component ``a_rows(angle) a_cols(angle)^H``."""
    return np.outer(steering(rows, angle_rows), steering(cols, angle_cols).conj())


def sample_cascaded_link(rows, cols, gain, rician_k_db, los, rng):
    """Rician link ``sqrt(gain) (sqrt(k/(1+k)) LoS + sqrt(1/(1+k)) NLoS)``.

    ``los`` is the deterministic unit-modulus LoS matrix of shape
    ``(rows, cols)``; ``rician_k_db = inf`` gives the pure LoS limit.
    """
    if gain < 0:
        raise ValueError("gain must be non-negative")
    los = np.asarray(los, dtype=complex).reshape(rows, cols)
    kappa = np.inf if np.isinf(rician_k_db) and rician_k_db > 0 else db_to_linear(rician_k_db)
    if np.isinf(kappa):
        return np.sqrt(gain) * los
    nlos = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)
    return np.sqrt(gain) * (np.sqrt(kappa / (1 + kappa)) * los + np.sqrt(1 / (1 + kappa)) * nlos)


def cascaded_matrix(h_r, G):
    """``diag(h_r^H) G``."""
    return h_r.conj()[:, None] * G


def stacked_matrix(Q, h_d):
    """``[Q; h_d^H]`` of shape ``(N+1, M)``."""
    return np.vstack([Q, h_d.conj()[None, :]])


@dataclass(frozen=True)
class ChannelRealization:
    """All links of one realization plus the derived cascaded channels.

    ``h_d`` is ``(K, M)`` and ``h_r`` is ``(K, N)``; ``Q`` and ``H`` hold
    ``K + 1`` matrices, the last one for the eavesdropper.
    """

    G: np.ndarray
    h_d: np.ndarray
    h_de: np.ndarray
    h_r: np.ndarray
    h_re: np.ndarray
    sigma2: np.ndarray
    Q: np.ndarray = field(init=False, repr=False)
    H: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = np.asarray(self.G, dtype=complex)
        h_d = np.atleast_2d(np.asarray(self.h_d, dtype=complex))
        M = h_d.shape[1]
        K = h_d.shape[0]
        G = G.reshape(-1, M)
        N = G.shape[0]
        h_r = np.asarray(self.h_r, dtype=complex).reshape(K, N)
        h_de = np.asarray(self.h_de, dtype=complex).reshape(M)
        h_re = np.asarray(self.h_re, dtype=complex).reshape(N)
        sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (K + 1,)).copy()
        if np.any(sigma2 <= 0):
            raise ValueError("noise variances must be positive")
        Q = np.array([cascaded_matrix(h, G) for h in list(h_r) + [h_re]]).reshape(K + 1, N, M)
        H = np.array([stacked_matrix(Q[j], hd) for j, hd in enumerate(list(h_d) + [h_de])])
        for name, arr in (("G", G), ("h_d", h_d), ("h_de", h_de), ("h_r", h_r),
                          ("h_re", h_re), ("sigma2", sigma2), ("Q", Q), ("H", H)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def M(self):
        return self.h_d.shape[1]

    @property
    def N(self):
        return self.G.shape[0]

    @property
    def K(self):
        return self.h_d.shape[0]

    @property
    def eve(self):
        return self.K

    def without_irs(self):
        """Same realization with the IRS removed (direct links only)."""
        M, K = self.M, self.K
        return ChannelRealization(np.zeros((0, M)), self.h_d, self.h_de,
                                  np.zeros((K, 0)), np.zeros(0), self.sigma2)

    def with_noise(self, sigma2):
        return ChannelRealization(self.G, self.h_d, self.h_de, self.h_r, self.h_re, sigma2)

    def effective(self, v):
        """Effective rows ``v^H H_j`` for every receiver, shape ``(K+1, M)``."""
        return np.array([effective_row(Hj, v) for Hj in self.H])


def effective_row(H_j, v):
    """``v^H H_j``: the combined direct-plus-reflected channel row."""
    H_j = np.asarray(H_j)
    v = np.asarray(v).reshape(-1)
    if v.shape[0] != H_j.shape[0]:
        raise ValueError(f"reflection vector has {v.shape[0]} entries, channel has {H_j.shape[0]} rows")
    return v.conj() @ H_j


def assemble_channels(geometry, fading, rng, noise_dbm=-80.0):
    """Draw one realization for ``geometry``.

    Direct links are Rayleigh with exponent ``alpha_direct``; the AP-IRS and
    IRS-receiver links are Rician with exponent ``alpha_cascaded``.
    """
    g, f = geometry, fading
    M, N, K = g.M, g.N, g.K
    pl = lambda a, b, alpha: pathloss_linear(float(np.hypot(a[0] - b[0], a[1] - b[1])), alpha, f.pl0_db)

    receivers = list(g.lu_pos) + [g.eve_pos]
    h_dir = np.array([sample_direct(M, pl(g.ap_pos, p, f.alpha_direct), rng) for p in receivers])
    if N > 0:
        # the AP-IRS link departs at the angle towards the IRS and arrives from the AP
        los_G = los_matrix(N, M, _angle(g.irs_pos, g.ap_pos), _angle(g.ap_pos, g.irs_pos))
        G = sample_cascaded_link(N, M, pl(g.ap_pos, g.irs_pos, f.alpha_cascaded), f.rician_k_db, los_G, rng)
        h_ref = np.array([
            sample_cascaded_link(N, 1, pl(g.irs_pos, p, f.alpha_cascaded), f.rician_k_db,
                                 steering(N, _angle(g.irs_pos, p)), rng).ravel()
            for p in receivers
        ])
    else:
        G = np.zeros((0, M))
        h_ref = np.zeros((K + 1, 0))
    sigma2 = np.full(K + 1, float(dbm_to_watt(noise_dbm)))
    return ChannelRealization(G, h_dir[:K], h_dir[K], h_ref[:K], h_ref[K], sigma2)


def realization_rng(seed, index=0):
    """Generator for realization ``index`` of an experiment with base ``seed``.

    Realization ``i`` depends only on ``seed + i``, so cells can run in any
    order or in isolation.
    """
    return np.random.default_rng(int(seed) + int(index))
