"""Small conic modelling layer (linear, PSD and exponential cones).

Programs are built over real scalar variables and Hermitian matrix
variables. Every Hermitian variable of size n is stored as n**2 real
coordinates (diagonal, real and imaginary parts of the strict upper
triangle), and every PSD constraint is lowered to the real symmetric
embedding ``[[Re H, -Im H], [Im H, Re H]]`` before it reaches the backend.

The backend is Clarabel, reached only through :func:`solve`.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

SENSES = ("<=", "==", ">=")
LN2 = math.log(2.0)


class ProgramError(ValueError):
    """Raised for malformed programs or expressions."""


class Affine:
    """Real affine expression ``const + sum(coef[i] * x[i])``."""

    __slots__ = ("coef", "const")

    def __init__(self, coef=None, const=0.0):
        self.coef = dict(coef) if coef else {}
        self.const = float(const)

    @staticmethod
    def constant(value):
        return Affine(None, value)

    def copy(self):
        return Affine(self.coef, self.const)

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, Affine):
            for i, c in other.coef.items():
                out.coef[i] = out.coef.get(i, 0.0) + c
            out.const += other.const
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return Affine({i: -c for i, c in self.coef.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if isinstance(s, Affine):
            raise ProgramError("product of two affine expressions is not affine")
        s = float(s)
        return Affine({i: s * c for i, c in self.coef.items()}, s * self.const)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def value(self, x):
        return self.const + sum(c * x[i] for i, c in self.coef.items())

    def __repr__(self):
        return f"Affine({len(self.coef)} terms, const={self.const:.6g})"


def asum(items):
    out = Affine()
    for it in items:
        out = out + it
    return out


class HermAffine:
    """Matrix-valued affine expression ``const + sum(x[idx[k]] * mats[k])``.

    Complex instances are Hermitian; real instances (from the embedding) are
    symmetric.
    """

    __slots__ = ("const", "idx", "mats")

    def __init__(self, const, idx=None, mats=None):
        const = np.asarray(const)
        if const.ndim != 2 or const.shape[0] != const.shape[1]:
            raise ProgramError(f"matrix expression must be square, got {const.shape}")
        self.const = const
        n = const.shape[0]
        if idx is None:
            self.idx = np.zeros(0, dtype=np.int64)
            self.mats = np.zeros((0, n, n), dtype=const.dtype)
        else:
            self.idx = np.asarray(idx, dtype=np.int64)
            self.mats = np.asarray(mats)

    @property
    def n(self):
        return self.const.shape[0]

    @staticmethod
    def constant(M):
        return HermAffine(np.asarray(M))

    def _combine(self, other, sign):
        if isinstance(other, HermAffine):
            if other.n != self.n:
                raise ProgramError("dimension mismatch in matrix expression")
            idx = np.concatenate([self.idx, other.idx])
            mats = np.concatenate([self.mats, sign * other.mats])
            uniq, inv = np.unique(idx, return_inverse=True)
            if len(uniq) < len(idx):
                merged = np.zeros((len(uniq), self.n, self.n), dtype=mats.dtype)
                np.add.at(merged, inv, mats)
                idx, mats = uniq, merged
            return HermAffine(self.const + sign * other.const, idx, mats)
        other = np.asarray(other)
        if other.shape != self.const.shape:
            raise ProgramError("dimension mismatch in matrix expression")
        return HermAffine(self.const + sign * other, self.idx, self.mats)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return HermAffine(-self.const, self.idx, -self.mats)

    def __mul__(self, s):
        s = float(s)
        return HermAffine(s * self.const, self.idx, s * self.mats)

    __rmul__ = __mul__

    def inner(self, A):
        """Affine expression for the real pairing ``tr(A^H X)``."""
        A = np.asarray(A)
        if A.shape != self.const.shape:
            raise ProgramError("dimension mismatch in inner product")
        coefs = np.real(np.einsum("ij,kij->k", A.conj(), self.mats))
        const = float(np.real(np.vdot(A, self.const)))
        return Affine({int(i): float(c) for i, c in zip(self.idx, coefs) if c != 0.0}, const)

    def trace(self):
        return self.inner(np.eye(self.n))

    def entry_real(self, i, j):
        coefs = np.real(self.mats[:, i, j])
        return Affine(
            {int(k): float(c) for k, c in zip(self.idx, coefs) if c != 0.0},
            float(np.real(self.const[i, j])),
        )

    def value(self, x):
        if len(self.idx) == 0:
            return self.const.copy()
        return self.const + np.tensordot(np.asarray(x)[self.idx], self.mats, axes=1)


def hermitian_embedding(H):
    """Real symmetric 2n x 2n embedding of a Hermitian matrix or expression."""
    if isinstance(H, HermAffine):
        const = hermitian_embedding(H.const)
        if len(H.idx):
            re, im = np.real(H.mats), np.imag(H.mats)
            top = np.concatenate([re, -im], axis=2)
            bot = np.concatenate([im, re], axis=2)
            mats = np.concatenate([top, bot], axis=1)
        else:
            mats = np.zeros((0, 2 * H.n, 2 * H.n))
        return HermAffine(const, H.idx, mats)
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ProgramError(f"embedding needs a square matrix, got {H.shape}")
    re, im = np.real(H), np.imag(H)
    return np.block([[re, -im], [im, re]])


@dataclass
class HermVar:
    name: str
    n: int
    offset: int


@dataclass
class ConicProgram:
    """Conic program over named real scalars and Hermitian matrices.

    Constraints are stored as given; lowering to the backend's standard
    form happens in :func:`solve`.
    """

    scalar_vars: dict = field(default_factory=dict)
    herm_vars: dict = field(default_factory=dict)
    affine_constraints: list = field(default_factory=list)
    psd_constraints: list = field(default_factory=list)
    exp_cone_constraints: list = field(default_factory=list)
    objective: Affine = field(default_factory=Affine)
    sense: str = "max"
    nvars: int = 0

    def scalar(self, name, lb=None):
        if name in self.scalar_vars or name in self.herm_vars:
            raise ProgramError(f"duplicate variable {name!r}")
        i = self.nvars
        self.scalar_vars[name] = i
        self.nvars += 1
        x = Affine({i: 1.0})
        if lb is not None:
            self.add_constraint(x, ">=", lb)
        return x

    def hermitian(self, name, n):
        if name in self.scalar_vars or name in self.herm_vars:
            raise ProgramError(f"duplicate variable {name!r}")
        var = HermVar(name, int(n), self.nvars)
        self.herm_vars[name] = var
        self.nvars += var.n * var.n
        return self.herm_expr(name)

    def herm_expr(self, name):
        var = self.herm_vars[name]
        return HermAffine(np.zeros((var.n, var.n), complex), *_herm_basis(var.n, var.offset))

    def add_constraint(self, lhs, sense, rhs=0.0):
        if sense not in SENSES:
            raise ProgramError(f"unknown sense {sense!r}")
        expr = lhs - rhs
        if not isinstance(expr, Affine):
            expr = Affine.constant(expr)
        self._check_refs(expr.coef)
        self.affine_constraints.append((expr, sense))

    def add_psd(self, H):
        if not isinstance(H, HermAffine):
            H = HermAffine.constant(H)
        self._check_refs(H.idx)
        self.psd_constraints.append(H)

    def add_exp_cone(self, x, y, z):
        """Require ``y * exp(x / y) <= z`` with ``y > 0``."""
        trip = tuple(e if isinstance(e, Affine) else Affine.constant(e) for e in (x, y, z))
        for e in trip:
            self._check_refs(e.coef)
        self.exp_cone_constraints.append(trip)

    def set_objective(self, expr, sense="max"):
        if sense not in ("max", "min"):
            raise ProgramError(f"unknown objective sense {sense!r}")
        if not isinstance(expr, Affine):
            expr = Affine.constant(expr)
        self._check_refs(expr.coef)
        self.objective = expr
        self.sense = sense

    def _check_refs(self, indices):
        for i in indices:
            if not 0 <= int(i) < self.nvars:
                raise ProgramError(f"expression references undeclared variable index {i}")

    def unpack(self, x):
        """Map a flat solution vector to ``{name: value}``."""
        out = {name: float(x[i]) for name, i in self.scalar_vars.items()}
        for name, var in self.herm_vars.items():
            out[name] = self.herm_expr(name).value(x)
        return out

    def residuals(self, x):
        """Worst violation per constraint family at ``x`` (0 when satisfied)."""
        lin = 0.0
        for expr, sense in self.affine_constraints:
            v = expr.value(x)
            viol = {"<=": max(v, 0.0), ">=": max(-v, 0.0), "==": abs(v)}[sense]
            lin = max(lin, viol)
        psd = 0.0
        for H in self.psd_constraints:
            M = H.value(x)
            psd = max(psd, max(0.0, -float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])))
        expc = 0.0
        for ex, ey, ez in self.exp_cone_constraints:
            a, b, c = ex.value(x), ey.value(x), ez.value(x)
            if b <= 0:
                viol = max(-b, 0.0) + max(-c, 0.0)
                if b == 0 and a <= 0 and c >= 0:
                    viol = 0.0
            else:
                viol = max(0.0, b * math.exp(min(a / b, 700.0)) - c)
            expc = max(expc, viol)
        return {"linear": lin, "psd": psd, "exp": expc}


def _herm_basis(n, offset):
    """Index vector and basis matrices for an n x n Hermitian variable."""
    mats = np.zeros((n * n, n, n), dtype=complex)
    k = 0
    for i in range(n):
        mats[k, i, i] = 1.0
        k += 1
    for i in range(n):
        for j in range(i + 1, n):
            mats[k, i, j] = mats[k, j, i] = 1.0
            k += 1
            mats[k, i, j] = 1j
            mats[k, j, i] = -1j
            k += 1
    return np.arange(offset, offset + n * n), mats


def add_log2_lower_bound(prog, a, t):
    """Append the constraint ``t <= log2(a)`` as an exponential cone.

    ``(t * ln 2, 1, a)`` must lie in the exponential cone, so ``a`` has to be
    positive wherever the program is feasible.
    """
    if not isinstance(t, Affine):
        t = Affine.constant(t)
    if not isinstance(a, Affine):
        a = Affine.constant(a)
    prog.add_exp_cone(t * LN2, Affine.constant(1.0), a)


# -- backend -----------------------------------------------------------------

@dataclass
class SolverResult:
    status: str
    x: np.ndarray
    values: dict
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    solve_time: float = 0.0
    backend_status: str = ""

    @property
    def optimal(self):
        return self.status == "optimal"

    def value(self, expr):
        return expr.value(self.x)


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def _svec_rows(m):
    """(i, j, scale) for the column-wise upper triangle of an m x m matrix."""
    rows = []
    r2 = math.sqrt(2.0)
    for j in range(m):
        for i in range(j + 1):
            rows.append((i, j, 1.0 if i == j else r2))
    return rows


def lower(prog):
    """Lower to the backend's standard form ``A x + s = b, s in K``.

    Returns ``(q, A, b, cones, obj_sign)`` where the backend minimizes
    ``q @ x`` and ``obj_sign`` converts its objective back to the program's
    sense.
    """
    import clarabel

    n = prog.nvars
    rows, cols, vals, b, cones = [], [], [], [], []
    r = 0

    def put_affine(expr, sign=1.0):
        # row encodes s = sign * expr(x), i.e. A = -sign * coef, b = sign * const
        nonlocal r
        for i, c in expr.coef.items():
            rows.append(r)
            cols.append(i)
            vals.append(-sign * c)
        b.append(sign * expr.const)
        r += 1

    eqs = [e for e, s in prog.affine_constraints if s == "=="]
    ineqs = [(e, s) for e, s in prog.affine_constraints if s != "=="]
    for e in eqs:
        put_affine(e)
    if eqs:
        cones.append(clarabel.ZeroConeT(len(eqs)))
    for e, s in ineqs:
        put_affine(e, 1.0 if s == ">=" else -1.0)
    if ineqs:
        cones.append(clarabel.NonnegativeConeT(len(ineqs)))
    for trip in prog.exp_cone_constraints:
        for e in trip:
            put_affine(e)
        cones.append(clarabel.ExponentialConeT())
    for H in prog.psd_constraints:
        S = hermitian_embedding(H) if np.iscomplexobj(H.const) or np.iscomplexobj(H.mats) else H
        m = S.n
        tri = _svec_rows(m)
        ii = np.array([t[0] for t in tri])
        jj = np.array([t[1] for t in tri])
        sc = np.array([t[2] for t in tri])
        cvec = np.real(S.const[ii, jj]) * sc
        if len(S.idx):
            block = np.real(S.mats[:, ii, jj]) * sc  # (nterms, ntri)
            nz_t, nz_r = np.nonzero(block)
            rows.extend((r + nz_r).tolist())
            cols.extend(S.idx[nz_t].tolist())
            vals.extend((-block[nz_t, nz_r]).tolist())
        b.extend(cvec.tolist())
        r += len(tri)
        cones.append(clarabel.PSDTriangleConeT(m))
    A = sp.csc_matrix((vals, (rows, cols)), shape=(r, n))
    q = np.zeros(n)
    for i, c in prog.objective.coef.items():
        q[i] += c
    obj_sign = 1.0
    if prog.sense == "max":
        q = -q
        obj_sign = -1.0
    return q, A, np.asarray(b, dtype=float), cones, obj_sign


#: backend setting overrides tried in order when a solve stalls numerically
#: or only reaches reduced accuracy
RETRY_LADDER = ({}, {"equilibrate_enable": False}, {"static_regularization_constant": 1e-7},
                {"max_step_fraction": 0.95})


def solve(prog, tol=1e-4, max_iter=200, verbose=False, retry=True, strict=False):
    """Solve ``prog`` with the interior-point backend.

    ``tol`` sets the backend's duality-gap tolerances; feasibility tolerances
    stay at 1e-8. When the backend stalls (neither a solution nor a
    certificate), the solve is repeated with the overrides in
    ``RETRY_LADDER``. With ``strict`` a reduced-accuracy answer also climbs
    the ladder and is returned as optimal only when no rung does better.
    The input program is not modified.
    """
    import clarabel

    q, A, b, cones, obj_sign = lower(prog)
    n = prog.nvars
    P = sp.csc_matrix((n, n))
    # the backend sees a unit-scale objective; values are recomputed from x
    qmax = float(np.max(np.abs(q))) if n else 0.0
    if qmax > 0:
        q = q / qmax
    ladder = RETRY_LADDER if retry else RETRY_LADDER[:1]
    t0 = time.perf_counter()
    fallback = None
    for overrides in ladder:
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.max_iter = max_iter
        settings.max_threads = 1
        for key, val in overrides.items():
            setattr(settings, key, val)
        try:
            sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
        except Exception as exc:  # backend panics surface as generic exceptions
            logger.error("backend failure: %s", exc)
            x = np.full(n, np.nan)
            return SolverResult("numerical_limit", x, {}, math.nan, math.inf, math.inf,
                                backend_status=str(exc))
        backend_status = str(sol.status)
        status = _STATUS_MAP.get(backend_status, "numerical_limit")
        if strict and backend_status.startswith("Almost"):
            if fallback is None:
                fallback = (sol, backend_status, status)
        elif status != "numerical_limit":
            break
        logger.info("backend stopped (%s) with %s", backend_status, overrides or "defaults")
    else:
        if fallback is not None:
            sol, backend_status, status = fallback
    elapsed = time.perf_counter() - t0
    x = np.asarray(sol.x, dtype=float)
    obj = prog.objective.value(x) if status == "optimal" else math.nan
    values = prog.unpack(x) if status == "optimal" else {}
    return SolverResult(
        status=status,
        x=x,
        values=values,
        objective=float(obj),
        primal_residual=float(sol.r_prim),
        dual_residual=float(sol.r_dual),
        iterations=int(sol.iterations),
        solve_time=elapsed,
        backend_status=backend_status,
    )


# -- text format -------------------------------------------------------------
#
#   conicprog 1
#   nvars <n>
#   scalar <name> <index>
#   herm <name> <dim> <offset>
#   objective <max|min> <const>
#   linear <sense> <const>
#   psd <dim> <nconst> <nterms>
#   exp
# Each expression header is followed by its triplets:
#   c <index> <coef>                   scalar coefficient
#   k <i> <j> <re> <im>                matrix constant entry
#   m <index> <i> <j> <re> <im>        matrix coefficient entry
# and an ``end`` line. Exponential cones list three scalar expressions, each
# introduced by ``x``/``y``/``z`` with its constant.

def _dump_affine(expr, out):
    for i in sorted(expr.coef):
        out.append(f"c {i} {expr.coef[i]!r}")


def dumps(prog):
    out = ["conicprog 1", f"nvars {prog.nvars}"]
    for name, i in prog.scalar_vars.items():
        out.append(f"scalar {name} {i}")
    for name, v in prog.herm_vars.items():
        out.append(f"herm {name} {v.n} {v.offset}")
    out.append(f"objective {prog.sense} {prog.objective.const!r}")
    _dump_affine(prog.objective, out)
    out.append("end")
    for expr, sense in prog.affine_constraints:
        out.append(f"linear {sense} {expr.const!r}")
        _dump_affine(expr, out)
        out.append("end")
    for H in prog.psd_constraints:
        kind = "complex" if np.iscomplexobj(H.const) or np.iscomplexobj(H.mats) else "real"
        out.append(f"psd {H.n} {kind}")
        ci, cj = np.nonzero(H.const)
        for i, j in zip(ci, cj):
            z = complex(H.const[i, j])
            out.append(f"k {i} {j} {z.real!r} {z.imag!r}")
        for t, idx in enumerate(H.idx):
            mi, mj = np.nonzero(H.mats[t])
            for i, j in zip(mi, mj):
                z = complex(H.mats[t, i, j])
                out.append(f"m {idx} {i} {j} {z.real!r} {z.imag!r}")
        out.append("end")
    for trip in prog.exp_cone_constraints:
        out.append("exp")
        for tag, e in zip("xyz", trip):
            out.append(f"{tag} {e.const!r}")
            _dump_affine(e, out)
        out.append("end")
    return "\n".join(out) + "\n"


def loads(text):
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][:2] != ["conicprog", "1"]:
        raise ProgramError("not a conicprog v1 document")
    prog = ConicProgram()
    pos = 1

    def read_affine(const):
        nonlocal pos
        e = Affine(None, float(const))
        while pos < len(lines) and lines[pos][0] == "c":
            e.coef[int(lines[pos][1])] = float(lines[pos][2])
            pos += 1
        return e

    while pos < len(lines):
        tok = lines[pos]
        head = tok[0]
        pos += 1
        if head == "nvars":
            prog.nvars = int(tok[1])
        elif head == "scalar":
            prog.scalar_vars[tok[1]] = int(tok[2])
        elif head == "herm":
            prog.herm_vars[tok[1]] = HermVar(tok[1], int(tok[2]), int(tok[3]))
        elif head == "objective":
            prog.sense = tok[1]
            prog.objective = read_affine(tok[2])
            _expect_end(lines, pos)
            pos += 1
        elif head == "linear":
            expr = read_affine(tok[2])
            prog.affine_constraints.append((expr, tok[1]))
            _expect_end(lines, pos)
            pos += 1
        elif head == "psd":
            n = int(tok[1])
            dtype = complex if tok[2] == "complex" else float
            const = np.zeros((n, n), dtype=dtype)
            terms = {}
            while lines[pos][0] in ("k", "m"):
                t = lines[pos]
                if t[0] == "k":
                    z = complex(float(t[3]), float(t[4]))
                    const[int(t[1]), int(t[2])] = z if dtype is complex else z.real
                else:
                    mat = terms.setdefault(int(t[1]), np.zeros((n, n), dtype=dtype))
                    z = complex(float(t[4]), float(t[5]))
                    mat[int(t[2]), int(t[3])] = z if dtype is complex else z.real
                pos += 1
            _expect_end(lines, pos)
            pos += 1
            idx = np.array(sorted(terms), dtype=np.int64)
            mats = np.array([terms[i] for i in idx]) if len(idx) else None
            prog.psd_constraints.append(HermAffine(const, idx if len(idx) else None, mats))
        elif head == "exp":
            trip = []
            for tag in "xyz":
                t = lines[pos]
                if t[0] != tag:
                    raise ProgramError(f"expected {tag!r} in exp block, got {t[0]!r}")
                pos += 1
                trip.append(read_affine(t[1]))
            _expect_end(lines, pos)
            pos += 1
            prog.exp_cone_constraints.append(tuple(trip))
        else:
            raise ProgramError(f"unexpected line {' '.join(tok)!r}")
    return prog


def _expect_end(lines, pos):
    if pos >= len(lines) or lines[pos][0] != "end":
        raise ProgramError(f"missing 'end' at line {pos + 1}")
