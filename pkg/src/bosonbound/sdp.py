"""Primal-dual interior-point solver for real semidefinite programs.

The standard form handled here is the pair

    (P)  minimize   c.x   subject to  A x = b,  x in R^nf x S^n1_+ x ... x S^ns_+
    (D)  maximize   b.y   subject to  c - A^T y in {0}^nf x S^n1_+ x ... x S^ns_+

where the first ``nf`` coordinates of ``x`` are free. The solver is an
infeasible-start path-following method with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps. Two arithmetic backends share the same
iteration code: numpy float64 (``mantissa_bits == 53``) and python-flint
ball arithmetic used at midpoint precision (any other ``mantissa_bits``).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "Constraint",
    "SdpStandardForm",
    "SolverSettings",
    "SdpSolution",
    "RankDeficientError",
    "solve",
    "factorization_check",
    "dump_form",
    "load_form",
]

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near_optimal"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"

# an objective this large on a (near-)feasible side is read as a ray
_DIVERGENCE = 1e12
# extra solves of the Newton system per search direction
_REFINE_STEPS = 3

_RANK_CHECK_LIMIT = 4000

log = logging.getLogger(__name__)


class RankDeficientError(ValueError):
    """The equality system of a standard form is not of full rank."""


class _NotPositiveDefinite(ArithmeticError):
    pass


@dataclass
class Constraint:
    """One row of ``A x = b``.

    ``blocks[j]`` maps ``(r, s)`` with ``r <= s`` to the entry of the
    symmetric coefficient matrix of block ``j`` (the ``(s, r)`` entry is
    implied).
    """

    free: dict[int, object] = field(default_factory=dict)
    blocks: dict[int, dict[tuple[int, int], object]] = field(default_factory=dict)
    rhs: object = 0


@dataclass
class SdpStandardForm:
    block_sizes: tuple[int, ...]
    free_count: int
    constraints: list[Constraint]
    c_free: dict[int, object] = field(default_factory=dict)
    c_blocks: dict[int, dict[tuple[int, int], object]] = field(default_factory=dict)

    def __post_init__(self):
        self.block_sizes = tuple(int(n) for n in self.block_sizes)
        if any(n < 1 for n in self.block_sizes):
            raise ValueError("block sizes must be >= 1")
        if self.free_count < 0:
            raise ValueError("free_count must be >= 0")

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def validate(self) -> None:
        nb = len(self.block_sizes)

        def check_block(j, entries):
            if not 0 <= j < nb:
                raise ValueError(f"block index {j} out of range")
            n = self.block_sizes[j]
            for r, s in entries:
                if not (0 <= r <= s < n):
                    raise ValueError(f"entry {(r, s)} invalid for block {j} of size {n}")

        for i, con in enumerate(self.constraints):
            for f in con.free:
                if not 0 <= f < self.free_count:
                    raise ValueError(f"constraint {i}: free index {f} out of range")
            for j, ent in con.blocks.items():
                check_block(j, ent)
        for f in self.c_free:
            if not 0 <= f < self.free_count:
                raise ValueError(f"objective free index {f} out of range")
        for j, ent in self.c_blocks.items():
            check_block(j, ent)


@dataclass(frozen=True)
class SolverSettings:
    tol: float | None = None
    max_iters: int = 100
    mantissa_bits: int = 53

    @property
    def effective_tol(self) -> float:
        if self.tol is not None:
            return self.tol
        # roughly eps**0.6: what a path-following method reliably attains
        return max(2.0 ** (-0.6 * self.mantissa_bits), 1e-300)


@dataclass
class SdpSolution:
    status: str
    x_free: np.ndarray
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    primal_objective: Fraction
    dual_objective: Fraction
    duality_gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    mantissa_bits: int
    solve_time: float
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# arithmetic backends
# --------------------------------------------------------------------------


class _Float64Backend:
    """numpy/scipy implementation of the kernels the iteration needs."""

    bits = 53

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    # conversions ----------------------------------------------------------
    def num(self, v):
        return float(v)

    def to_fraction(self, v) -> Fraction:
        return Fraction(float(v))

    def to_numpy(self, a) -> np.ndarray:
        return np.array(a, dtype=float)

    def export(self, a) -> np.ndarray:
        return np.array(a, dtype=float)

    def from_numpy(self, a):
        return np.array(a, dtype=float)

    # dense matrices -------------------------------------------------------
    def eye(self, n, s=1.0):
        return np.eye(n) * s

    def sym_from_entries(self, n, entries):
        out = np.zeros((n, n))
        for (r, s), v in entries.items():
            out[r, s] = out[s, r] = float(v)
        return out

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def scale(self, s, a):
        return float(s) * a

    def mm(self, a, b):
        return a @ b

    def t(self, a):
        return a.T

    def sym(self, a):
        return 0.5 * (a + a.T)

    def inner(self, a, b) -> float:
        return float(np.vdot(a, b))

    def fnorm(self, a) -> float:
        return float(np.linalg.norm(a))

    def chol(self, a):
        try:
            return np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise _NotPositiveDefinite(str(exc)) from exc

    def inv_lower(self, L):
        return sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)

    def scale_cols(self, a, v):
        return a * np.asarray(v, dtype=float)[None, :]

    def scale_rows(self, a, v):
        return a * np.asarray(v, dtype=float)[:, None]

    def lyap_diag(self, T, d):
        d = np.asarray(d, dtype=float)
        return 2.0 * T / (d[:, None] + d[None, :])

    def orthonormalize(self, Q):
        Qo, R = np.linalg.qr(Q)
        sign = np.where(np.diag(R) < 0, -1.0, 1.0)
        return Qo * sign[None, :]

    def sqrt(self, v):
        return math.sqrt(float(v))

    def diag(self, a):
        return np.diag(a).copy()

    # vectors ---------------------------------------------------------------
    def vec(self, values):
        return np.array([float(v) for v in values], dtype=float)

    def vzeros(self, n):
        return np.zeros(n)

    def vadd(self, a, b):
        return a + b

    def vsub(self, a, b):
        return a - b

    def vscale(self, s, a):
        return float(s) * a

    def vdot(self, a, b) -> float:
        return float(a @ b)

    def vnorm(self, a) -> float:
        return float(np.linalg.norm(a))

    # constraint operator ----------------------------------------------------
    def prepare(self, form: SdpStandardForm):
        m = form.num_constraints
        data = _PreparedF64()
        data.m = m
        data.nf = form.free_count
        data.sizes = form.block_sizes
        data.b = np.array([float(c.rhs) for c in form.constraints], dtype=float)
        data.c_free = np.zeros(form.free_count)
        for f, v in form.c_free.items():
            data.c_free[f] = float(v)
        data.C = [self.sym_from_entries(n, form.c_blocks.get(j, {})) for j, n in enumerate(form.block_sizes)]
        rows, cols, vals = [], [], []
        for i, con in enumerate(form.constraints):
            for f, v in con.free.items():
                rows.append(i)
                cols.append(f)
                vals.append(float(v))
        data.Af = sp.csr_matrix((vals, (rows, cols)), shape=(m, form.free_count)).toarray()
        data.A_flat = []
        data.A_parts = []
        for j, n in enumerate(form.block_sizes):
            rows, cols, vals = [], [], []
            parts = []
            for i, con in enumerate(form.constraints):
                ent = con.blocks.get(j)
                P, Q, V = [], [], []
                if ent:
                    for (r, s), v in ent.items():
                        v = float(v)
                        if v == 0.0:
                            continue
                        P.append(r)
                        Q.append(s)
                        V.append(v)
                        rows.append(i)
                        cols.append(r * n + s)
                        vals.append(v)
                        if r != s:
                            P.append(s)
                            Q.append(r)
                            V.append(v)
                            rows.append(i)
                            cols.append(s * n + r)
                            vals.append(v)
                parts.append((np.array(P, dtype=int), np.array(Q, dtype=int), np.array(V)))
            data.A_flat.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, n * n)))
            data.A_parts.append(parts)
        return data

    def A_apply(self, data, Xs):
        out = np.zeros(data.m)
        for j, X in enumerate(Xs):
            out += data.A_flat[j] @ X.reshape(-1)
        return out

    def At_apply(self, data, y):
        return [(data.A_flat[j].T @ y).reshape(n, n) for j, n in enumerate(data.sizes)]

    def Af_apply(self, data, xf):
        return data.Af @ xf if data.nf else np.zeros(data.m)

    def Aft_apply(self, data, y):
        return data.Af.T @ y

    def schur(self, data, Ws):
        M = np.zeros((data.m, data.m))
        for j, W in enumerate(Ws):
            n = data.sizes[j]
            T = np.zeros((data.m, n * n))
            for k, (P, Q, V) in enumerate(data.A_parts[j]):
                if len(V):
                    T[k] = ((W[:, P] * V[None, :]) @ W[Q, :]).reshape(-1)
            M += np.asarray(data.A_flat[j] @ T.T)
        return 0.5 * (M + M.T)

    def kkt_factor(self, data, M):
        if data.nf:
            K = np.block([[M, data.Af], [data.Af.T, np.zeros((data.nf, data.nf))]])
        else:
            K = M
        scale = np.sqrt(np.maximum(np.abs(np.diag(K)), 1e-300))
        scale[data.m:] = 1.0
        Ks = K / scale[:, None] / scale[None, :]
        lu = sla.lu_factor(Ks, check_finite=True)
        if np.any(np.abs(np.diag(lu[0])) == 0.0):
            raise _NotPositiveDefinite("singular Newton system")
        return (lu, scale, K)

    def kkt_solve(self, data, fac, r1, r2):
        lu, scale, K = fac
        rhs = np.concatenate([r1, r2]) if data.nf else r1
        sol = sla.lu_solve(lu, rhs / scale) / scale
        # one step of iterative refinement
        sol += sla.lu_solve(lu, (rhs - K @ sol) / scale) / scale
        if not np.all(np.isfinite(sol)):
            raise _NotPositiveDefinite("non-finite Newton direction")
        return sol[: data.m], sol[data.m:]


class _PreparedF64:
    pass


class _ArbBackend:
    """python-flint ``arb_mat`` kernels evaluated at midpoint precision."""

    def __init__(self, bits: int):
        import flint

        self.flint = flint
        self.bits = int(bits)
        self._saved = None

    def __enter__(self):
        self._saved = self.flint.ctx.prec
        self.flint.ctx.prec = self.bits
        return self

    def __exit__(self, *exc):
        self.flint.ctx.prec = self._saved
        return False

    # conversions ----------------------------------------------------------
    def num(self, v):
        arb, fmpq = self.flint.arb, self.flint.fmpq
        if isinstance(v, Fraction):
            return arb(fmpq(v.numerator, v.denominator))
        if isinstance(v, int):
            return arb(v)
        if isinstance(v, float):
            return arb(v)
        if isinstance(v, self.flint.arb):
            return v.mid()
        return arb(fmpq(*Fraction(v).as_integer_ratio()))

    def to_fraction(self, v) -> Fraction:
        man, exp = v.mid().man_exp()
        man, exp = int(man), int(exp)
        return Fraction(man * 2**exp) if exp >= 0 else Fraction(man, 2 ** (-exp))

    def to_numpy(self, a) -> np.ndarray:
        return np.array([float(x) for x in a.entries()], dtype=float).reshape(a.nrows(), a.ncols())

    def export(self, a) -> np.ndarray:
        vals = [self.to_fraction(x) for x in a.entries()]
        out = np.empty(len(vals), dtype=object)
        out[:] = vals
        return out.reshape(a.nrows(), a.ncols()) if a.ncols() > 1 else out

    def from_numpy(self, a):
        a = np.asarray(a, dtype=float)
        return self.flint.arb_mat(a.shape[0], a.shape[1], [float(x) for x in a.reshape(-1)])

    def _mat(self, n, m, vals):
        return self.flint.arb_mat(n, m, vals)

    # dense matrices -------------------------------------------------------
    def eye(self, n, s=1):
        s = self.num(s)
        M = self.flint.arb_mat(n, n)
        for i in range(n):
            M[i, i] = s
        return M

    def sym_from_entries(self, n, entries):
        M = self.flint.arb_mat(n, n)
        for (r, s), v in entries.items():
            x = self.num(v)
            M[r, s] = x
            M[s, r] = x
        return M

    def add(self, a, b):
        return (a + b).mid()

    def sub(self, a, b):
        return (a - b).mid()

    def scale(self, s, a):
        return (a * self.num(s)).mid()

    def mm(self, a, b):
        return (a * b).mid()

    def t(self, a):
        return a.transpose()

    def sym(self, a):
        return ((a + a.transpose()) * self.flint.arb(0.5)).mid()

    def inner(self, a, b):
        return (a.transpose() * b).trace().mid()

    def fnorm(self, a) -> float:
        return math.sqrt(sum(float(x) ** 2 for x in a.entries()))

    def chol(self, a):
        n = a.nrows()
        if n <= 24:
            L = [[None] * n for _ in range(n)]
            A = [[a[i, j] for j in range(n)] for i in range(n)]
            zero = self.flint.arb(0)
            for j in range(n):
                s = A[j][j]
                for k in range(j):
                    s -= L[j][k] * L[j][k]
                s = s.mid()
                if not s > 0:
                    raise _NotPositiveDefinite("non-positive pivot")
                d = s.sqrt().mid()
                L[j][j] = d
                for i in range(j + 1, n):
                    t = A[i][j]
                    for k in range(j):
                        t -= L[i][k] * L[j][k]
                    L[i][j] = (t / d).mid()
            return self._mat(n, n, [L[i][j] if j <= i else zero for i in range(n) for j in range(n)])
        h = n // 2
        ent = a.entries()
        A11 = self._mat(h, h, [ent[i * n + j] for i in range(h) for j in range(h)])
        A12 = self._mat(h, n - h, [ent[i * n + j] for i in range(h) for j in range(h, n)])
        A22 = self._mat(n - h, n - h, [ent[i * n + j] for i in range(h, n) for j in range(h, n)])
        L11 = self.chol(A11)
        L21 = self._lsolve(L11, A12).transpose()
        L22 = self.chol((A22 - L21 * L21.transpose()).mid())
        e11, e21, e22 = L11.entries(), L21.entries(), L22.entries()
        zero = self.flint.arb(0)
        vals = []
        for i in range(n):
            if i < h:
                vals.extend(e11[i * h:(i + 1) * h])
                vals.extend([zero] * (n - h))
            else:
                r = i - h
                vals.extend(e21[r * h:(r + 1) * h])
                vals.extend(e22[r * (n - h):(r + 1) * (n - h)])
        return self._mat(n, n, vals)

    def _lsolve(self, A, B):
        try:
            return A.solve(B, algorithm="approx").mid()
        except (ZeroDivisionError, ValueError) as exc:
            raise _NotPositiveDefinite(str(exc)) from exc

    def inv_lower(self, L):
        return self._lsolve(L, self.eye(L.nrows()))

    def scale_cols(self, a, v):
        n, m = a.nrows(), a.ncols()
        D = self.flint.arb_mat(m, m)
        for i, x in enumerate(v):
            D[i, i] = self.num(x)
        return (a * D).mid()

    def scale_rows(self, a, v):
        n = a.nrows()
        D = self.flint.arb_mat(n, n)
        for i, x in enumerate(v):
            D[i, i] = self.num(x)
        return (D * a).mid()

    def lyap_diag(self, T, d):
        n = T.nrows()
        d = [self.num(x) for x in d]
        ent = T.entries()
        two = self.flint.arb(2)
        return self._mat(n, n, [(two * ent[i * n + j] / (d[i] + d[j])).mid() for i in range(n) for j in range(n)])

    def sqrt(self, v):
        return self.num(v).sqrt().mid()

    def orthonormalize(self, Q):
        U = self.chol(self.mm(self.t(Q), Q))
        # Q U^{-T}
        return self._lsolve(U, self.t(Q)).transpose()

    def diag(self, a):
        return [a[i, i] for i in range(a.nrows())]

    # vectors (column matrices) --------------------------------------------
    def vec(self, values):
        values = [self.num(v) for v in values]
        return self._mat(len(values), 1, values)

    def vzeros(self, n):
        return self.flint.arb_mat(n, 1)

    def vadd(self, a, b):
        return (a + b).mid()

    def vsub(self, a, b):
        return (a - b).mid()

    def vscale(self, s, a):
        return (a * self.num(s)).mid()

    def vdot(self, a, b):
        if a.nrows() == 0:
            return self.flint.arb(0)
        return (a.transpose() * b)[0, 0].mid()

    def vnorm(self, a) -> float:
        return math.sqrt(sum(float(x) ** 2 for x in a.entries()))

    # constraint operator ----------------------------------------------------
    def prepare(self, form: SdpStandardForm):
        arb_mat = self.flint.arb_mat
        m, nf = form.num_constraints, form.free_count
        data = _PreparedF64()
        data.m, data.nf, data.sizes = m, nf, form.block_sizes
        data.b = self.vec([c.rhs for c in form.constraints])
        data.c_free = self.vec([form.c_free.get(f, 0) for f in range(nf)])
        data.C = [self.sym_from_entries(n, form.c_blocks.get(j, {})) for j, n in enumerate(form.block_sizes)]
        zero = self.flint.arb(0)
        af = [zero] * (m * nf)
        for i, con in enumerate(form.constraints):
            for f, v in con.free.items():
                af[i * nf + f] = self.num(v)
        data.Af = arb_mat(m, nf, af)
        data.A_flat = []
        data.A_stack = []
        for j, n in enumerate(form.block_sizes):
            flat = [zero] * (m * n * n)
            for i, con in enumerate(form.constraints):
                base = i * n * n
                for (r, s), v in con.blocks.get(j, {}).items():
                    x = self.num(v)
                    flat[base + r * n + s] = x
                    flat[base + s * n + r] = x
            data.A_flat.append(arb_mat(m, n * n, flat))
            # row k*n + p holds row p of A_k
            data.A_stack.append(arb_mat(m * n, n, flat))
        data.transpose_index = {
            n: [(c % n) * n + c // n for c in range(n * n)] for n in set(form.block_sizes)
        }
        return data

    def _flatten(self, X):
        return self._mat(X.nrows() * X.ncols(), 1, X.entries())

    def A_apply(self, data, Xs):
        out = self.vzeros(data.m)
        for j, X in enumerate(Xs):
            out = out + data.A_flat[j] * self._flatten(X)
        return out.mid()

    def At_apply(self, data, y):
        res = []
        for j, n in enumerate(data.sizes):
            v = (data.A_flat[j].transpose() * y).mid()
            res.append(self._mat(n, n, v.entries()))
        return res

    def Af_apply(self, data, xf):
        if not data.nf:
            return self.vzeros(data.m)
        return (data.Af * xf).mid()

    def Aft_apply(self, data, y):
        if not data.nf:
            return self.vzeros(0)
        return (data.Af.transpose() * y).mid()

    def schur(self, data, Ws):
        # M_ik = tr(A_i W A_k W) = sum_pq (A_i W)[p,q] (A_k W)[q,p]
        m = data.m
        M = self.flint.arb_mat(m, m)
        for j, W in enumerate(Ws):
            n = data.sizes[j]
            nn = n * n
            ent = (data.A_stack[j] * W).entries()
            perm = data.transpose_index[n]
            F = self._mat(m, nn, ent)
            FP = self._mat(m, nn, [ent[i * nn + c] for i in range(m) for c in perm])
            M = M + F * FP.transpose()
        M = M.mid()
        return ((M + M.transpose()) * self.flint.arb(0.5)).mid()

    def kkt_factor(self, data, M):
        m, nf = data.m, data.nf
        if nf:
            zero = self.flint.arb(0)
            me, af = M.entries(), data.Af.entries()
            vals = []
            for i in range(m):
                vals.extend(me[i * m:(i + 1) * m])
                vals.extend(af[i * nf:(i + 1) * nf])
            for f in range(nf):
                vals.extend(af[i * nf + f] for i in range(m))
                vals.extend([zero] * nf)
            K = self._mat(m + nf, m + nf, vals)
        else:
            K = M
        return K, self._lsolve(K, self.eye(m + nf))

    def kkt_solve(self, data, fac, r1, r2):
        K, Kinv = fac
        m, nf = data.m, data.nf
        rhs = r1 if not nf else self._mat(m + nf, 1, r1.entries() + r2.entries())
        sol = (Kinv * rhs).mid()
        sol = (sol + Kinv * (rhs - K * sol).mid()).mid()
        ent = sol.entries()
        dxf = self._mat(nf, 1, ent[m:]) if nf else self.vzeros(0)
        return self._mat(m, 1, ent[:m]), dxf


def _backend(bits: int):
    if bits == 53:
        return _Float64Backend()
    if bits < 16:
        raise ValueError("mantissa_bits must be >= 16")
    return _ArbBackend(bits)


# --------------------------------------------------------------------------
# interior-point iteration
# --------------------------------------------------------------------------


def _max_step(B, Dsqrt_inv, dhat) -> float:
    """Largest t with I + t * D^{-1/2} dhat D^{-1/2} still PSD."""
    P = B.to_numpy(B.scale_cols(B.scale_rows(dhat, Dsqrt_inv), Dsqrt_inv))
    P = 0.5 * (P + P.T)
    lam = float(np.linalg.eigvalsh(P)[0])
    if not math.isfinite(lam):
        return 0.0
    return math.inf if lam >= 0 else -1.0 / lam


def solve(form: SdpStandardForm, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve ``form`` to the tolerance in ``settings``.

    Rank-deficient equality systems raise :class:`RankDeficientError`;
    breakdowns during the iteration are reported through ``status``.
    """
    settings = settings or SolverSettings()
    form.validate()
    _check_rank(form)
    tol = settings.effective_tol
    t0 = time.perf_counter()
    with _backend(settings.mantissa_bits) as B:
        return _ipm(B, form, settings, tol, t0)


def _check_rank(form: SdpStandardForm) -> None:
    m = form.num_constraints
    if m == 0:
        return
    ncols = form.free_count + sum(n * (n + 1) // 2 for n in form.block_sizes)
    offsets = []
    off = form.free_count
    for n in form.block_sizes:
        offsets.append(off)
        off += n * (n + 1) // 2
    rows, cols, vals = [], [], []
    for i, con in enumerate(form.constraints):
        for f, v in con.free.items():
            rows.append(i)
            cols.append(f)
            vals.append(float(v))
        for j, ent in con.blocks.items():
            n = form.block_sizes[j]
            for (r, s), v in ent.items():
                rows.append(i)
                cols.append(offsets[j] + r * n - r * (r - 1) // 2 + (s - r))
                vals.append(float(v) * (1.0 if r == s else 2.0))
    if m > ncols:
        raise RankDeficientError(f"{m} equality rows but only {ncols} variables")
    if m > _RANK_CHECK_LIMIT:
        return
    if form.free_count:
        Af = np.zeros((m, form.free_count))
        for i, con in enumerate(form.constraints):
            for f, v in con.free.items():
                Af[i, f] = float(v)
        if np.linalg.matrix_rank(Af) < form.free_count:
            raise RankDeficientError("free variables enter the constraints linearly dependently")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, ncols))
    row_norm = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).reshape(-1))
    if np.any(row_norm == 0):
        raise RankDeficientError("equality system has an all-zero row")
    A = sp.diags(1.0 / row_norm) @ A
    gram = (A @ A.T).toarray()
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-22 * max(ev[-1], 1.0):
        raise RankDeficientError(
            "equality constraints are (numerically) linearly dependent; "
            "remove redundant rows before solving"
        )


def _ipm(B, form, settings, tol, t0) -> SdpSolution:
    data = B.prepare(form)
    m, nf, sizes = data.m, data.nf, data.sizes
    ntot = sum(sizes)

    # problem norms for the starting point and stopping rules
    b_f = [float(c.rhs) for c in form.constraints]
    norm_b = math.sqrt(sum(v * v for v in b_f))
    Af_f = np.zeros((m, nf))
    for i, con in enumerate(form.constraints):
        for f, v in con.free.items():
            Af_f[i, f] = float(v)
    norm_c = math.sqrt(sum(float(v) ** 2 for v in form.c_free.values()) + sum(B.fnorm(C) ** 2 for C in data.C))

    X, Z = [], []
    for j, n in enumerate(sizes):
        a_norms = []
        for con in form.constraints:
            ent = con.blocks.get(j, {})
            a_norms.append(1.0 + math.sqrt(sum((float(v) ** 2) * (1 if r == s else 2) for (r, s), v in ent.items())))
        ratio = max([(1.0 + abs(bi)) / an for bi, an in zip(b_f, a_norms)] or [1.0])
        xi = max(10.0, math.sqrt(n), n * ratio)
        eta = max(10.0, math.sqrt(n), max(a_norms or [1.0]), 1.0 + B.fnorm(data.C[j]))
        X.append(B.eye(n, xi))
        Z.append(B.eye(n, eta))
    xf = B.vzeros(nf)
    y = B.vzeros(m)

    status = MAX_ITERS
    message = ""
    best = None
    it = 0
    hist = []

    def measures(X, xf, y, Z):
        rp = B.vsub(B.vsub(data.b, B.Af_apply(data, xf)), B.A_apply(data, X))
        At = B.At_apply(data, y)
        Rd = [B.sym(B.sub(B.sub(data.C[j], At[j]), Z[j])) for j in range(len(sizes))]
        rf = B.vsub(data.c_free, B.Aft_apply(data, y)) if nf else B.vzeros(0)
        pobj = B.vdot(data.c_free, xf) if nf else B.num(0)
        for j in range(len(sizes)):
            pobj = pobj + B.inner(data.C[j], X[j])
        dobj = B.vdot(data.b, y)
        xz = sum(float(B.inner(X[j], Z[j])) for j in range(len(sizes)))
        pinf = B.vnorm(rp) / (1.0 + norm_b)
        dinf = math.sqrt(sum(B.fnorm(R) ** 2 for R in Rd) + B.vnorm(rf) ** 2) / (1.0 + norm_c)
        pf, df = float(pobj), float(dobj)
        gap = max(abs(pf - df), abs(xz)) / (1.0 + abs(pf) + abs(df))
        return rp, Rd, rf, pobj, dobj, xz, pinf, dinf, gap

    while True:
        rp, Rd, rf, pobj, dobj, xz, pinf, dinf, gap = measures(X, xf, y, Z)
        err = max(pinf, dinf, gap)
        hist.append(err)
        if log.isEnabledFor(logging.DEBUG):
            log.debug(
                "it %3d pobj %+.12e dobj %+.12e pinf %.2e dinf %.2e gap %.2e |xf| %.2e |X| %.2e |y| %.2e",
                it, float(pobj), float(dobj), pinf, dinf, gap,
                B.vnorm(xf) if nf else 0.0, max(B.fnorm(Xj) for Xj in X), B.vnorm(y),
            )
        if best is None or err < best[0]:
            best = (err, it, X, xf, y, Z, pobj, dobj, pinf, dinf, gap)
        if err <= tol:
            status = OPTIMAL
            break
        pf, df = float(pobj), float(dobj)
        if not (math.isfinite(err) and math.isfinite(pf) and math.isfinite(df)):
            status = NUMERICAL_FAILURE
            message = "iterates are no longer finite"
            break
        if df > _DIVERGENCE * (1.0 + norm_c) and dinf <= 1e-6:
            status = PRIMAL_INFEASIBLE
            message = "dual objective unbounded along a feasible ray; primal is infeasible"
            break
        if pf < -_DIVERGENCE * (1.0 + norm_b) and pinf <= 1e-6:
            status = DUAL_INFEASIBLE
            message = "primal objective unbounded along a feasible ray; dual is infeasible"
            break
        if it >= settings.max_iters:
            status = MAX_ITERS
            message = "iteration limit reached"
            break
        if len(hist) > 20 and min(hist[-12:]) > 0.7 * min(hist[:-12]):
            status = MAX_ITERS
            message = "progress stalled; consider raising mantissa_bits"
            break
        mu = xz / ntot
        try:
            # Nesterov-Todd scaling per block: G^{-1} X G^{-T} = G^T Z G = diag(d)
            Gs, Ginvs, Ws, ds = [], [], [], []
            for j in range(len(sizes)):
                L = B.chol(B.sym(X[j]))
                R = B.sym(B.mm(B.mm(B.t(L), Z[j]), L))
                Rn = B.to_numpy(R)
                scl = float(np.trace(Rn)) / Rn.shape[0]
                if not scl > 0:
                    raise _NotPositiveDefinite("degenerate scaling")
                _, Qn = np.linalg.eigh(0.5 * (Rn + Rn.T) / scl)
                Q = B.orthonormalize(B.from_numpy(Qn))
                lam = B.diag(B.mm(B.mm(B.t(Q), R), Q))
                if any(not float(v) > 0 for v in lam):
                    raise _NotPositiveDefinite("loss of definiteness in scaling")
                lam_q = [B.sqrt(B.sqrt(v)) for v in lam]
                inv_q = [B.num(1 / v) for v in lam_q]
                G = B.scale_cols(B.mm(L, Q), inv_q)
                Ginv = B.scale_rows(B.mm(B.t(Q), B.inv_lower(L)), lam_q)
                Gs.append(G)
                Ginvs.append(Ginv)
                Ws.append(B.sym(B.mm(G, B.t(G))))
                ds.append([v * v for v in lam_q])
            M = B.schur(data, Ws)
            fac = B.kkt_factor(data, M)
        except _NotPositiveDefinite as exc:
            status = NUMERICAL_FAILURE
            message = f"{exc}; raise mantissa_bits"
            break

        WRdW = [B.mm(B.mm(Ws[j], Rd[j]), Ws[j]) for j in range(len(sizes))]

        def direction(Rc):
            r1 = B.vadd(B.vsub(rp, B.A_apply(data, Rc)), B.A_apply(data, WRdW))
            dy, dxf = B.kkt_solve(data, fac, r1, rf)

            def assemble(dy):
                At = B.At_apply(data, dy)
                dZ = [B.sym(B.sub(Rd[j], At[j])) for j in range(len(sizes))]
                dX = [B.sym(B.sub(Rc[j], B.mm(B.mm(Ws[j], dZ[j]), Ws[j]))) for j in range(len(sizes))]
                return dX, dZ

            dX, dZ = assemble(dy)
            # refine against the linearised equations themselves; the Newton
            # system loses accuracy like 1/mu near the optimum
            prev = math.inf
            for _ in range(_REFINE_STEPS):
                e = B.vsub(B.vsub(rp, B.A_apply(data, dX)), B.Af_apply(data, dxf))
                ef = B.vsub(rf, B.Aft_apply(data, dy)) if nf else B.vzeros(0)
                size = math.hypot(B.vnorm(e), B.vnorm(ef) if nf else 0.0)
                if not size < 0.5 * prev or size == 0.0:
                    break
                prev = size
                ddy, ddxf = B.kkt_solve(data, fac, e, ef)
                dy = B.vadd(dy, ddy)
                dxf = B.vadd(dxf, ddxf) if nf else dxf
                dX, dZ = assemble(dy)
            return dX, dxf, dy, dZ

        def steps(dX, dZ):
            ap, ad = math.inf, math.inf
            hats = []
            for j in range(len(sizes)):
                dsq = [1 / (float(v) ** 0.5) for v in ds[j]]
                dXh = B.sym(B.mm(B.mm(Ginvs[j], dX[j]), B.t(Ginvs[j])))
                dZh = B.sym(B.mm(B.mm(B.t(Gs[j]), dZ[j]), Gs[j]))
                ap = min(ap, _max_step(B, dsq, dXh))
                ad = min(ad, _max_step(B, dsq, dZh))
                hats.append((dXh, dZh))
            return ap, ad, hats

        try:
            Rc = [B.scale(-1.0, X[j]) for j in range(len(sizes))]
            dX, dxf, dy, dZ = direction(Rc)
            ap, ad, hats = steps(dX, dZ)
            ap_a, ad_a = min(1.0, ap), min(1.0, ad)
            xz_aff = 0.0
            for j in range(len(sizes)):
                xz_aff += float(B.inner(B.add(X[j], B.scale(ap_a, dX[j])), B.add(Z[j], B.scale(ad_a, dZ[j]))))
            sigma = min(1.0, max(0.0, xz_aff / xz) ** 3) if xz > 0 else 0.0
            Rc = []
            for j, n in enumerate(sizes):
                dXh, dZh = hats[j]
                d = ds[j]
                T = B.sub(B.eye(n, sigma * mu), B.scale_cols(B.eye(n, 1), [v * v for v in d]))
                T = B.sub(T, B.sym(B.mm(dXh, dZh)))
                S = B.lyap_diag(T, d)
                Rc.append(B.sym(B.mm(B.mm(Gs[j], S), B.t(Gs[j]))))
            dX, dxf, dy, dZ = direction(Rc)
            ap, ad, _ = steps(dX, dZ)
        except _NotPositiveDefinite as exc:
            status = NUMERICAL_FAILURE
            message = f"{exc}; raise mantissa_bits"
            break
        gamma = 0.9 + 0.09 * min(ap_a, ad_a)
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)
        X = [B.sym(B.add(X[j], B.scale(ap, dX[j]))) for j in range(len(sizes))]
        Z = [B.sym(B.add(Z[j], B.scale(ad, dZ[j]))) for j in range(len(sizes))]
        xf = B.vadd(xf, B.vscale(ap, dxf)) if nf else xf
        y = B.vadd(y, B.vscale(ad, dy))
        it += 1

    if status not in (OPTIMAL, PRIMAL_INFEASIBLE, DUAL_INFEASIBLE):
        err, _, X, xf, y, Z, pobj, dobj, pinf, dinf, gap = best
        if err <= 1e3 * tol:
            status = NEAR_OPTIMAL
    return SdpSolution(
        status=status,
        x_free=B.export(xf).reshape(-1) if nf else np.zeros(0),
        X=[B.export(Xj) for Xj in X],
        y=B.export(y).reshape(-1),
        Z=[B.export(Zj) for Zj in Z],
        primal_objective=B.to_fraction(pobj),
        dual_objective=B.to_fraction(dobj),
        duality_gap=gap,
        primal_infeasibility=pinf,
        dual_infeasibility=dinf,
        iterations=it,
        mantissa_bits=settings.mantissa_bits,
        solve_time=time.perf_counter() - t0,
        message=message,
    )


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def factorization_check(block, tol=0.0, mantissa_bits: int = 53) -> tuple[bool, float]:
    """LDL^T factorization of ``block + tol*I`` without pivoting.

    Returns ``(passed, min_pivot)``; a non-positive-semidefinite input shows
    up as a negative pivot. ``block`` may hold floats or exact rationals.
    """
    A = np.asarray(block)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("block must be square")
    if n == 0:
        return True, math.inf
    if mantissa_bits == 53:
        W = A.astype(float) + float(tol) * np.eye(n)
        W = 0.5 * (W + W.T)
        pivots = []
        for k in range(n):
            p = W[k, k]
            pivots.append(p)
            if p <= 0:
                break
            col = W[k + 1:, k] / p
            W[k + 1:, k + 1:] -= np.outer(col, W[k, k + 1:])
        mp = min(pivots)
        return bool(mp >= 0 if tol == 0 else mp > 0) if pivots else True, float(mp)
    with _ArbBackend(mantissa_bits) as B:
        rows = [[B.num(Fraction(A[i, j]) if not isinstance(A[i, j], Fraction) else A[i, j]) for j in range(n)] for i in range(n)]
        t = B.num(Fraction(tol))
        for i in range(n):
            rows[i][i] = rows[i][i] + t
        pivots = []
        for k in range(n):
            p = rows[k][k].mid()
            pivots.append(float(p))
            if not p > 0:
                break
            for i in range(k + 1, n):
                f = (rows[i][k] / p).mid()
                ri, rk = rows[i], rows[k]
                for j in range(k + 1, n):
                    ri[j] = (ri[j] - f * rk[j]).mid()
        mp = min(pivots)
        return bool(mp >= 0 if tol == 0 else mp > 0), mp


# --------------------------------------------------------------------------
# text dump format
# --------------------------------------------------------------------------

_HEADER = "# bosonbound-sdp 1"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(Fraction(v))


def dump_form(form: SdpStandardForm) -> str:
    """Serialize to the sparse text format.

    Layout: a header line, ``blocks <nf> <n1> ... <ns>``, ``constraints <m>``,
    then one record per line -- ``b i v``, ``c 0 f 0 v`` (free objective),
    ``c j r s v`` (block objective, j >= 1), ``a i 0 f 0 v`` and
    ``a i j r s v`` (constraint entries). Values are exact rationals
    ``p/q`` or Python float reprs; only ``r <= s`` entries are listed.
    """
    out = [_HEADER, "blocks " + " ".join(map(str, (form.free_count,) + form.block_sizes)),
           f"constraints {form.num_constraints}"]
    for i, con in enumerate(form.constraints):
        out.append(f"b {i} {_fmt(con.rhs)}")
    for f, v in sorted(form.c_free.items()):
        out.append(f"c 0 {f} 0 {_fmt(v)}")
    for j in sorted(form.c_blocks):
        for (r, s), v in sorted(form.c_blocks[j].items()):
            out.append(f"c {j + 1} {r} {s} {_fmt(v)}")
    for i, con in enumerate(form.constraints):
        for f, v in sorted(con.free.items()):
            out.append(f"a {i} 0 {f} 0 {_fmt(v)}")
        for j in sorted(con.blocks):
            for (r, s), v in sorted(con.blocks[j].items()):
                out.append(f"a {i} {j + 1} {r} {s} {_fmt(v)}")
    return "\n".join(out) + "\n"


def _parse_value(tok: str):
    try:
        return Fraction(tok)
    except ValueError:
        return float(tok)


def load_form(text: str) -> SdpStandardForm:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a bosonbound-sdp dump")
    head = lines[1].split()
    if head[0] != "blocks":
        raise ValueError("missing blocks line")
    nf, sizes = int(head[1]), tuple(int(x) for x in head[2:])
    m = int(lines[2].split()[1])
    cons = [Constraint() for _ in range(m)]
    c_free, c_blocks = {}, {}
    for ln in lines[3:]:
        tok = ln.split()
        kind = tok[0]
        if kind == "b":
            cons[int(tok[1])].rhs = _parse_value(tok[2])
        elif kind == "c":
            j, r, s, v = int(tok[1]), int(tok[2]), int(tok[3]), _parse_value(tok[4])
            if j == 0:
                c_free[r] = v
            else:
                c_blocks.setdefault(j - 1, {})[(r, s)] = v
        elif kind == "a":
            i, j, r, s, v = int(tok[1]), int(tok[2]), int(tok[3]), int(tok[4]), _parse_value(tok[5])
            if j == 0:
                cons[i].free[r] = v
            else:
                cons[i].blocks.setdefault(j - 1, {})[(r, s)] = v
        else:
            raise ValueError(f"unknown record {kind!r}")
    return SdpStandardForm(sizes, nf, cons, c_free, c_blocks)
