"""Truncated-Fock-space reference for stationary states.

Two kernel methods are available:

* ``svd`` -- dense SVD of the vectorized generator; directions with singular
  value below ``kernel_threshold * sigma_max`` form the kernel.
* ``lu`` -- sparse LU of the generator bordered by the trace row and an
  identity column; nonsingular exactly when the stationary state is unique.
* ``jump`` -- for spaces too large for a sparse LU. Writing the generator as
  ``L(rho) = K rho + rho K^+ + J(rho)`` with ``K = -iH - 1/2 sum c^+ c`` and
  ``J(rho) = sum c rho c^+``, stationary states are the fixed points of
  ``T = -S^{-1} J`` where ``S(rho) = K rho + rho K^+``. ``T`` is similar to a
  trace-preserving jump chain, so power iteration converges to them; ``S`` is
  inverted with one complex Schur form and triangular Sylvester solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Mapping

import flint
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .algebra import OperatorPolynomial
from .lindblad import LindbladSpec
from .sdp import OPTIMAL, NEAR_OPTIMAL, Constraint, SdpStandardForm, SolverSettings, solve

__all__ = [
    "TruncationSetting",
    "StationaryResult",
    "ExtremalResult",
    "MemoryCapError",
    "EscalationError",
    "KernelError",
    "operator_matrix",
    "exact_operator_matrix",
    "liouvillian",
    "stationary_state",
    "oracle_extremal",
]


class MemoryCapError(RuntimeError):
    """The truncated space exceeds the configured dimension cap."""


class EscalationError(RuntimeError):
    """Expectations did not settle before the largest allowed cutoff."""


class KernelError(RuntimeError):
    """No usable stationary kernel was found."""


@dataclass(frozen=True)
class TruncationSetting:
    """Per-mode cutoffs (maximal occupation, inclusive) and escalation policy."""

    cutoffs: tuple[int, ...]
    tol: float = 1e-8
    escalate: bool = True
    max_escalations: int = 3
    kernel_threshold: float = 1e-10
    max_dimension: int = 4096
    method: str = "auto"  # "svd", "lu", "jump" or "auto"
    dense_limit: int = 1700  # largest Liouville dimension handled by "svd" under "auto"
    sparse_limit: int = 20000  # largest Liouville dimension handled by "lu" under "auto"

    def __post_init__(self):
        object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))
        if any(c < 1 for c in self.cutoffs):
            raise ValueError("cutoffs must be >= 1")
        if self.method not in ("svd", "lu", "jump", "auto"):
            raise ValueError(f"unknown kernel method {self.method!r}")

    @property
    def dimension(self) -> int:
        return math.prod(c + 1 for c in self.cutoffs)

    def grown(self) -> "TruncationSetting":
        return TruncationSetting(
            tuple(c + max(2, c // 5) for c in self.cutoffs), self.tol, self.escalate, self.max_escalations,
            self.kernel_threshold, self.max_dimension, self.method, self.dense_limit, self.sparse_limit,
        )

    @classmethod
    def default_for(cls, spec: LindbladSpec, **kw) -> "TruncationSetting":
        if spec.mode_count == 1:
            cut = (40,)
        elif spec.name == "memory_buffer":
            cut = (24, 10)
        else:
            cut = (12,) * spec.mode_count
        return cls(cut, **kw)


# --------------------------------------------------------------------------
# matrices
# --------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _single_mode_monomial(cutoff: int, p: int, q: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1)
    return np.linalg.matrix_power(a.T, p) @ np.linalg.matrix_power(a, q)


def operator_matrix(p: OperatorPolynomial, cutoffs) -> np.ndarray:
    """Dense complex matrix of ``p`` on the truncated Fock space (mode 0 outermost)."""
    cutoffs = tuple(cutoffs)
    if len(cutoffs) != p.mode_count:
        raise ValueError("need one cutoff per mode")
    dim = math.prod(c + 1 for c in cutoffs)
    out = np.zeros((dim, dim), dtype=complex)
    for mono, c in p.items():
        m = np.ones((1, 1))
        for (pe, qe), cut in zip(mono.exponents, cutoffs):
            m = np.kron(m, _single_mode_monomial(cut, pe, qe))
        out += complex(c) * m
    return out


def _exact_single(cutoff: int, p: int, q: int) -> dict[tuple[int, int], int]:
    # in the basis |m) = sqrt(m!)|m>: a|m) = m|m-1), a^+|m) = |m+1)
    out = {}
    for m in range(q, cutoff + 1):
        target = m - q + p
        if target <= cutoff:
            out[(target, m)] = math.perm(m, q)
    return out


def exact_operator_matrix(p: OperatorPolynomial, cutoffs) -> tuple[flint.fmpq_mat, flint.fmpq_mat]:
    """Real and imaginary parts of ``p`` in the scaled Fock basis ``sqrt(m!)|m>``.

    The scaled basis is a diagonal similarity of the Fock basis, so products
    and the truncation window are preserved while every entry is rational.
    """
    cutoffs = tuple(cutoffs)
    dims = [c + 1 for c in cutoffs]
    dim = math.prod(dims)
    re = [[Fraction(0)] * dim for _ in range(dim)]
    im = [[Fraction(0)] * dim for _ in range(dim)]
    strides = [math.prod(dims[j + 1:]) for j in range(len(dims))]
    for mono, c in p.items():
        entries = {(0, 0): 1}
        for j, ((pe, qe), cut) in enumerate(zip(mono.exponents, cutoffs)):
            single = _exact_single(cut, pe, qe)
            entries = {
                (r + rr * strides[j], s + ss * strides[j]): v * w
                for (r, s), v in entries.items()
                for (rr, ss), w in single.items()
            }
        for (r, s), v in entries.items():
            re[r][s] += c.re * v
            im[r][s] += c.im * v

    def mat(rows):
        return flint.fmpq_mat(dim, dim, [flint.fmpq(x.numerator, x.denominator) for row in rows for x in row])

    return mat(re), mat(im)


def _jump_matrices(spec: LindbladSpec, cutoffs) -> list[np.ndarray]:
    return [math.sqrt(j.rate) * operator_matrix(j.operator, cutoffs) for j in spec.jumps]


def liouvillian(spec: LindbladSpec, cutoffs) -> sp.csr_matrix:
    """Generator acting on row-major ``vec(rho)``:
    ``-i(H x I - I x H^T) + sum_k [c x conj(c) - 1/2 (c^+c x I + I x (c^+c)^T)]``.
    """
    H = sp.csr_matrix(operator_matrix(spec.hamiltonian, cutoffs))
    n = H.shape[0]
    eye = sp.identity(n, format="csr", dtype=complex)
    L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for c in _jump_matrices(spec, cutoffs):
        c = sp.csr_matrix(c)
        cdc = c.conj().T @ c
        L = L + sp.kron(c, c.conj()) - 0.5 * (sp.kron(cdc, eye) + sp.kron(eye, cdc.T))
    return sp.csr_matrix(L)


def _apply_generator(H, cs, rho):
    K = -1j * H - 0.5 * sum((c.conj().T @ c for c in cs), np.zeros_like(H))
    return K @ rho + rho @ K.conj().T + sum((c @ rho @ c.conj().T for c in cs), np.zeros_like(H))


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


def _hermitian_basis(mats: list[np.ndarray], rel_tol: float = 1e-8) -> list[np.ndarray]:
    """Orthonormal (Frobenius) real basis of the Hermitian span of ``mats``."""
    cands = []
    for R in mats:
        cands.append((R + R.conj().T) / 2)
        cands.append(1j * (R - R.conj().T) / 2)
    V = np.stack([np.concatenate([C.real.ravel(), C.imag.ravel()]) for C in cands], axis=1)
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    rank = int(np.sum(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0
    n = mats[0].shape[0]
    out = []
    for k in range(rank):
        half = U[: n * n, k] + 1j * U[n * n:, k]
        M = half.reshape(n, n)
        out.append((M + M.conj().T) / 2)
    return out


def _kernel_svd(spec, cutoffs, threshold):
    L = liouvillian(spec, cutoffs).toarray()
    _, s, Vh = np.linalg.svd(L)
    cut = threshold * s[0]
    idx = np.nonzero(s <= cut)[0]
    if idx.size == 0:
        raise KernelError(
            f"no singular value below {cut:.3e} (smallest {s[-1]:.3e}); raise kernel_threshold or the cutoff"
        )
    n = operator_matrix(spec.hamiltonian, cutoffs).shape[0]
    mats = [Vh[i].conj().reshape(n, n) for i in idx]
    return _hermitian_basis(mats), s[idx]


def _kernel_lu(spec, cutoffs):
    import scipy.sparse.linalg as spla

    L = liouvillian(spec, cutoffs)
    N = L.shape[0]
    n = math.isqrt(N)
    tr = sp.csr_matrix(np.eye(n).reshape(1, N).astype(complex))
    rhs = np.zeros(N + 1, dtype=complex)
    rhs[-1] = 1.0
    # range(L) is trace-free, so any border with nonzero trace works when the
    # kernel is one-dimensional; two different borders must then agree
    weights = np.linspace(1.0, 2.0, n)
    states = []
    for border in (tr, sp.csr_matrix(np.diag(weights).reshape(1, N).astype(complex))):
        M = sp.bmat([[L, border.T], [tr, None]], format="csc")
        try:
            x = spla.splu(M).solve(rhs)
        except RuntimeError:
            raise KernelError("bordered generator is singular; the stationary state is not unique") from None
        if not np.all(np.isfinite(x)):
            raise KernelError("bordered solve produced non-finite values")
        rho = x[:N].reshape(n, n)
        states.append((rho + rho.conj().T) / 2)
    if np.linalg.norm(states[0] - states[1]) > 1e-8 * max(1.0, np.linalg.norm(states[0])):
        raise KernelError("bordered solves disagree; the stationary state is not unique (use method='svd')")
    rho = states[0]
    return [rho / np.linalg.norm(rho)]


def _pad_state(rho: np.ndarray, old, new) -> np.ndarray:
    shape = tuple(c + 1 for c in old)
    t = rho.reshape(shape + shape)
    widths = [(0, b - a) for a, b in zip(old, new)] * 2
    n = int(np.prod([c + 1 for c in new]))
    return np.pad(t, widths).reshape(n, n)


def _kernel_jump(spec, cutoffs, rng_seed=12345, max_iters=5000, warm=None):
    H = operator_matrix(spec.hamiltonian, cutoffs)
    cs = _jump_matrices(spec, cutoffs)
    n = H.shape[0]
    K = -1j * H - 0.5 * sum((c.conj().T @ c for c in cs), np.zeros_like(H))
    T, U = sla.schur(K, output="complex")
    Uh = U.conj().T

    def step(rho):
        J = sum((c @ rho @ c.conj().T for c in cs), np.zeros_like(rho))
        X, scale, info = sla.lapack.ztrsyl(T, T, Uh @ J @ U, trana="N", tranb="C", isgn=1)
        if info < 0:
            raise KernelError("Sylvester solve failed")
        out = -(U @ (X / scale) @ Uh)
        out = (out + out.conj().T) / 2
        tr = np.trace(out).real
        if not tr > 0:
            raise KernelError("jump chain lost all weight; the no-jump generator is not stable")
        return out / tr

    def iterate(rho):
        for _ in range(max_iters):
            nxt = step(rho)
            if np.linalg.norm(nxt - rho) <= 1e-14 * max(1.0, np.linalg.norm(nxt)):
                return nxt
            rho = nxt
        raise KernelError("power iteration on the jump chain did not converge")

    if warm is not None:
        # uniqueness was settled at a smaller cutoff; one start suffices
        rho = iterate(warm / np.trace(warm).real)
        return [rho / np.linalg.norm(rho)], None
    rho1 = iterate(np.eye(n, dtype=complex) / n)
    rng = np.random.default_rng(rng_seed)
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    start = G @ G.conj().T
    rho2 = iterate(start / np.trace(start).real)
    if np.linalg.norm(rho1 - rho2) > 1e-8:
        # two starting states reached different fixed points
        return _hermitian_basis([rho1, rho2]), None
    return [rho1 / np.linalg.norm(rho1)], None


@lru_cache(maxsize=64)
def _kernel_at(spec: LindbladSpec, cutoffs: tuple[int, ...], method: str, threshold: float):
    if method == "svd":
        basis, svals = _kernel_svd(spec, cutoffs, threshold)
    elif method == "lu":
        basis, svals = _kernel_lu(spec, cutoffs), None
    else:
        basis, svals = _kernel_jump(spec, cutoffs)
    return basis, svals


# --------------------------------------------------------------------------
# stationary states
# --------------------------------------------------------------------------


@dataclass
class StationaryResult:
    rho: np.ndarray | None
    kernel: list[np.ndarray]
    kernel_dim: int
    residual: float
    expectations: dict[str, float | None]
    cutoffs: tuple[int, ...]
    method: str
    min_eigenvalue: float | None = None
    history: list[tuple[tuple[int, ...], dict]] = field(default_factory=list)

    def record(self, model: str = "custom", parameters: Mapping | None = None) -> dict:
        return {
            "source": "oracle",
            "model": model,
            "parameters": {k: float(v) for k, v in (parameters or {}).items()},
            "expectations": self.expectations,
            "kernel_dim": self.kernel_dim,
            "residual": self.residual,
            "cutoffs": list(self.cutoffs),
            "method": self.method,
        }


def _pick_method(trunc: TruncationSetting, dim: int) -> str:
    if trunc.method != "auto":
        return trunc.method
    if dim * dim <= trunc.dense_limit:
        return "svd"
    return "lu" if dim * dim <= trunc.sparse_limit else "jump"


def _solve_at(spec, trunc, observables, previous=None):
    dim = trunc.dimension
    if dim > trunc.max_dimension:
        raise MemoryCapError(f"truncated dimension {dim} exceeds cap {trunc.max_dimension}")
    method = _pick_method(trunc, dim)
    if method == "jump" and previous is not None and previous.rho is not None:
        warm = _pad_state(previous.rho, previous.cutoffs, trunc.cutoffs)
        basis, _ = _kernel_jump(spec, trunc.cutoffs, warm=warm)
    else:
        basis, _ = _kernel_at(spec, trunc.cutoffs, method, trunc.kernel_threshold)
    H = operator_matrix(spec.hamiltonian, trunc.cutoffs)
    cs = _jump_matrices(spec, trunc.cutoffs)
    residual = max(np.linalg.norm(_apply_generator(H, cs, B)) for B in basis)
    rho = None
    exps: dict[str, float | None] = {name: None for name in observables}
    min_eig = None
    if len(basis) == 1:
        B = basis[0]
        tr = np.trace(B).real
        if abs(tr) < 1e-12:
            raise KernelError("kernel element has vanishing trace")
        rho = B / tr
        residual = float(np.linalg.norm(_apply_generator(H, cs, rho)))
        min_eig = float(np.linalg.eigvalsh(rho)[0])
        for name, obs in observables.items():
            exps[name] = float(np.trace(operator_matrix(obs, trunc.cutoffs) @ rho).real)
    return StationaryResult(rho, basis, len(basis), float(residual), exps, trunc.cutoffs, method, min_eig)


def stationary_state(
    spec: LindbladSpec,
    trunc: TruncationSetting | None = None,
    observables: Mapping[str, OperatorPolynomial] | None = None,
) -> StationaryResult:
    """Stationary state(s) at ``trunc``; with observables and ``escalate``, the
    cutoffs grow until every expectation moves by at most ``tol`` (relative
    to ``max(1, |value|)``) between consecutive cutoffs.
    """
    trunc = trunc or TruncationSetting.default_for(spec)
    if len(trunc.cutoffs) != spec.mode_count:
        raise ValueError("need one cutoff per mode")
    observables = dict(observables or {})
    result = _solve_at(spec, trunc, observables)
    history = [(result.cutoffs, dict(result.expectations))]
    if not (trunc.escalate and observables) or result.kernel_dim != 1:
        result.history = history
        return result
    current = trunc
    for _ in range(trunc.max_escalations):
        current = current.grown()
        nxt = _solve_at(spec, current, observables, previous=result)
        history.append((nxt.cutoffs, dict(nxt.expectations)))
        if nxt.kernel_dim != 1:
            raise KernelError(f"kernel dimension changed to {nxt.kernel_dim} at cutoffs {nxt.cutoffs}")
        settled = all(
            abs(nxt.expectations[k] - result.expectations[k]) <= trunc.tol * max(1.0, abs(nxt.expectations[k]))
            for k in observables
        )
        result = nxt
        if settled:
            result.history = history
            return result
    raise EscalationError(f"expectations still moving at cutoffs {current.cutoffs}: {history[-2:]}")


# --------------------------------------------------------------------------
# extremal expectations over a degenerate kernel
# --------------------------------------------------------------------------


@dataclass
class ExtremalResult:
    min: float
    max: float
    kernel_dim: int
    cutoffs: tuple[int, ...]
    status: tuple[str, str] = ("optimal", "optimal")


def _embed(R: np.ndarray) -> dict[tuple[int, int], float]:
    n = R.shape[0]
    E = np.block([[R.real, -R.imag], [R.imag, R.real]])
    rows, cols = np.triu_indices(2 * n)
    vals = E[rows, cols]
    keep = vals != 0
    return {(int(r), int(s)): float(v) for r, s, v in zip(rows[keep], cols[keep], vals[keep])}


def oracle_extremal(
    spec: LindbladSpec,
    observable: OperatorPolynomial,
    trunc: TruncationSetting | None = None,
) -> ExtremalResult:
    """Smallest and largest ``tr[O rho]`` over stationary density matrices.

    With kernel basis ``R_i``: optimize over ``x`` with ``sum x_i R_i >= 0`` and
    ``sum x_i tr R_i = 1``, posed as the dual side of a small SDP.
    """
    if not observable.is_hermitian():
        raise ValueError("observable must be Hermitian")
    res = stationary_state(spec, trunc, {"O": observable})
    if res.kernel_dim == 0:
        raise KernelError("empty kernel; loosen kernel_threshold or raise the cutoff")
    if res.kernel_dim == 1:
        v = res.expectations["O"]
        return ExtremalResult(v, v, 1, res.cutoffs)
    O = operator_matrix(observable, res.cutoffs)
    traces = [float(np.trace(R).real) for R in res.kernel]
    values = [float(np.trace(O @ R).real) for R in res.kernel]
    blocks = [{k: -v for k, v in _embed(R).items()} for R in res.kernel]
    n2 = 2 * res.kernel[0].shape[0]
    out, status = [], []
    for sign in (-1.0, 1.0):
        cons = [
            Constraint(free={0: tr}, blocks={0: blk}, rhs=sign * val)
            for tr, blk, val in zip(traces, blocks, values)
        ]
        form = SdpStandardForm((n2,), 1, cons, c_free={0: 1.0})
        sol = solve(form, SolverSettings(tol=1e-10, max_iters=200))
        if sol.status not in (OPTIMAL, NEAR_OPTIMAL):
            raise KernelError(f"extremal SDP failed: {sol.status} {sol.message}")
        out.append(sign * float(sol.dual_objective))
        status.append(sol.status)
    return ExtremalResult(out[0], out[1], res.kernel_dim, res.cutoffs, tuple(status))
