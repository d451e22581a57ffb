"""Moment/SOS relaxations of the stationary-state expectation problem.

Pseudo-expectations ``Lambda_k`` of the monomials of degree <= 2D are
parametrized by real coordinates ``u``: a self-adjoint monomial contributes
one coordinate and each conjugate pair ``(k, k^+)`` with ``k < k^+`` the real
and imaginary parts of ``Lambda_k``. With a scale ``sigma`` we substitute
``Lambda_k = sigma**deg(k) * (u-part)`` and conjugate the moment matrix by
``diag(sigma**-deg(i))``; neither changes the optimum.

Two real standard forms are built from the same data:

* :func:`assemble_dual` poses the certificate search (maximize ``alpha``) as
  the primal of the solver's standard form, so the solver's dual side is the
  moment program and ``Lambda = -y``.
* :func:`assemble_primal` poses the moment program directly with an explicit
  PSD slack coupled to ``u``. It is larger and meant for small degrees.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping

import flint
import numpy as np

from .algebra import ExactComplex, NormalMonomial, OperatorPolynomial, number
from .basis import StructureTensors, build_tensors, enumerate_basis
from .lindblad import LindbladSpec
from .sdp import (
    NUMERICAL_FAILURE,
    OPTIMAL,
    Constraint,
    SdpSolution,
    SdpStandardForm,
    SolverSettings,
    solve,
)

__all__ = [
    "RelaxationOptions",
    "RelaxationProblem",
    "SideResult",
    "BoundResult",
    "assemble_primal",
    "assemble_dual",
    "solve_side",
    "solve_bounds",
    "estimate_scale",
    "default_precision",
    "moments_from_solution",
]

LOWER = "lower"
UPPER = "upper"
INFEASIBLE = "infeasible"


def default_precision(spec: LindbladSpec, D: int) -> int:
    """53 bits for D <= 6 or |alpha| <= 2, otherwise 212 bits."""
    alpha = spec.parameters.get("alpha")
    if D <= 6 or (alpha is not None and abs(alpha) <= 2):
        return 53
    return 212


def _rational_scale(sigma) -> Fraction:
    s = Fraction(sigma) if not isinstance(sigma, float) else Fraction(repr(sigma))
    if s <= 0:
        raise ValueError(f"scale must be positive, got {sigma}")
    return s


def _pivots(R, rank, ncols):
    out = []
    for i in range(rank):
        for j in range(ncols):
            if R[i, j] != 0:
                out.append(j)
                break
    return out


@dataclass
class RelaxationProblem:
    tensors: StructureTensors
    degree: int
    sense: str = LOWER
    scale: Fraction = Fraction(1)
    mantissa_bits: int = 53

    def __post_init__(self):
        if self.sense not in (LOWER, UPPER):
            raise ValueError(f"sense must be 'lower' or 'upper', not {self.sense!r}")
        self.scale = _rational_scale(self.scale)
        if self.tensors.D2 != self.degree:
            raise ValueError("tensors were built for a different degree")

    # -- real layout ------------------------------------------------------
    @cached_property
    def coordinates(self) -> list[tuple[int, str]]:
        """Real coordinates as ``(k, 're' | 'im')``."""
        adj = self.tensors.adjoint_index
        out = []
        for k, kd in enumerate(adj):
            if kd == k:
                out.append((k, "re"))
            elif k < kd:
                out.append((k, "re"))
                out.append((k, "im"))
        return out

    @cached_property
    def _moment_map(self) -> list[list[tuple[int, ExactComplex]]]:
        # Lambda_k = sum_t coeff * u_t, including the sigma**deg(k) factor
        adj = self.tensors.adjoint_index
        degs = self.tensors.big.degrees
        pos = {c: t for t, c in enumerate(self.coordinates)}
        out = []
        for k, kd in enumerate(adj):
            w = self.scale ** degs[k]
            if kd == k:
                out.append([(pos[(k, "re")], ExactComplex(w))])
            else:
                base = min(k, kd)
                sign = 1 if k < kd else -1
                out.append([(pos[(base, "re")], ExactComplex(w)), (pos[(base, "im")], ExactComplex(0, sign * w))])
        return out

    def _linear_form(self, row: Mapping[int, ExactComplex], factor: Fraction = Fraction(1)) -> dict[int, ExactComplex]:
        acc: dict[int, ExactComplex] = {}
        mm = self._moment_map
        for k, c in row.items():
            for t, w in mm[k]:
                v = c * w * factor
                acc[t] = acc[t] + v if t in acc else v
        return {t: v for t, v in acc.items() if v}

    @cached_property
    def objective(self) -> list[Fraction]:
        """g with ``sum_k B_k Lambda_k = g . u`` (sign flipped for the upper sense)."""
        form = self._linear_form(self.tensors.B)
        sign = 1 if self.sense == LOWER else -1
        g = [Fraction(0)] * len(self.coordinates)
        for t, v in form.items():
            # Hermitian observable: the imaginary part cancels identically
            g[t] = sign * v.re
        return g

    @cached_property
    def _all_equalities(self) -> list[tuple[dict[int, Fraction], Fraction, str]]:
        rows = [({0: Fraction(1)}, Fraction(1), "norm")]
        adj = self.tensors.adjoint_index
        degs = self.tensors.big.degrees
        for i, Li in enumerate(self.tensors.L):
            if adj[i] < i or not Li:
                continue  # the conjugate row carries the same real information
            form = self._linear_form(Li, self.scale ** -degs[i])
            re = {t: v.re for t, v in form.items() if v.re}
            im = {t: v.im for t, v in form.items() if v.im}
            if re:
                rows.append((re, Fraction(0), f"L{i}.re"))
            if im:
                rows.append((im, Fraction(0), f"L{i}.im"))
        return rows

    def _independent(self, rows):
        """Linearly independent subset of ``rows``, found exactly.

        Rows are kept greedily in order, so normalization comes first.
        """
        K = len(self.coordinates)
        r = len(rows)
        if r == 0:
            return []
        entries = [flint.fmpq(0)] * (K * r)
        for j, (row, _, _) in enumerate(rows):
            for t, v in row.items():
                entries[t * r + j] = flint.fmpq(v.numerator, v.denominator)
        R, rank = flint.fmpq_mat(K, r, entries).rref()
        return [rows[j] for j in _pivots(R, rank, r)]

    @staticmethod
    def _project_out(rows, cols):
        """Combinations of ``rows`` in which the coordinates ``cols`` cancel.

        A coordinate outside the moment matrix and the objective can absorb
        any value, so only these combinations constrain the rest.
        """
        r, c = len(rows), len(cols)
        entries = [flint.fmpq(0)] * (c * r)
        for j, (row, _, _) in enumerate(rows):
            for a, t in enumerate(cols):
                v = row.get(t)
                if v:
                    entries[a * r + j] = flint.fmpq(v.numerator, v.denominator)
        R, rank = flint.fmpq_mat(c, r, entries).rref()
        piv = _pivots(R, rank, r)
        drop = set(cols)
        out = []
        for f in (j for j in range(r) if j not in set(piv)):
            w = {f: Fraction(1)}
            for i, pc in enumerate(piv):
                x = R[i, f]
                if x != 0:
                    w[pc] = -Fraction(int(x.p), int(x.q))
            acc: dict[int, Fraction] = {}
            rhs = Fraction(0)
            for j, wj in w.items():
                row, b, _ = rows[j]
                rhs += wj * b
                for t, v in row.items():
                    acc[t] = acc.get(t, 0) + wj * v
            acc = {t: v for t, v in acc.items() if v and t not in drop}
            if acc or rhs:
                out.append((dict(sorted(acc.items())), rhs, "+".join(rows[j][2] for j in sorted(w))))
        return out

    @cached_property
    def _reduction(self):
        """Facial reduction of the moment matrix and elimination of free coordinates, to a fixed point.

        A coordinate that enters no equality and not the objective, and whose
        coefficient matrix is diagonal with positive entries on the current
        rows, is a recession direction of the moment side with zero cost.
        Every certificate Gram matrix therefore vanishes on those rows, so
        they are dropped. A coordinate present only in equalities is
        projected out of them. Neither step changes the optimal value.
        """
        N = self.tensors.small.size
        rows = self._independent(self._all_equalities)
        keep = set(range(N))
        objective = {t for t, g in enumerate(self.objective) if g}
        while True:
            changed = False
            constrained = {t for row, _, _ in rows for t in row} | objective
            for t, Ft in enumerate(self._full_psd):
                if t in constrained:
                    continue
                ent = [(r, s, v) for (r, s), v in Ft.items() if r % N in keep and s % N in keep]
                if ent and all(r == s and v > 0 for r, s, v in ent):
                    keep -= {r % N for r, _, _ in ent}
                    changed = True
            in_psd = {
                t for t, Ft in enumerate(self._full_psd)
                if any(r % N in keep and s % N in keep for r, s in Ft)
            }
            free = sorted({t for row, _, _ in rows for t in row} - in_psd - objective)
            if free:
                rows = self._independent(self._project_out(rows, free))
                changed = True
            if not changed:
                if any(not row and rhs for row, rhs, _ in rows):
                    raise ValueError("stationarity equalities are inconsistent")
                return rows, tuple(sorted(keep))

    @property
    def equalities(self) -> list[tuple[dict[int, Fraction], Fraction, str]]:
        """Independent equality rows after the reductions of :attr:`_reduction`."""
        return self._reduction[0]

    @property
    def removed_equalities(self) -> int:
        return len(self._all_equalities) - len(self.equalities)

    @cached_property
    def _full_psd(self) -> list[dict[tuple[int, int], Fraction]]:
        # F_t over the whole real-embedded moment matrix (size 2N), upper triangle
        small = self.tensors.small
        N = small.size
        degs = small.degrees
        F: list[dict[tuple[int, int], Fraction]] = [dict() for _ in self.coordinates]

        def put(t, key, v):
            if v:
                d = F[t]
                d[key] = d.get(key, 0) + v

        for i in range(N):
            for j in range(i, N):
                row = self.tensors.A[(i, j)]
                if not row:
                    continue
                form = self._linear_form(row, self.scale ** -(degs[i] + degs[j]))
                for t, c in form.items():
                    put(t, (i, j), c.re)
                    put(t, (N + i, N + j), c.re)
                    put(t, (i, N + j), -c.im)
                    if i != j:
                        put(t, (j, N + i), c.im)
        return [{k: v for k, v in d.items() if v} for d in F]

    @property
    def active(self) -> tuple[int, ...]:
        """Basis rows kept in the moment matrix."""
        return self._reduction[1]

    @cached_property
    def block_size(self) -> int:
        return 2 * len(self.active)

    @cached_property
    def _psd_restricted(self) -> list[dict[tuple[int, int], Fraction]]:
        N = self.tensors.small.size
        n = len(self.active)
        pos = {}
        for p, i in enumerate(self.active):
            pos[i] = p
            pos[N + i] = n + p
        out = []
        for Ft in self._full_psd:
            d = {}
            for (r, s), v in Ft.items():
                if r in pos and s in pos:
                    a, b = pos[r], pos[s]
                    d[(a, b) if a <= b else (b, a)] = v
            out.append(d)
        return out

    @cached_property
    def live(self) -> tuple[int, ...]:
        """Coordinates that still appear in the moment matrix, an equality or the objective."""
        constrained = {t for row, _, _ in self.equalities for t in row}
        return tuple(
            t for t, Ft in enumerate(self._psd_restricted)
            if Ft or t in constrained or self.objective[t]
        )

    def uncertifiable(self) -> list[str]:
        """Monomials whose objective coordinate is touched by nothing else (the bound is infinite)."""
        constrained = {t for row, _, _ in self.equalities for t in row}
        big = self.tensors.big
        return [
            str(big[self.coordinates[t][0]])
            for t in self.live
            if self.objective[t] and not self._psd_restricted[t] and t not in constrained
        ]

    @property
    def psd_coefficients(self) -> list[dict[tuple[int, int], Fraction]]:
        """F_t for each live coordinate, on the reduced real-embedded moment matrix."""
        return [self._psd_restricted[t] for t in self.live]

    def unscale_moments(self, u_live) -> dict:
        """Complex pseudo-expectations keyed by monomial from live coordinates (nan when undetermined)."""
        u = [math.nan] * len(self.coordinates)
        for t, v in zip(self.live, u_live):
            u[t] = float(v)
        big = self.tensors.big
        out = {}
        for k, terms in enumerate(self._moment_map):
            z = 0j
            for t, w in terms:
                z += complex(w) * u[t]
            out[big[k]] = z
        return out


def assemble_dual(problem: RelaxationProblem) -> SdpStandardForm:
    """Certificate program: maximize alpha over (alpha, beta, Y >= 0).

    One equality per live real coordinate ``t``:
    ``sum_r E[r, t] lambda_r + <F_t, Y> = g_t`` where ``lambda_0 = alpha``.
    """
    eqs = problem.equalities
    cons = []
    for t, Ft in zip(problem.live, problem.psd_coefficients):
        free = {r: row[t] for r, (row, _, _) in enumerate(eqs) if t in row}
        cons.append(Constraint(free=free, blocks={0: dict(Ft)} if Ft else {}, rhs=problem.objective[t]))
    c_free = {r: -rhs for r, (_, rhs, _) in enumerate(eqs) if rhs}
    return SdpStandardForm((problem.block_size,), len(eqs), cons, c_free=c_free)


def assemble_primal(problem: RelaxationProblem) -> SdpStandardForm:
    """Moment program: minimize g.u subject to E u = e and X = M(u) >= 0."""
    index = {t: p for p, t in enumerate(problem.live)}
    cons = [Constraint(free={index[t]: v for t, v in row.items()}, rhs=rhs) for row, rhs, _ in problem.equalities]
    coupling: dict[tuple[int, int], dict[int, Fraction]] = {}
    for p, Ft in enumerate(problem.psd_coefficients):
        for key, v in Ft.items():
            coupling.setdefault(key, {})[p] = -v
    n = problem.block_size
    half = Fraction(1, 2)
    for r in range(n):
        for s in range(r, n):
            cons.append(Constraint(free=coupling.get((r, s), {}), blocks={0: {(r, s): Fraction(1) if r == s else half}}))
    c_free = {index[t]: problem.objective[t] for t in problem.live if problem.objective[t]}
    return SdpStandardForm((n,), len(problem.live), cons, c_free=c_free)


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


@dataclass
class SideResult:
    sense: str
    bound: float | None
    status: str
    reliable: bool
    duality_gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    max_equality_residual: float | None
    min_eigenvalue: float | None
    iterations: int
    time: float
    exact_bound: Fraction | None = field(default=None, repr=False)
    message: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exact_bound"] = None if self.exact_bound is None else str(self.exact_bound)
        return d


@dataclass
class BoundResult:
    lower: float | None
    upper: float | None
    sides: dict[str, SideResult]
    degree: int
    scale: Fraction
    mantissa_bits: int
    wall_time: float
    D1: int = 0

    @property
    def gap(self) -> float | None:
        if self.lower is None or self.upper is None:
            return None
        return self.upper - self.lower

    @property
    def rel_gap(self) -> float | None:
        if self.gap is None or self.upper + self.lower == 0:
            return None
        return self.gap / (self.upper + self.lower)

    @property
    def max_residual(self) -> float:
        vals = [s.max_equality_residual for s in self.sides.values() if s.max_equality_residual is not None]
        return max(vals) if vals else math.inf

    @property
    def reliable(self) -> bool:
        return all(s.reliable for s in self.sides.values())

    def records(self, model: str = "custom", parameters: Mapping | None = None, observable: str = "") -> list[dict]:
        """One JSON-serializable record per side."""
        params = {k: float(v) for k, v in (parameters or {}).items()}
        out = []
        for sense, s in self.sides.items():
            out.append(
                {
                    "source": "relaxation",
                    "model": model,
                    "parameters": params,
                    "observable": observable,
                    "D": self.degree,
                    "sense": sense,
                    "bound": s.bound,
                    "status": s.status,
                    "reliable": s.reliable,
                    "residuals": {
                        "max_equality": s.max_equality_residual,
                        "primal_infeasibility": s.primal_infeasibility,
                        "dual_infeasibility": s.dual_infeasibility,
                        "min_eigenvalue": s.min_eigenvalue,
                    },
                    "gap": s.duality_gap,
                    "sigma": str(self.scale),
                    "precision_bits": self.mantissa_bits,
                    "time": s.time,
                }
            )
        return out


def _as_fraction(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(float(v))


def certificate_residual(problem: RelaxationProblem, solution: SdpSolution) -> float:
    """Largest violation of the certificate identity, evaluated exactly at the returned point."""
    lam = [_as_fraction(v) for v in solution.x_free]
    Y = solution.X[0]
    eqs = problem.equalities
    worst = Fraction(0)
    for t, Ft in zip(problem.live, problem.psd_coefficients):
        acc = problem.objective[t]
        for r, (row, _, _) in enumerate(eqs):
            if t in row:
                acc -= row[t] * lam[r]
        for (r, s), v in Ft.items():
            acc -= v * _as_fraction(Y[r, s]) * (1 if r == s else 2)
        worst = max(worst, abs(acc))
    return float(worst)


def _min_eig(Y) -> float:
    return float(np.linalg.eigvalsh(np.asarray(Y, dtype=float))[0])


def moments_from_solution(problem: RelaxationProblem, solution: SdpSolution, program: str = "dual") -> dict:
    """Pseudo-expectations (complex floats, unscaled) keyed by monomial."""
    if program == "dual":
        u = [-float(v) for v in solution.y]
    else:
        u = [float(v) for v in solution.x_free]
    return problem.unscale_moments(u)


@dataclass
class RelaxationOptions:
    mantissa_bits: int | None = None
    tol: float | None = None
    max_iters: int = 200
    scale: object = None  # None/1: no scaling, "auto": estimate_scale, number: used verbatim
    program: str = "dual"

    def settings(self, bits: int) -> SolverSettings:
        return SolverSettings(tol=self.tol, max_iters=self.max_iters, mantissa_bits=bits)


def solve_side(problem: RelaxationProblem, options: RelaxationOptions | None = None) -> tuple[SideResult, SdpSolution | None]:
    options = options or RelaxationOptions()
    settings = options.settings(problem.mantissa_bits)
    t0 = time.perf_counter()
    sign = 1 if problem.sense == LOWER else -1
    blind = problem.uncertifiable()
    if blind:
        msg = f"no certificate exists at D={problem.degree}: objective moments {blind} are unconstrained"
        return (
            SideResult(problem.sense, None, INFEASIBLE, False, math.nan, math.nan, math.nan,
                       None, None, 0, time.perf_counter() - t0, message=msg),
            None,
        )
    try:
        if options.program == "primal":
            form = assemble_primal(problem)
        else:
            form = assemble_dual(problem)
        sol = solve(form, settings)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return (
            SideResult(problem.sense, None, NUMERICAL_FAILURE, False, math.nan, math.nan, math.nan,
                       None, None, 0, time.perf_counter() - t0, message=str(exc)),
            None,
        )
    usable = sol.status in (OPTIMAL, "near_optimal")
    bound = exact = residual = min_eig = None
    if usable:
        if options.program == "primal":
            # the solver's dual objective is the certified side of the moment program
            exact = sign * sol.dual_objective
        else:
            exact = sign * _as_fraction(sol.x_free[0])
            residual = certificate_residual(problem, sol)
            min_eig = _min_eig(sol.X[0])
        bound = float(exact)
        if options.program == "primal":
            residual = sol.primal_infeasibility
            min_eig = _min_eig(sol.X[0])
    side = SideResult(
        sense=problem.sense,
        bound=bound,
        status=sol.status,
        reliable=sol.status == OPTIMAL,
        duality_gap=sol.duality_gap,
        primal_infeasibility=sol.primal_infeasibility,
        dual_infeasibility=sol.dual_infeasibility,
        max_equality_residual=residual,
        min_eigenvalue=min_eig,
        iterations=sol.iterations,
        time=time.perf_counter() - t0,
        exact_bound=exact,
        message=sol.message,
    )
    return side, sol


def _check_observable(observable: OperatorPolynomial, D: int):
    if not observable.is_hermitian():
        raise ValueError("observable must be Hermitian")
    if observable.degree > 2 * D:
        raise ValueError(f"observable degree {observable.degree} needs D >= {math.ceil(observable.degree / 2)}")


def solve_bounds(
    spec: LindbladSpec,
    observable: OperatorPolynomial,
    D: int,
    options: RelaxationOptions | None = None,
    tensors: StructureTensors | None = None,
) -> BoundResult:
    """Lower and upper bounds on the stationary expectation of ``observable`` at degree ``D``."""
    options = options or RelaxationOptions()
    if D < 1:
        raise ValueError("D must be >= 1")
    _check_observable(observable, D)
    t0 = time.perf_counter()
    bits = options.mantissa_bits or default_precision(spec, D)
    if isinstance(options.scale, str) and options.scale == "auto":
        scale = estimate_scale(spec, observable, options)
    else:
        scale = _rational_scale(options.scale or 1)
    if tensors is None:
        tensors = build_tensors(spec, enumerate_basis(spec.mode_count, D), observable)
    sides = {}
    for sense in (LOWER, UPPER):
        prob = RelaxationProblem(tensors, D, sense, scale, bits)
        sides[sense], _ = solve_side(prob, options)
    return BoundResult(
        lower=sides[LOWER].bound,
        upper=sides[UPPER].bound,
        sides=sides,
        degree=D,
        scale=scale,
        mantissa_bits=bits,
        wall_time=time.perf_counter() - t0,
        D1=tensors.D1,
    )


def _number_monomial(j: int, n: int) -> NormalMonomial:
    return NormalMonomial(tuple((1, 1) if i == j else (0, 0) for i in range(n)))


def estimate_scale(spec: LindbladSpec, observable: OperatorPolynomial | None = None, options=None) -> Fraction:
    """Monomial rescaling base ``sqrt(max(1, max_j <a_j^+ a_j>))`` from a cheap relaxation.

    The occupation estimate comes from the pseudo-expectations of the
    lowest degree at which stationarity constrains second moments. An
    explicit numeric ``options.scale`` is returned unchanged; any failure
    gives 1.
    """
    if options is not None and options.scale not in (None, "auto"):
        return _rational_scale(options.scale)
    try:
        n = spec.mode_count
        D = max(2, math.ceil((spec.generator_degree + 2) / 2))
        total = sum((number(j, n) for j in range(n)), OperatorPolynomial.zero(n))
        tensors = build_tensors(spec, enumerate_basis(n, D), total)
        occ = []
        for sense in (LOWER, UPPER):
            prob = RelaxationProblem(tensors, D, sense, 1, 53)
            side, sol = solve_side(prob, RelaxationOptions(mantissa_bits=53, max_iters=100))
            if sol is None or side.bound is None:
                continue
            mom = moments_from_solution(prob, sol)
            occ.append(max(mom[_number_monomial(j, n)].real for j in range(n)))
        if not occ:
            return Fraction(1)
        # the lower-bound point is loose at this degree; the upper one tracks |alpha|^2
        m = max(1.0, max(occ))
        if not math.isfinite(m):
            return Fraction(1)
        return Fraction(round(math.sqrt(m) * 8), 8)
    except Exception:  # noqa: BLE001 -- documented fallback
        return Fraction(1)


def records_to_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
