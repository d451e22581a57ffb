"""Ordered monomial sets and the structure tensors of the relaxation."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass

from .algebra import ExactComplex, NormalMonomial, OperatorPolynomial, ModeMismatchError, monomial_product
from .lindblad import LindbladSpec, adjoint_action

__all__ = [
    "MonomialBasis",
    "StructureTensors",
    "enumerate_basis",
    "basis_size",
    "build_tensors",
    "DegreeClampWarning",
]


class DegreeClampWarning(UserWarning):
    """The stationarity degree 2D - d_L was negative and has been set to 0."""


def basis_size(n: int, D: int) -> int:
    return math.comb(2 * n + D, D)


def _compositions(total: int, parts: int):
    # all tuples of `parts` non-negative ints summing to `total`, in lexicographic order
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class MonomialBasis:
    """Graded-lexicographic list of normal-ordered monomials of degree <= D.

    Indices are 0-based here; position 0 is the identity.
    """

    def __init__(self, mode_count: int, max_degree: int):
        if mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if max_degree < 0:
            raise ValueError("max_degree must be >= 0")
        self.mode_count = mode_count
        self.max_degree = max_degree
        monos = []
        self._prefix = []
        for d in range(max_degree + 1):
            for flat in _compositions(d, 2 * mode_count):
                monos.append(NormalMonomial.from_flat(flat))
            self._prefix.append(len(monos))
        self.monomials: tuple[NormalMonomial, ...] = tuple(monos)
        self._index = {m: i for i, m in enumerate(monos)}
        self.degrees = tuple(m.total_degree for m in monos)
        self.adjoint_index = tuple(self._index[m.adjoint()] for m in monos)

    def __len__(self) -> int:
        return len(self.monomials)

    @property
    def size(self) -> int:
        return len(self.monomials)

    def __getitem__(self, i: int) -> NormalMonomial:
        return self.monomials[i]

    def __iter__(self):
        return iter(self.monomials)

    def __contains__(self, mono) -> bool:
        return mono in self._index

    def index(self, mono: NormalMonomial) -> int:
        try:
            return self._index[mono]
        except KeyError:
            raise KeyError(f"{mono} is not in the degree-{self.max_degree} basis") from None

    def count_up_to(self, degree: int) -> int:
        """N_degree: number of leading entries forming the degree-`degree` basis."""
        if degree < 0:
            return 0
        return self._prefix[min(degree, self.max_degree)]

    def operator(self, i: int) -> OperatorPolynomial:
        return OperatorPolynomial.monomial(self.monomials[i])


def enumerate_basis(n: int, D: int) -> MonomialBasis:
    return MonomialBasis(n, D)


SparseRow = dict  # k -> ExactComplex


@dataclass
class StructureTensors:
    """Sparse expansions over the big basis S_{2 D2}.

    ``A[(i, j)]`` expands O_i^+ O_j, ``L[i]`` expands L^+(O_i) and ``B`` the
    observable; each as ``{k: coefficient}``.
    """

    small: MonomialBasis
    big: MonomialBasis
    D1: int
    D2: int
    generator_degree: int
    A: dict[tuple[int, int], SparseRow]
    L: list[SparseRow]
    B: SparseRow

    @property
    def adjoint_index(self) -> tuple[int, ...]:
        return self.big.adjoint_index

    def expand(self, row: SparseRow) -> OperatorPolynomial:
        return OperatorPolynomial({self.big[k]: c for k, c in row.items()}, self.big.mode_count)

    def with_observable(self, observable: OperatorPolynomial) -> "StructureTensors":
        return StructureTensors(
            self.small, self.big, self.D1, self.D2, self.generator_degree,
            self.A, self.L, _expand(observable, self.big),
        )

    def to_json(self) -> dict:
        """Sparse-coordinate dump; coefficients are exact rational strings."""

        def cc(c: ExactComplex):
            return [str(c.re), str(c.im)]

        return {
            "mode_count": self.big.mode_count,
            "D1": self.D1,
            "D2": self.D2,
            "generator_degree": self.generator_degree,
            "basis": [list(m.flat) for m in self.big],
            "A": [[i, j, k, *cc(c)] for (i, j), row in sorted(self.A.items()) for k, c in row.items()],
            "L": [[i, k, *cc(c)] for i, row in enumerate(self.L) for k, c in row.items()],
            "B": [[k, *cc(c)] for k, c in self.B.items()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


def _expand(p: OperatorPolynomial, basis: MonomialBasis) -> SparseRow:
    if p.mode_count != basis.mode_count:
        raise ModeMismatchError("operator and basis have different mode counts")
    row = {}
    for m, c in p.items():
        if m not in basis:
            raise ValueError(f"term {m} exceeds degree {basis.max_degree}")
        row[basis.index(m)] = c
    return dict(sorted(row.items()))


def _product_row(left: NormalMonomial, right: NormalMonomial, big: MonomialBasis) -> SparseRow:
    row: dict[int, int] = {}
    for mono, c in monomial_product(left, right):
        k = big.index(mono)
        row[k] = row.get(k, 0) + c
    return {k: ExactComplex(row[k]) for k in sorted(row) if row[k]}


def build_tensors(
    spec: LindbladSpec,
    basis_D: MonomialBasis,
    observable: OperatorPolynomial,
    D1: int | None = None,
    D2: int | None = None,
) -> StructureTensors:
    """Expand products, generator images and the observable over S_{2 D2}.

    ``D1`` defaults to ``2 D2 - d_L``; a negative value is clamped to 0 with a
    :class:`DegreeClampWarning`.
    """
    if basis_D.mode_count != spec.mode_count:
        raise ModeMismatchError("basis and model have different mode counts")
    D2 = basis_D.max_degree if D2 is None else D2
    if D2 != basis_D.max_degree:
        raise ValueError("D2 must equal the basis degree")
    dL = spec.generator_degree
    if D1 is None:
        D1 = 2 * D2 - dL
    if D1 < 0:
        warnings.warn(
            f"2D - d_L = {D1} < 0 at D={D2}; using D1 = 0 (no stationarity information)",
            DegreeClampWarning,
            stacklevel=2,
        )
        D1 = 0
    if D1 + dL > 2 * D2 and D1 > 0:
        raise ValueError(f"D1={D1} too large: D1 + d_L must not exceed 2*D2={2 * D2}")
    if observable.degree > 2 * D2:
        need = math.ceil(observable.degree / 2)
        raise ValueError(f"observable has degree {observable.degree}; use D >= {need}")

    big = MonomialBasis(spec.mode_count, 2 * D2)
    small = basis_D
    N = small.size
    A = {}
    for i, j in itertools.product(range(N), repeat=2):
        A[(i, j)] = _product_row(small[i].adjoint(), small[j], big)

    # graded order: the first N_{D1} entries of S_{2 D2} are exactly S_{D1}
    L = [
        _expand(adjoint_action(spec, OperatorPolynomial.monomial(big[i])), big)
        for i in range(big.count_up_to(D1))
    ]

    return StructureTensors(small, big, D1, D2, dL, A, L, _expand(observable, big))
