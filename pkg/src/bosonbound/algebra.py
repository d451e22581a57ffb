"""Normal-ordered algebra of multi-mode bosonic operators.

Operators are finite sums of normal-ordered monomials
``prod_j adag_j**p_j a_j**q_j`` with exact Gaussian-rational coefficients.
Products are brought back to normal order with the closed-form reordering
identity

    a**q adag**p = sum_k k! C(q, k) C(p, k) adag**(p - k) a**(q - k)

applied independently on every mode (distinct modes commute).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Rational
from typing import Iterable, Iterator, Mapping

__all__ = [
    "ExactComplex",
    "NormalMonomial",
    "OperatorPolynomial",
    "ModeMismatchError",
    "multiply",
    "adjoint",
    "commutator",
    "annihilation",
    "creation",
    "number",
    "identity",
]


class ModeMismatchError(ValueError):
    """Raised when two operators act on a different number of modes."""


def _to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite coefficient {x!r}")
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


class ExactComplex:
    """Complex number with exact rational real and imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = _to_fraction(re)
        self.im = _to_fraction(im)

    @classmethod
    def coerce(cls, x) -> "ExactComplex":
        if isinstance(x, ExactComplex):
            return x
        if isinstance(x, complex):
            return cls(x.real, x.imag)
        return cls(x)

    def __bool__(self) -> bool:
        return bool(self.re) or bool(self.im)

    def __eq__(self, other) -> bool:
        try:
            other = ExactComplex.coerce(other)
        except TypeError:
            return NotImplemented
        return self.re == other.re and self.im == other.im

    def __hash__(self) -> int:
        return hash((self.re, self.im))

    def __add__(self, other):
        other = ExactComplex.coerce(other)
        return ExactComplex(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __sub__(self, other):
        other = ExactComplex.coerce(other)
        return ExactComplex(self.re - other.re, self.im - other.im)

    def __rsub__(self, other):
        return ExactComplex.coerce(other) - self

    def __neg__(self):
        return ExactComplex(-self.re, -self.im)

    def __mul__(self, other):
        other = ExactComplex.coerce(other)
        return ExactComplex(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = ExactComplex.coerce(other)
        den = other.re * other.re + other.im * other.im
        if not den:
            raise ZeroDivisionError("division by exact zero")
        num = self * other.conjugate()
        return ExactComplex(num.re / den, num.im / den)

    def conjugate(self) -> "ExactComplex":
        return ExactComplex(self.re, -self.im)

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __repr__(self) -> str:
        if not self.im:
            return str(self.re)
        if not self.re:
            return f"{self.im}j"
        return f"({self.re}{'+' if self.im > 0 else '-'}{abs(self.im)}j)"


ONE = ExactComplex(1)
IMAG = ExactComplex(0, 1)


@dataclass(frozen=True, order=False)
class NormalMonomial:
    """``prod_j adag_j**p_j a_j**q_j`` stored as one ``(p, q)`` pair per mode."""

    exponents: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.exponents:
            raise ValueError("a monomial needs at least one mode")
        for p, q in self.exponents:
            if p < 0 or q < 0:
                raise ValueError(f"negative exponent in {self.exponents}")

    @classmethod
    def from_flat(cls, flat: Iterable[int]) -> "NormalMonomial":
        flat = tuple(flat)
        return cls(tuple(zip(flat[0::2], flat[1::2])))

    @classmethod
    def one(cls, mode_count: int) -> "NormalMonomial":
        return cls(((0, 0),) * mode_count)

    @property
    def mode_count(self) -> int:
        return len(self.exponents)

    @property
    def flat(self) -> tuple[int, ...]:
        return tuple(e for pair in self.exponents for e in pair)

    @property
    def total_degree(self) -> int:
        return sum(p + q for p, q in self.exponents)

    @property
    def sort_key(self) -> tuple:
        """Graded lexicographic key on the flattened exponent tuple."""
        return (self.total_degree, self.flat)

    def adjoint(self) -> "NormalMonomial":
        return NormalMonomial(tuple((q, p) for p, q in self.exponents))

    def is_self_adjoint(self) -> bool:
        return all(p == q for p, q in self.exponents)

    def __str__(self) -> str:
        factors = []
        for j, (p, q) in enumerate(self.exponents):
            suffix = str(j) if self.mode_count > 1 else ""
            if p:
                factors.append(f"ad{suffix}" + (f"^{p}" if p > 1 else ""))
            if q:
                factors.append(f"a{suffix}" + (f"^{q}" if q > 1 else ""))
        return "*".join(factors) if factors else "1"


@lru_cache(maxsize=None)
def _reorder_single(q1: int, p2: int) -> tuple[tuple[int, int], ...]:
    # a**q1 adag**p2 -> [(k, k! C(q1,k) C(p2,k))]
    return tuple(
        (k, math.factorial(k) * math.comb(q1, k) * math.comb(p2, k))
        for k in range(min(q1, p2) + 1)
    )


@lru_cache(maxsize=1 << 16)
def monomial_product(
    left: NormalMonomial, right: NormalMonomial
) -> tuple[tuple[NormalMonomial, int], ...]:
    """Normal-ordered expansion of ``left * right`` with integer coefficients."""
    per_mode = []
    for (p1, q1), (p2, q2) in zip(left.exponents, right.exponents):
        per_mode.append(
            [((p1 + p2 - k, q1 + q2 - k), c) for k, c in _reorder_single(q1, p2)]
        )
    out = []
    for combo in itertools.product(*per_mode):
        coeff = 1
        for _, c in combo:
            coeff *= c
        out.append((NormalMonomial(tuple(e for e, _ in combo)), coeff))
    return tuple(out)


class OperatorPolynomial:
    """Immutable finite linear combination of normal-ordered monomials.

    Terms with an exactly zero coefficient are never stored, so two
    polynomials are equal iff their term maps are equal.
    """

    __slots__ = ("_terms", "_mode_count", "_hash")

    def __init__(self, terms: Mapping[NormalMonomial, object] | None = None, mode_count: int | None = None):
        clean: dict[NormalMonomial, ExactComplex] = {}
        for mono, coeff in (terms or {}).items():
            if mode_count is None:
                mode_count = mono.mode_count
            elif mono.mode_count != mode_count:
                raise ModeMismatchError(
                    f"monomial on {mono.mode_count} modes in a {mode_count}-mode polynomial"
                )
            c = ExactComplex.coerce(coeff)
            if c:
                clean[mono] = clean[mono] + c if mono in clean else c
                if not clean[mono]:
                    del clean[mono]
        if mode_count is None or mode_count < 1:
            raise ValueError("mode_count must be a positive integer")
        self._mode_count = mode_count
        self._terms = {m: clean[m] for m in sorted(clean, key=lambda m: m.sort_key)}
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, mode_count: int) -> "OperatorPolynomial":
        return cls({}, mode_count)

    @classmethod
    def scalar(cls, value, mode_count: int) -> "OperatorPolynomial":
        return cls({NormalMonomial.one(mode_count): value}, mode_count)

    @classmethod
    def monomial(cls, exponents, coeff=1) -> "OperatorPolynomial":
        mono = exponents if isinstance(exponents, NormalMonomial) else NormalMonomial(
            tuple(tuple(e) for e in exponents)
        )
        return cls({mono: coeff}, mono.mode_count)

    # -- accessors --------------------------------------------------------
    @property
    def mode_count(self) -> int:
        return self._mode_count

    @property
    def terms(self) -> dict[NormalMonomial, ExactComplex]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[NormalMonomial, ExactComplex]]:
        return iter(self._terms.items())

    def coefficient(self, mono: NormalMonomial) -> ExactComplex:
        return self._terms.get(mono, ExactComplex(0))

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> float:
        """Largest total degree of a term; ``-inf`` for the zero polynomial."""
        if not self._terms:
            return -math.inf
        return max(m.total_degree for m in self._terms)

    def is_hermitian(self) -> bool:
        return self == self.adjoint()

    # -- algebra ----------------------------------------------------------
    def _check(self, other: "OperatorPolynomial"):
        if self._mode_count != other._mode_count:
            raise ModeMismatchError(
                f"operators on {self._mode_count} and {other._mode_count} modes"
            )

    def _coerce(self, other) -> "OperatorPolynomial":
        if isinstance(other, OperatorPolynomial):
            self._check(other)
            return other
        return OperatorPolynomial.scalar(other, self._mode_count)

    def __add__(self, other):
        other = self._coerce(other)
        acc = dict(self._terms)
        for m, c in other._terms.items():
            acc[m] = acc[m] + c if m in acc else c
        return OperatorPolynomial(acc, self._mode_count)

    __radd__ = __add__

    def __neg__(self):
        return OperatorPolynomial({m: -c for m, c in self._terms.items()}, self._mode_count)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, factor) -> "OperatorPolynomial":
        f = ExactComplex.coerce(factor)
        return OperatorPolynomial({m: c * f for m, c in self._terms.items()}, self._mode_count)

    def __mul__(self, other):
        if isinstance(other, OperatorPolynomial):
            return multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, k: int):
        out = OperatorPolynomial.scalar(1, self._mode_count)
        for _ in range(k):
            out = multiply(out, self)
        return out

    def adjoint(self) -> "OperatorPolynomial":
        return OperatorPolynomial(
            {m.adjoint(): c.conjugate() for m, c in self._terms.items()}, self._mode_count
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, OperatorPolynomial):
            return NotImplemented
        return self._mode_count == other._mode_count and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._mode_count, tuple(self._terms.items())))
        return self._hash

    def __repr__(self) -> str:
        if not self._terms:
            return f"OperatorPolynomial(0, modes={self._mode_count})"
        body = " + ".join(f"{c!r}*{m}" for m, c in self._terms.items())
        return f"OperatorPolynomial({body}, modes={self._mode_count})"

    # -- literal (JSON) form ----------------------------------------------
    def to_literal(self) -> list[dict]:
        """Term list ``[{coeff_re, coeff_im, modes: [[p, q], ...]}, ...]``.

        Coefficients are emitted as exact rational strings.
        """
        return [
            {
                "coeff_re": str(c.re),
                "coeff_im": str(c.im),
                "modes": [list(pq) for pq in m.exponents],
            }
            for m, c in self._terms.items()
        ]

    @classmethod
    def from_literal(cls, terms: list[dict], mode_count: int | None = None) -> "OperatorPolynomial":
        acc: dict[NormalMonomial, ExactComplex] = {}
        for t in terms:
            mono = NormalMonomial(tuple((int(p), int(q)) for p, q in t["modes"]))
            c = ExactComplex(_literal_number(t.get("coeff_re", 0)), _literal_number(t.get("coeff_im", 0)))
            acc[mono] = acc[mono] + c if mono in acc else c
            if mode_count is None:
                mode_count = mono.mode_count
        if mode_count is None:
            raise ValueError("empty polynomial literal needs an explicit mode_count")
        return cls(acc, mode_count)


def _literal_number(x) -> Fraction:
    # floats in JSON are read through their decimal text so 0.2 means 1/5
    if isinstance(x, float):
        return Fraction(repr(x))
    return _to_fraction(x)


def multiply(lhs: OperatorPolynomial, rhs: OperatorPolynomial) -> OperatorPolynomial:
    """Normal-ordered canonical form of the operator product ``lhs * rhs``."""
    lhs._check(rhs)
    acc: dict[NormalMonomial, ExactComplex] = {}
    for m1, c1 in lhs._terms.items():
        for m2, c2 in rhs._terms.items():
            c12 = c1 * c2
            for m, k in monomial_product(m1, m2):
                term = c12 * k
                acc[m] = acc[m] + term if m in acc else term
    return OperatorPolynomial(acc, lhs.mode_count)


def adjoint(p: OperatorPolynomial) -> OperatorPolynomial:
    return p.adjoint()


def commutator(x: OperatorPolynomial, y: OperatorPolynomial) -> OperatorPolynomial:
    return multiply(x, y) - multiply(y, x)


def _single(mode: int, mode_count: int, pq: tuple[int, int]) -> OperatorPolynomial:
    if not 0 <= mode < mode_count:
        raise IndexError(f"mode {mode} out of range for {mode_count} modes")
    exps = [(0, 0)] * mode_count
    exps[mode] = pq
    return OperatorPolynomial.monomial(tuple(exps))


def annihilation(mode: int = 0, mode_count: int = 1) -> OperatorPolynomial:
    return _single(mode, mode_count, (0, 1))


def creation(mode: int = 0, mode_count: int = 1) -> OperatorPolynomial:
    return _single(mode, mode_count, (1, 0))


def number(mode: int = 0, mode_count: int = 1) -> OperatorPolynomial:
    return _single(mode, mode_count, (1, 1))


def identity(mode_count: int = 1) -> OperatorPolynomial:
    return OperatorPolynomial.scalar(1, mode_count)
