"""Random rational operators and cached expensive runs shared by the tests."""

from __future__ import annotations

import random
from fractions import Fraction
from functools import lru_cache

from bosonbound.algebra import ExactComplex, NormalMonomial, OperatorPolynomial
from bosonbound.basis import enumerate_basis
from bosonbound.fock import TruncationSetting, oracle_extremal, stationary_state
from bosonbound.lindblad import Jump, LindbladSpec, build_model
from bosonbound.relaxation import RelaxationOptions, solve_bounds
from bosonbound.algebra import number, creation, annihilation, multiply


def rand_q(rng: random.Random, lo=-4, hi=4) -> Fraction:
    return Fraction(rng.randint(lo, hi), rng.randint(1, 3))


def random_polynomial(rng: random.Random, n: int, max_degree: int, terms: int = 4, real: bool = False) -> OperatorPolynomial:
    monos = list(enumerate_basis(n, max_degree))
    acc = {}
    for _ in range(terms):
        m = rng.choice(monos)
        acc[m] = ExactComplex(rand_q(rng), 0 if real else rand_q(rng))
    p = OperatorPolynomial(acc, n)
    if p.is_zero():
        p = OperatorPolynomial.scalar(1, n)
    return p


def random_hermitian(rng, n, max_degree, terms=3):
    p = random_polynomial(rng, n, max_degree, terms)
    return p + p.adjoint()


def random_spec(rng: random.Random, n: int | None = None) -> LindbladSpec:
    n = n or rng.randint(1, 2)
    H = random_hermitian(rng, n, rng.randint(1, 4))
    jumps = tuple(
        Jump(random_polynomial(rng, n, rng.randint(1, 2), 2), Fraction(rng.randint(0, 5), rng.randint(1, 4)))
        for _ in range(rng.randint(1, 3))
    )
    return LindbladSpec(n, H, jumps)


def n_op(n_modes=1):
    out = number(0, n_modes)
    for j in range(1, n_modes):
        out = out + number(j, n_modes)
    return out


# criterion number -> one-line verdict, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}

FIG1 = {"omega": "1", "kappa1": "0.2", "kappa2": "2", "alpha": "1"}
FIG2 = {"omega": "0", "kappa1": "0", "kappa2": "2", "alpha": "1"}
FIG3 = {"g2": "0.25", "kappa_a": "1.94", "kappa_b": "19.4"}


@lru_cache(maxsize=None)
def cat_bounds(D: int, alpha: str = "1", scale="auto", bits=None):
    spec = build_model("cat", {**FIG1, "alpha": alpha})
    return solve_bounds(spec, n_op(), D, RelaxationOptions(mantissa_bits=bits, scale=scale))


@lru_cache(maxsize=None)
def perfect_cat_bounds(D: int, bits=128):
    spec = build_model("perfect_cat", FIG2)
    return solve_bounds(spec, n_op(), D, RelaxationOptions(mantissa_bits=bits, scale=1))


@lru_cache(maxsize=None)
def memory_bounds(eps: str, D: int):
    spec = build_model("memory_buffer", {**FIG3, "eps_d": eps})
    return solve_bounds(spec, number(0, 2), D, RelaxationOptions(scale=1))


@lru_cache(maxsize=None)
def cat_oracle(alpha: str = "1"):
    spec = build_model("cat", {**FIG1, "alpha": alpha})
    return stationary_state(spec, TruncationSetting((40,), escalate=False), {"n": n_op()})


@lru_cache(maxsize=None)
def perfect_cat_extremal():
    return oracle_extremal(build_model("perfect_cat", FIG2), n_op())


@lru_cache(maxsize=None)
def memory_oracle(eps: str):
    spec = build_model("memory_buffer", {**FIG3, "eps_d": eps})
    return stationary_state(spec, None, {"n_a": number(0, 2)})
