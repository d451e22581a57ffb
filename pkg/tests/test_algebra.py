import random
from fractions import Fraction

import numpy as np
import pytest

from bosonbound.algebra import (
    IMAG,
    ExactComplex,
    ModeMismatchError,
    NormalMonomial,
    OperatorPolynomial,
    adjoint,
    annihilation,
    commutator,
    creation,
    identity,
    multiply,
    number,
)
from bosonbound.fock import operator_matrix

from helpers import random_polynomial

a, ad = annihilation(), creation()
one = identity(1)


def mono(*exps, c=1):
    return OperatorPolynomial.monomial(exps, c)


# -- spec examples ----------------------------------------------------------


def test_ccr_product():
    assert multiply(a, ad) == mono((1, 1)) + one


def test_squared_reordering():
    # a^2 a^+2 = a^+2 a^2 + 4 a^+a + 2
    expected = mono((2, 2)) + mono((1, 1)).scale(4) + one.scale(2)
    assert multiply(a * a, ad * ad) == expected


def test_number_squared():
    n = number()
    assert multiply(n, n) == mono((2, 2)) + mono((1, 1))


def test_adjoint_examples():
    assert adjoint(one) == one
    assert adjoint(a.scale(IMAG)) == ad.scale(ExactComplex(0, -1))
    assert adjoint(mono((2, 1))) == mono((1, 2))


def test_commutator_examples():
    assert commutator(a, ad) == one
    assert commutator(number(), a) == -a
    assert commutator(number(), one).is_zero()


def test_mode_mismatch():
    with pytest.raises(ModeMismatchError):
        multiply(a, annihilation(0, 2))
    with pytest.raises(ModeMismatchError):
        commutator(a, creation(1, 2))


def test_two_modes_commute():
    a0, b1 = annihilation(0, 2), creation(1, 2)
    assert commutator(a0, b1).is_zero()
    assert commutator(annihilation(1, 2), b1) == identity(2)


def test_canonical_zero_pruning():
    p = a - a
    assert p.is_zero() and len(p) == 0
    assert p.degree == float("-inf")
    assert (a + ad) - ad == a


def test_literal_round_trip():
    rng = random.Random(3)
    for _ in range(20):
        p = random_polynomial(rng, 2, 3)
        assert OperatorPolynomial.from_literal(p.to_literal(), 2) == p


def test_float_literal_reads_decimal():
    p = OperatorPolynomial.from_literal([{"coeff_re": 0.2, "coeff_im": 0, "modes": [[1, 0]]}])
    assert p.coefficient(NormalMonomial(((1, 0),))) == ExactComplex(Fraction(1, 5))


# -- properties ------------------------------------------------------------


@pytest.mark.parametrize("seed", range(15))
def test_associativity(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 2)
    A, B, C = (random_polynomial(rng, n, rng.randint(1, 4), 3) for _ in range(3))
    assert multiply(multiply(A, B), C) == multiply(A, multiply(B, C))


@pytest.mark.parametrize("seed", range(15))
def test_adjoint_antihomomorphism(seed):
    rng = random.Random(100 + seed)
    n = rng.randint(1, 2)
    A, B = (random_polynomial(rng, n, 4) for _ in range(2))
    assert adjoint(multiply(A, B)) == multiply(adjoint(B), adjoint(A))
    assert adjoint(adjoint(A)) == A


def test_degree_additivity_on_monomials():
    rng = random.Random(7)
    for _ in range(50):
        m1 = NormalMonomial(tuple((rng.randint(0, 2), rng.randint(0, 2)) for _ in range(2)))
        m2 = NormalMonomial(tuple((rng.randint(0, 2), rng.randint(0, 2)) for _ in range(2)))
        p = multiply(OperatorPolynomial.monomial(m1), OperatorPolynomial.monomial(m2))
        assert p.degree == m1.total_degree + m2.total_degree


@pytest.mark.parametrize("seed", range(10))
def test_float_fock_equivalence(seed):
    # truncated matrix of the product vs product of truncated matrices on the exact block
    rng = random.Random(500 + seed)
    n = rng.randint(1, 2)
    P, Q = random_polynomial(rng, n, 2), random_polynomial(rng, n, 2)
    PQ = multiply(P, Q)
    d = int(PQ.degree)
    cut = (d + 4,) * n
    lhs = operator_matrix(PQ, cut)
    rhs = operator_matrix(P, cut) @ operator_matrix(Q, cut)
    keep = [i for i in range(lhs.shape[0]) if all(m <= cut[0] - d for m in np.unravel_index(i, [c + 1 for c in cut]))]
    blk = np.ix_(keep, keep)
    assert np.max(np.abs(lhs[blk] - rhs[blk])) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))
