import itertools
import json
import math
import random

import pytest

from bosonbound.algebra import ExactComplex, NormalMonomial, OperatorPolynomial, adjoint, multiply, number
from bosonbound.basis import DegreeClampWarning, basis_size, build_tensors, enumerate_basis
from bosonbound.lindblad import adjoint_action, build_model

from helpers import FIG2, random_spec


def test_sizes():
    assert len(enumerate_basis(1, 1)) == 3
    assert len(enumerate_basis(1, 2)) == 6
    assert len(enumerate_basis(2, 3)) == 35 == math.comb(7, 3)
    for n, D in itertools.product((1, 2, 3), range(5)):
        assert len(enumerate_basis(n, D)) == basis_size(n, D)


def test_explicit_count_two_modes():
    # brute-force enumeration of exponent tuples of total degree <= 3
    count = sum(1 for e in itertools.product(range(4), repeat=4) if sum(e) <= 3)
    assert count == len(enumerate_basis(2, 3))


def test_graded_order_and_inclusion():
    big = enumerate_basis(2, 4)
    assert big[0] == NormalMonomial.one(2)
    assert list(big.degrees) == sorted(big.degrees)
    for D in range(4):
        assert list(big)[: big.count_up_to(D)] == list(enumerate_basis(2, D))
    for i, m in enumerate(big):
        assert big.index(m) == i
        assert big[big.adjoint_index[i]] == m.adjoint()


def test_deterministic():
    assert list(enumerate_basis(2, 3)) == list(enumerate_basis(2, 3))


@pytest.fixture(scope="module")
def loss_d1():
    spec = build_model("pure_loss")
    basis = enumerate_basis(1, 1)
    return basis, build_tensors(spec, basis, number())


def test_a_dagger_a_entry(loss_d1):
    basis, T = loss_d1
    ia = basis.index(NormalMonomial(((0, 1),)))
    k = T.big.index(NormalMonomial(((1, 1),)))
    assert T.A[(ia, ia)] == {k: ExactComplex(1)}


def test_a_a_dagger_entry(loss_d1):
    basis, T = loss_d1
    ia = basis.index(NormalMonomial(((0, 1),)))
    iad = basis.index(NormalMonomial(((1, 0),)))
    # O_i = a^+, O_j = a^+ : O_i^+ O_j = a a^+ = a^+a + 1
    k = T.big.index(NormalMonomial(((1, 1),)))
    assert T.A[(iad, iad)] == {0: ExactComplex(1), k: ExactComplex(1)}
    assert (ia, iad) in T.A


def test_identity_row_of_L_is_zero():
    spec = build_model("perfect_cat", FIG2)
    T = build_tensors(spec, enumerate_basis(1, 3), number())
    assert T.L[0] == {}


def test_clamp_warning():
    spec = build_model("cat")
    with pytest.warns(DegreeClampWarning):
        T = build_tensors(spec, enumerate_basis(1, 1), number())
    assert T.D1 == 0 and len(T.L) == 1


def test_observable_degree_check():
    spec = build_model("pure_loss")
    with pytest.raises(ValueError, match="use D >= 2"):
        build_tensors(spec, enumerate_basis(1, 1), multiply(number(), number()))


@pytest.mark.parametrize("seed", range(4))
def test_reconstruction_invariants(seed):
    rng = random.Random(seed)
    spec = random_spec(rng)
    D = 2
    basis = enumerate_basis(spec.mode_count, D)
    obs = number(0, spec.mode_count)
    T = build_tensors(spec, basis, obs, D1=max(0, 2 * D - spec.generator_degree))
    N = len(basis)
    for i, j in itertools.product(range(N), repeat=2):
        assert T.expand(T.A[(i, j)]) == multiply(adjoint(basis.operator(i)), basis.operator(j))
        # Hermitian symmetry: A_ji^{k+} = conj(A_ij^k)
        swapped = {T.adjoint_index[k]: c.conjugate() for k, c in T.A[(i, j)].items()}
        assert T.A[(j, i)] == dict(sorted(swapped.items()))
    for j in range(N):
        assert T.A[(0, j)] == {j: ExactComplex(1)}
    for i, row in enumerate(T.L):
        assert T.expand(row) == adjoint_action(spec, T.big.operator(i))
        for k in row:
            assert T.big.degrees[k] <= T.big.degrees[i] + spec.generator_degree
            assert k < len(T.big)
    assert T.expand(T.B) == obs


def test_json_dump():
    T = build_tensors(build_model("cat"), enumerate_basis(1, 2), number())
    doc = json.loads(T.dumps())
    assert doc["D2"] == 2 and len(doc["basis"]) == basis_size(1, 4)
    assert all(len(e) == 5 for e in doc["A"])
