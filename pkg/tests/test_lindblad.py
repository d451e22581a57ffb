import random
from fractions import Fraction

import numpy as np
import pytest

from bosonbound.algebra import OperatorPolynomial, adjoint, annihilation, creation, identity, multiply, number
from bosonbound.fock import operator_matrix
from bosonbound.lindblad import (
    Jump,
    LindbladSpec,
    adjoint_action,
    build_cat_model,
    build_memory_buffer_model,
    build_model,
    memory_buffer_kappa2,
    spec_from_json,
    spec_to_json,
)

from helpers import FIG1, FIG2, FIG3, random_polynomial, random_spec

a, ad = annihilation(), creation()
loss = LindbladSpec(1, OperatorPolynomial.zero(1), (Jump(a),))


def test_trace_preservation_examples():
    for spec in (loss, build_model("cat"), build_model("memory_buffer")):
        assert adjoint_action(spec, identity(spec.mode_count)).is_zero()


def test_loss_on_number():
    assert adjoint_action(loss, number()) == -number()


def test_loss_on_a():
    assert adjoint_action(loss, a) == a.scale(Fraction(-1, 2))


def _heisenberg_matrix(spec, o, cut):
    # tr[O L(rho)] duality: L^+(O) = i[H,O] + sum c^+ O c - 1/2{c^+c, O}
    H = operator_matrix(spec.hamiltonian, cut)
    O = operator_matrix(o, cut)
    out = 1j * (H @ O - O @ H)
    for j in spec.jumps:
        c = np.sqrt(float(j.rate)) * operator_matrix(j.operator, cut)
        cd = c.conj().T
        out += cd @ O @ c - 0.5 * (cd @ c @ O + O @ cd @ c)
    return out


@pytest.mark.parametrize("seed", range(6))
def test_adjoint_action_matches_truncated_superoperator(seed):
    rng = random.Random(seed)
    spec = random_spec(rng, 1)
    o = random_polynomial(rng, 1, 2)
    got = adjoint_action(spec, o)
    # truncation spoils the last few rows/columns; compare well inside
    cut = (int(got.degree) + 2 * spec.generator_degree + 6,)
    ref = _heisenberg_matrix(spec, o, cut)
    mine = operator_matrix(got, cut)
    k = cut[0] + 1 - 2 * spec.generator_degree - int(got.degree) - 2
    assert np.allclose(mine[:k, :k], ref[:k, :k], atol=1e-9 * max(1, np.abs(ref[:k, :k]).max()))


def test_cat_model_fig1():
    spec = build_cat_model(FIG1)
    assert spec.mode_count == 1 and spec.generator_degree == 4
    assert spec.hamiltonian == number()
    rates = [j.rate for j in spec.jumps]
    assert rates == [Fraction(1, 5), Fraction(2)]
    assert spec.jumps[1].operator == a * a - identity(1)


def test_perfect_cat_single_jump():
    spec = build_model("perfect_cat", FIG2)
    assert len(spec.jumps) == 1
    assert spec.jumps[0].rate == 2 and spec.jumps[0].operator == a * a - identity(1)
    assert spec.hamiltonian.is_zero()


def test_pure_loss_from_cat_parameters():
    spec = build_cat_model({"omega": 0, "kappa1": 1, "kappa2": 0, "alpha": 0})
    assert len(spec.jumps) == 1 and spec.jumps[0].operator == a


def test_memory_buffer():
    spec = build_memory_buffer_model({**FIG3, "eps_d": 1})
    assert spec.mode_count == 2 and spec.generator_degree == 3
    k2 = memory_buffer_kappa2(FIG3)
    assert abs(float(k2) - 0.012887) < 1e-6
    assert abs(float(Fraction("1.94") / k2) - 150.5) < 0.1


def test_negative_rates_rejected():
    with pytest.raises(ValueError):
        build_cat_model({"omega": 1, "kappa1": -1, "kappa2": 2, "alpha": 1})
    with pytest.raises(ValueError):
        build_memory_buffer_model({**FIG3, "eps_d": 1, "kappa_b": -1})
    with pytest.raises(ValueError):
        Jump(a, -1)


def test_non_hermitian_hamiltonian_rejected():
    with pytest.raises(ValueError):
        LindbladSpec(1, a, ())


def test_unknown_model_and_parameter():
    with pytest.raises(ValueError):
        build_model("nope")
    with pytest.raises(ValueError):
        build_model("cat", {"beta": 1})


@pytest.mark.parametrize("seed", range(10))
def test_hermiticity_covariance_and_linearity(seed):
    rng = random.Random(1000 + seed)
    spec = random_spec(rng)
    n = spec.mode_count
    o1, o2 = random_polynomial(rng, n, 2), random_polynomial(rng, n, 2)
    assert adjoint_action(spec, adjoint(o1)) == adjoint(adjoint_action(spec, o1))
    x, y = Fraction(rng.randint(-3, 3), 2), Fraction(rng.randint(-3, 3), 5)
    lhs = adjoint_action(spec, o1.scale(x) + o2.scale(y))
    assert lhs == adjoint_action(spec, o1).scale(x) + adjoint_action(spec, o2).scale(y)
    assert adjoint_action(spec, o1).degree <= o1.degree + spec.generator_degree


def test_json_round_trip():
    for name in ("cat", "perfect_cat", "memory_buffer", "pure_loss"):
        spec = build_model(name)
        back = spec_from_json(spec_to_json(spec))
        assert back == spec


def test_json_bare_jump_literal():
    doc = {"modes": 1, "hamiltonian": [], "jumps": [a.to_literal()]}
    spec = spec_from_json(doc)
    assert spec.jumps[0].rate == 1 and spec.jumps[0].operator == a
