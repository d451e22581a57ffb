import math
import random

import numpy as np
import pytest

from bosonbound.algebra import annihilation, identity, number
from bosonbound.fock import (
    MemoryCapError,
    KernelError,
    TruncationSetting,
    exact_operator_matrix,
    liouvillian,
    operator_matrix,
    oracle_extremal,
    stationary_state,
)
from bosonbound.lindblad import build_model

from helpers import FIG1, FIG2, cat_oracle, perfect_cat_extremal, random_polynomial, random_spec


def test_ladder_matrix():
    A = operator_matrix(annihilation(), (4,))
    assert np.allclose(A, np.diag(np.sqrt([1, 2, 3, 4]), 1))
    assert np.allclose(operator_matrix(number(), (4,)), np.diag(np.arange(5)))


def test_exact_matrix_is_similar_to_float():
    p = random_polynomial(random.Random(1), 1, 3)
    cut = (6,)
    re, im = exact_operator_matrix(p, cut)
    S = np.diag([math.sqrt(math.factorial(m)) for m in range(7)])
    scaled = np.linalg.inv(S) @ operator_matrix(p, cut) @ S
    exact = np.array([[float(re[i, j]) + 1j * float(im[i, j]) for j in range(7)] for i in range(7)])
    assert np.allclose(scaled, exact)


@pytest.mark.parametrize("seed", range(4))
def test_liouvillian_matches_action(seed):
    rng = random.Random(seed)
    spec = random_spec(rng, 1)
    cut = (5,)
    n = 6
    G = np.random.default_rng(seed).standard_normal((n, n)) + 0j
    rho = G @ G.T
    H = operator_matrix(spec.hamiltonian, cut)
    out = -1j * (H @ rho - rho @ H)
    for j in spec.jumps:
        c = math.sqrt(j.rate) * operator_matrix(j.operator, cut)
        cd = c.conj().T
        out += c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)
    got = (liouvillian(spec, cut) @ rho.reshape(-1)).reshape(n, n)
    assert np.allclose(got, out)
    # trace preservation of the generator
    assert abs(np.trace(got)) < 1e-9 * max(1, np.abs(got).max())


def test_pure_loss_vacuum():
    r = stationary_state(build_model("pure_loss"), TruncationSetting((5,)), {"n": number()})
    assert r.kernel_dim == 1
    assert abs(r.expectations["n"]) < 1e-12
    assert abs(r.rho[0, 0] - 1) < 1e-12


def test_cat_fig1_unique():
    r = cat_oracle()
    assert r.kernel_dim == 1 and r.cutoffs == (40,)
    assert r.residual <= 1e-10
    assert r.min_eigenvalue > -1e-10
    assert abs(np.trace(r.rho) - 1) < 1e-12
    assert 0.69 < r.expectations["n"] < 0.70


def test_cat_escalation_settles():
    spec = build_model("cat", FIG1)
    r = stationary_state(spec, TruncationSetting((40,)), {"n": number()})
    assert len(r.history) >= 2
    (c0, e0), (c1, e1) = r.history[-2:]
    assert c1[0] > c0[0] and abs(e1["n"] - e0["n"]) <= 1e-8


def test_methods_agree():
    spec = build_model("cat", FIG1)
    vals = {}
    for method in ("svd", "lu", "jump"):
        r = stationary_state(spec, TruncationSetting((24,), method=method, escalate=False), {"n": number()})
        vals[method] = r.expectations["n"]
    assert max(vals.values()) - min(vals.values()) < 1e-9


def test_perfect_cat_kernel_dimension():
    r = stationary_state(build_model("perfect_cat", FIG2))
    assert r.kernel_dim == 4 and r.rho is None
    for B in r.kernel:
        assert np.allclose(B, B.conj().T)
    G = np.array([[np.vdot(X, Y).real for Y in r.kernel] for X in r.kernel])
    assert np.allclose(G, np.eye(4), atol=1e-8)
    assert r.residual < 1e-9


def test_perfect_cat_extremal():
    e = perfect_cat_extremal()
    assert e.kernel_dim == 4
    assert abs(e.min - math.tanh(1)) < 1e-4
    assert abs(e.max - 1 / math.tanh(1)) < 1e-4


def test_extremal_identity():
    e = oracle_extremal(build_model("perfect_cat", FIG2), identity(1), TruncationSetting((20,)))
    assert abs(e.min - 1) < 1e-6 and abs(e.max - 1) < 1e-6


def test_extremal_brackets_random_mixtures():
    spec = build_model("perfect_cat", FIG2)
    trunc = TruncationSetting((20,))
    res = stationary_state(spec, trunc)
    e = oracle_extremal(spec, number(), trunc)
    N = operator_matrix(number(), trunc.cutoffs)
    rng = np.random.default_rng(0)
    found = 0
    while found < 20:
        x = rng.standard_normal(res.kernel_dim)
        rho = sum(xi * B for xi, B in zip(x, res.kernel))
        tr = np.trace(rho).real
        if abs(tr) < 1e-3:
            continue
        rho = rho / tr
        if np.linalg.eigvalsh(rho)[0] < -1e-10:
            continue
        v = np.trace(N @ rho).real
        assert e.min - 1e-6 <= v <= e.max + 1e-6
        found += 1


def test_memory_cap():
    with pytest.raises(MemoryCapError):
        stationary_state(build_model("memory_buffer"), TruncationSetting((24, 10), max_dimension=100))


def test_lu_detects_degeneracy():
    with pytest.raises(KernelError):
        stationary_state(build_model("perfect_cat", FIG2), TruncationSetting((20,), method="lu"), {"n": number()})


def test_decoupled_two_mode_vacuum():
    spec = build_model("memory_buffer", {"g2": 0, "eps_d": 0})
    r = stationary_state(spec, TruncationSetting((4, 4)), {"a": number(0, 2), "b": number(1, 2)})
    assert abs(r.expectations["a"]) < 1e-12 and abs(r.expectations["b"]) < 1e-12


def test_invalid_cutoffs():
    with pytest.raises(ValueError):
        TruncationSetting((0,))
    with pytest.raises(ValueError):
        stationary_state(build_model("cat"), TruncationSetting((5, 5)))
