import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polysls.poly import (ALPHA, ONE_MINUS_ALPHA, AlphaFactor, Monomial, Polynomial, PolyDynamics, VarId,
                          kron_power, poly_eval, poly_substitute, truncate_by_age)


def w(age, comp=0):
    return Polynomial.var(age, comp)


# --- kron_power --------------------------------------------------------------------


def test_kron_power_examples():
    assert kron_power([1, 2], 2).tolist() == [1, 2, 2, 4]
    assert kron_power([3], 3).tolist() == [27]
    assert kron_power([1, 0], 2).tolist() == [1, 0, 0, 0]
    assert kron_power([4, 5], 1).tolist() == [4, 5]


def test_kron_power_rejects_zero_order():
    with pytest.raises(ValueError):
        kron_power([1.0], 0)


# magnitudes below ~1e-30 would underflow when the norm squares x^j
representable = st.floats(-3, 3).filter(lambda v: v == 0.0 or abs(v) > 1e-30)


@given(st.lists(representable, min_size=1, max_size=4), st.integers(1, 4))
def test_kron_power_norm_identity(x, j):
    x = np.array(x)
    expected = np.linalg.norm(x) ** j
    assert np.linalg.norm(kron_power(x, j)) == pytest.approx(expected, rel=1e-10)


# --- poly_eval ---------------------------------------------------------------------


def test_poly_eval_scalar_example():
    dyn = PolyDynamics([[[0.5]], [[0.1]]])
    assert poly_eval(dyn, [2.0]) == pytest.approx([1.4], abs=1e-15)


def test_poly_eval_zero_state():
    rng = np.random.default_rng(0)
    dyn = PolyDynamics([rng.normal(size=(3, 3)), rng.normal(size=(3, 9)), rng.normal(size=(3, 27))])
    assert np.all(poly_eval(dyn, np.zeros(3)) == 0.0)


def test_poly_eval_matches_nested_loops():
    rng = np.random.default_rng(1)
    for _ in range(10):
        H1, H2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 4))
        x = rng.normal(size=2)
        brute = np.zeros(2)
        for i in range(2):
            for a in range(2):
                brute[i] += H1[i, a] * x[a]
                for b in range(2):
                    brute[i] += H2[i, 2 * a + b] * x[a] * x[b]
        dyn = PolyDynamics([H1, H2])
        assert np.allclose(poly_eval(dyn, x), brute, rtol=1e-13, atol=1e-14)
        assert np.allclose(dyn.apply(x), brute, rtol=1e-13, atol=1e-14)


def test_poly_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        poly_eval(PolyDynamics([np.eye(2)]), [1.0, 2.0, 3.0])


def test_polydynamics_validation():
    with pytest.raises(ValueError):
        PolyDynamics([np.eye(2), np.zeros((2, 3))])
    with pytest.raises(ValueError):
        PolyDynamics([np.eye(2)], M=0.0)


def test_polydynamics_symbolic_agrees_with_numeric():
    rng = np.random.default_rng(2)
    dyn = PolyDynamics([rng.normal(size=(2, 2)), rng.normal(size=(2, 4)), rng.normal(size=(2, 8))])
    polys = dyn.symbolic([w(0, 0), w(0, 1)])
    for _ in range(5):
        x = rng.normal(size=2)
        vals = [p.evaluate({VarId(0, 0): x[0], VarId(0, 1): x[1]}) for p in polys]
        assert np.allclose(vals, poly_eval(dyn, x), rtol=1e-12)


def test_polydynamics_json_round_trip():
    rng = np.random.default_rng(3)
    dyn = PolyDynamics([rng.normal(size=(2, 2)), rng.normal(size=(2, 4))], x_star=[1.0, -2.0], M=3.5,
                       metadata={"k": 2})
    back = PolyDynamics.from_json(json.loads(json.dumps(dyn.to_json())))
    assert all(np.array_equal(a, b) for a, b in zip(dyn.H, back.H))
    assert back.M == 3.5 and back.x_star.tolist() == [1.0, -2.0]


# --- poly_substitute ---------------------------------------------------------------


def test_substitute_square_example():
    v = VarId(0, 0)
    p = Polynomial.var(0, 0, 0.5) * w(0)  # 0.5 v^2
    q = w(0) + w(1) * w(1)
    got = poly_substitute(p, {v: q})
    expected = 0.5 * w(0) * w(0) + w(0) * w(1) * w(1) + 0.5 * w(1) * w(1) * w(1) * w(1)
    assert got == expected
    coeffs = sorted(m.coeff for m in got.terms)
    assert coeffs == [0.5, 0.5, 1.0]


def test_substitute_identity_and_zero():
    p = 2.0 * w(0) * w(1) + w(1) * w(1) * w(1)
    ident = {VarId(0, 0): w(0), VarId(1, 0): w(1)}
    assert poly_substitute(p, ident) == p
    zero = {VarId(0, 0): Polynomial.zero(), VarId(1, 0): Polynomial.zero()}
    assert poly_substitute(p, zero) == Polynomial.zero()


def test_substitute_missing_assignment():
    with pytest.raises(KeyError):
        poly_substitute(w(0) * w(1), {VarId(0, 0): w(0)})


def test_substitute_carries_alpha_factors():
    gated = w(0).with_factor(AlphaFactor(3, ONE_MINUS_ALPHA, 1))
    p = w(0) * w(0)
    got = poly_substitute(p, {VarId(0, 0): gated})
    (mono,) = got.terms
    assert mono.alpha_factors == (AlphaFactor(3, ONE_MINUS_ALPHA, 1),) * 2
    assert mono.evaluate({VarId(0, 0): 2.0}, {3: 0.25}) == pytest.approx(4.0 * 0.75**2)


@st.composite
def small_poly(draw, n_vars=2, max_terms=4, max_pow=2):
    monos = []
    for _ in range(draw(st.integers(1, max_terms))):
        exps = []
        for v in range(n_vars):
            p = draw(st.integers(0, max_pow))
            if p:
                exps.append((v, 0, p))
        coeff = draw(st.floats(-2, 2).filter(lambda c: abs(c) > 1e-3))
        monos.append(Monomial(coeff, tuple(exps)))
    return Polynomial.from_monomials(monos)


@settings(max_examples=60, deadline=None)
@given(small_poly(), small_poly(), small_poly(),
       st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2))
def test_substitution_homomorphism(p, q0, q1, vals):
    assignment = {VarId(0, 0): q0, VarId(1, 0): q1}
    sub = poly_substitute(p, {v: assignment[v] for v in p.variables()} if p.variables() else {})
    point = {VarId(0, 0): vals[0], VarId(1, 0): vals[1]}
    inner = {VarId(0, 0): q0.evaluate(point), VarId(1, 0): q1.evaluate(point)}
    direct = p.evaluate(inner)
    assert sub.evaluate(point) == pytest.approx(direct, rel=1e-10, abs=1e-10)


# --- canonical form and serialization ----------------------------------------------


@settings(max_examples=60, deadline=None)
@given(small_poly(), small_poly())
def test_canonicalization_idempotent(p, q):
    r = p * q + p
    once = Polynomial.loads(r.dumps())
    twice = Polynomial.loads(once.dumps())
    assert once.to_json() == twice.to_json() == r.to_json()


def test_json_schema_and_bit_exact_round_trip():
    c = 0.1 + 0.2  # not exactly representable in short decimal
    p = Polynomial.from_monomials([Monomial(c, ((0, 1, 2), (2, 0, 1)), (AlphaFactor(0, ALPHA, 0),))])
    data = json.loads(p.dumps())
    assert data == [{"coeff": c, "exponents": [[0, 1, 2], [2, 0, 1]],
                     "alpha_factors": [{"id": 0, "kind": "alpha", "lag": 0}]}]
    assert Polynomial.loads(p.dumps()).terms[0].coeff == c


def test_unknown_factor_kind_rejected():
    with pytest.raises(ValueError):
        Polynomial.from_json([{"coeff": 1.0, "exponents": [[0, 0, 1]],
                               "alpha_factors": [{"id": 0, "kind": "beta"}]}])


def test_merge_removes_cancelled_terms():
    assert (w(0) * w(1) - w(1) * w(0)) == Polynomial.zero()
    tiny = Polynomial.from_monomials([Monomial(1.0, ((0, 0, 1),)), Monomial(-1.0 + 1e-15, ((0, 0, 1),))])
    assert len(tiny) == 0


def test_canonical_order_graded():
    p = w(1) * w(1) * w(1) + w(2) + w(0) * w(0)
    assert [m.degree for m in p.terms] == [1, 2, 3]


def test_shift_ages_variables_and_lags():
    p = w(0).with_factor(AlphaFactor(1, ALPHA, 0)) * w(1)
    (m,) = p.shift(2).terms
    assert {a for a, _, _ in m.exponents} == {2, 3}
    assert m.alpha_factors[0].lag == 2


# --- truncate_by_age ---------------------------------------------------------------


def test_truncate_example():
    p = w(0) * w(0) + w(0) * w(2)
    kept, dropped = truncate_by_age(p, 1)
    assert kept == w(0) * w(0)
    assert dropped == w(0) * w(2)


def test_truncate_edge_cases():
    p = w(0) + w(3) * w(1)
    kept, dropped = truncate_by_age(p, 5)
    assert kept == p and len(dropped) == 0
    kept, dropped = truncate_by_age(Polynomial.zero(), 0)
    assert len(kept) == 0 and len(dropped) == 0
    with pytest.raises(ValueError):
        truncate_by_age(p, -1)


@settings(max_examples=60, deadline=None)
@given(small_poly(n_vars=3), st.integers(0, 3))
def test_truncate_partition(p, age):
    kept, dropped = truncate_by_age(p, age)
    assert not set(kept.items_keys()) & set(dropped.items_keys())
    assert kept + dropped == p
    assert all(m.max_age <= age for m in kept.terms)
    assert all(m.max_age > age for m in dropped.terms)


def test_multiplication_against_numeric_product():
    rng = np.random.default_rng(4)
    p = 0.3 * w(0) + 1.2 * w(1, 1) * w(0)
    q = -0.7 * w(2) * w(2) + w(0, 1)
    for _ in range(5):
        vals = rng.normal(size=(3, 2))
        assert (p * q).evaluate(vals) == pytest.approx(p.evaluate(vals) * q.evaluate(vals), rel=1e-12)


def test_degree_capped_product_drops_high_terms():
    p = w(0) + w(0) * w(0)
    capped = p.mul(p, max_degree=3)
    assert capped.degree == 3
    assert capped == w(0) * w(0) + 2.0 * w(0) * w(0) * w(0)


def test_kron_layout_matches_itertools():
    x = np.array([2.0, 3.0, 5.0])
    k2 = kron_power(x, 3)
    expect = [a * b * c for a, b, c in itertools.product(x, repeat=3)]
    assert np.allclose(k2, expect)
