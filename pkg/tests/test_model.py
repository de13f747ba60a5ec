import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gen
from contagionlab import model as mdl
from contagionlab.model import make_model
from contagionlab.numerics import ContractError


def rng_models(gamma_one=False, xi=False):
    return st.integers(0, 2**32 - 1).map(
        lambda s: gen.random_model(np.random.default_rng(s), gamma_one=gamma_one,
                                   xi=0.2 if xi else None)
    )


# ---------------------------------------------------------------------------
# construction and defaults


def test_minimal_defaults():
    m = make_model([[0.3]], [0.5])
    assert m.n == 1
    assert m.opinion.w_x.tolist() == [1.0]
    assert m.opinion.gamma.tolist() == [1.0]
    assert m.opinion.w_o.tolist() == [[0.0]]
    assert not m.bounded


def test_default_opinion_graph_follows_adoption_support():
    m = make_model([[0.2, 0.1, 0.0], [0.0, 0.2, 0.3], [0.4, 0.0, 0.2]], [0.1, 0.1, 0.1])
    assert m.opinion.w_o.tolist() == [[0, 1, 0], [0, 0, 1], [1, 0, 0]]


def test_arrays_are_frozen():
    m = make_model([[0.3]], [0.5])
    with pytest.raises(ValueError):
        m.adoption.beta[0, 0] = 1.0


@pytest.mark.parametrize("kwargs", [
    dict(beta=[[0.3, 0.1]], delta=[0.5]),
    dict(beta=[[0.3]], delta=[0.5], w_o=[[1.0]]),
    dict(beta=[[0.3]], delta=[0.5], w_x=[1.0, 2.0]),
    dict(beta=[[0.3]], delta=[np.inf]),
    dict(beta=[[0.3]], delta=[0.5], xi=0.0),
])
def test_shape_and_value_errors(kwargs):
    with pytest.raises(mdl.ModelError):
        make_model(**kwargs)


def test_validation_report():
    m = make_model([[0.0, 0.1], [0.1, 0.2]], [0.5, -0.1], w_x=[0.0, 0.0], gamma=[1.5, 1.0],
                   w_o=[[0, 1], [0, 0]])
    rep = mdl.validate(m)
    assert not rep.a1_self_adoption and not rep.a2_coupling and not rep.a3_gamma
    assert not rep.a4_strongly_connected
    text = " ".join(rep.violations)
    for needle in ("Assumption 1", "Assumption 2", "Assumption 3", "Assumption 4", "delta[1]"):
        assert needle in text
    with pytest.raises(mdl.AssumptionError):
        mdl.require_valid(m)


def test_advisory_and_uncoupled():
    m = make_model([[0.2, 0.1], [0.1, 0.2]], [0.5, 0.5], w_o=np.zeros((2, 2)), w_x=[0.0, 0.0])
    with pytest.raises(mdl.AssumptionError, match="Assumption 2"):
        mdl.require_valid(m)
    rep = mdl.require_valid(m, allow_uncoupled=True)
    assert not rep.a4_strongly_connected


def test_gamma_range_is_half_open():
    assert mdl.validate(make_model([[0.3]], [0.5], gamma=[1.0])).a3_gamma
    assert not mdl.validate(make_model([[0.3]], [0.5], gamma=[0.0])).a3_gamma
    assert not mdl.validate(make_model([[0.3]], [0.5], gamma=[-0.5])).a3_gamma


# ---------------------------------------------------------------------------
# vector field


def test_hit_and_flop_are_equilibria_when_gamma_is_one():
    m = gen.random_model(np.random.default_rng(4), gamma_one=True)
    for v in (0.0, 1.0):
        dx, do = mdl.vector_field(m, np.full(m.n, v), np.full(m.n, v))
        assert np.all(dx == 0) and np.all(do == 0)


def test_domain_guard():
    m = make_model([[0.3]], [0.5])
    with pytest.raises(mdl.DomainError):
        mdl.vector_field(m, [1.1], [0.5])
    # within the rounding tolerance is accepted
    mdl.vector_field(m, [1.0 + 1e-7], [-1e-7])


@settings(max_examples=100, deadline=None)
@given(rng_models(), st.integers(0, 2**32 - 1))
def test_field_points_inward_on_faces(m, seed):
    # the hypercube is forward invariant: on each face the normal component points inward
    rng = np.random.default_rng(seed)
    x, o = rng.random(m.n), rng.random(m.n)
    k = int(rng.integers(m.n))
    for face in (0.0, 1.0):
        xs, os_ = x.copy(), o.copy()
        xs[k] = face
        dx, _ = mdl.vector_field(m, xs, os_)
        assert dx[k] >= 0 if face == 0 else dx[k] <= 0
        xs, os_ = x.copy(), o.copy()
        os_[k] = face
        _, do = mdl.vector_field(m, xs, os_)
        assert do[k] >= -1e-15 if face == 0 else do[k] <= 1e-15


def test_bounded_confidence_cuts_links():
    m = make_model([[0.2, 0.1], [0.1, 0.2]], [0.5, 0.5], xi=0.1)
    assert mdl.effective_opinion_weights(m, [0.0, 0.5]).tolist() == [[0, 0], [0, 0]]
    assert mdl.effective_opinion_weights(m, [0.0, 0.05]).tolist() == [[0, 1], [1, 0]]
    # the inequality is strict
    assert mdl.effective_opinion_weights(m, [0.0, 0.1]).tolist() == [[0, 0], [0, 0]]
    with pytest.raises(ContractError):
        mdl.effective_opinion_weights(m.with_xi(None), [0.0, 0.5])


def central_difference(m, z, h=1e-6, weights=None):
    n = m.n
    cols = []
    for k in range(2 * n):
        e = np.zeros(2 * n)
        e[k] = h
        fp = np.concatenate(mdl.field_unchecked(m, (z + e)[:n], (z + e)[n:], weights))
        fm = np.concatenate(mdl.field_unchecked(m, (z - e)[:n], (z - e)[n:], weights))
        cols.append((fp - fm) / (2 * h))
    return np.array(cols).T


@settings(max_examples=100, deadline=None)
@given(rng_models(), st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(m, seed):
    z = np.random.default_rng(seed).random(2 * m.n)
    j = mdl.jacobian(m, z[:m.n], z[m.n:])
    assert np.max(np.abs(j - central_difference(m, z))) < 1e-6


def test_jacobian_bounded_uses_frozen_topology():
    m = gen.random_model(np.random.default_rng(9), xi=0.3)
    z = np.random.default_rng(10).random(2 * m.n)
    w = mdl.effective_opinion_weights(m, z[m.n:])
    j = mdl.jacobian(m, z[:m.n], z[m.n:])
    assert np.max(np.abs(j - central_difference(m, z, weights=w))) < 1e-6


def test_jacobian_at_flop_structure():
    m = gen.random_model(np.random.default_rng(5))
    n = m.n
    j = mdl.jacobian(m, np.zeros(n), np.zeros(n))
    assert np.allclose(j[:n, :n], -np.diag(m.adoption.delta))
    assert np.allclose(j[:n, n:], np.diag(m.adoption.beta_self))
    assert np.allclose(j[n:, :n], np.diag(m.opinion.w_x * m.opinion.gamma))
    assert np.allclose(j[n:, n:], -(m.opinion.laplacian + np.diag(m.opinion.w_x)))


# ---------------------------------------------------------------------------
# serialization


@settings(max_examples=100, deadline=None)
@given(rng_models(xi=True))
def test_canonical_round_trip_is_byte_identical(m):
    text = mdl.canonical_json(m.to_dict())
    back = mdl.model_from_dict(json.loads(text))
    assert back == m
    assert mdl.canonical_json(back.to_dict()) == text


def test_canonical_format():
    assert mdl.canonical_json({"b": [1.0, 0.1], "a": 3}) == '{"a": 3, "b": [1.0, 0.10000000000000001]}'
    with pytest.raises(ValueError):
        mdl.canonical_json({"a": float("nan")})


def test_writer_emits_defaults():
    d = make_model([[0.3]], [0.5]).to_dict()
    assert d == {"n": 1, "beta": [[0.3]], "delta": [0.5], "w_o": [[0.0]], "w_x": [1.0], "gamma": [1.0]}


@pytest.mark.parametrize("doc, match", [
    ({"n": 1, "beta": [[0.3]]}, "delta"),
    ({"n": 2, "beta": [[0.3]], "delta": [0.5]}, "'n'"),
    ({"n": 1.0, "beta": [[0.3]], "delta": [0.5]}, "'n'"),
    ({"n": 1, "beta": [[0.3]], "delta": [0.5], "colour": 1}, "unknown"),
    ({"n": 1, "beta": "x", "delta": [0.5]}, "."),
])
def test_model_from_dict_errors(doc, match):
    with pytest.raises(mdl.ModelError, match=match):
        mdl.model_from_dict(doc)
