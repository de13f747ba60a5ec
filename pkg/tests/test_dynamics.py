import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gen
from contagionlab import dynamics as dyn
from contagionlab import experiments as ex
from contagionlab import model as mdl
from contagionlab.dynamics import IntegratorConfig
from contagionlab.model import State, make_model

seeds = st.integers(0, 2**32 - 1)


def rk4_reference(m, z0, t_end, h):
    """Plain numpy RK4 on the checked vector field (no clamping)."""
    n = m.n

    def f(z):
        return np.concatenate(mdl.field_unchecked(m, z[:n], z[n:]))

    z = z0.copy()
    for _ in range(int(round(t_end / h))):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


@settings(max_examples=100, deadline=None)
@given(seeds, st.booleans())
def test_kernel_rhs_matches_vector_field(seed, bounded):
    rng = np.random.default_rng(seed)
    m = gen.random_model(rng, xi=0.25 if bounded else None)
    z = rng.random(2 * m.n)
    dx, do = mdl.vector_field(m, z[:m.n], z[m.n:])
    assert np.allclose(dyn.rhs(m, z), np.concatenate([dx, do]), rtol=0, atol=1e-14)


def test_matches_numpy_rk4_reference():
    rng = np.random.default_rng(2)
    m = gen.random_model(rng)
    z0 = rng.random(2 * m.n)
    cfg = IntegratorConfig(step=0.05, t_max=10.0, record_stride=7)
    tr = dyn.simulate(m, State.from_z(z0), cfg)
    assert tr.times[-1] == pytest.approx(10.0)
    assert np.allclose(tr.states[-1], rk4_reference(m, z0, 10.0, 0.05), atol=1e-13)


def test_fourth_order_convergence():
    rng = np.random.default_rng(7)
    m = gen.random_model(rng, n=4)
    z0 = rng.random(8)
    exact = rk4_reference(m, z0, 8.0, 0.01 / 16)
    errs = []
    for h in (0.2, 0.1, 0.05):
        tr = dyn.simulate(m, State.from_z(z0), IntegratorConfig(step=h, t_max=8.0, record_stride=1))
        errs.append(np.max(np.abs(tr.states[-1] - exact)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(10 < r < 24 for r in ratios), ratios


@pytest.mark.parametrize("name", ["star5", "complete20"])
def test_step_halving(name):
    spec = ex.builtin(name)
    a = dyn.simulate(spec.model, spec.initial.state, spec.integrator)
    b = dyn.simulate(spec.model, spec.initial.state,
                     IntegratorConfig(step=spec.integrator.step / 2))
    assert a.converged and b.converged
    assert np.max(np.abs(a.states[-1] - b.states[-1])) < 1e-6


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_monotone_in_initial_state(seed):
    # the Jacobian is Metzler on the cube, so ordered initial states stay ordered
    rng = np.random.default_rng(seed)
    m = gen.random_model(rng)
    lo = rng.random(2 * m.n) * 0.9
    hi = np.minimum(1.0, lo + rng.random(2 * m.n) * 0.1)
    cfg = IntegratorConfig(t_max=30.0, record_stride=10)
    a = dyn.simulate(m, State.from_z(lo), cfg)
    b = dyn.simulate(m, State.from_z(hi), cfg)
    assert np.all(a.states <= b.states + 1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.booleans())
def test_cube_is_preserved_before_clamping(seed, bounded):
    rng = np.random.default_rng(seed)
    m = gen.random_model(rng, xi=0.2 if bounded else None)
    tr = dyn.simulate(m, State.from_z(rng.random(2 * m.n)), IntegratorConfig(t_max=200.0))
    assert -1e-9 <= tr.pre_clamp_min and tr.pre_clamp_max <= 1 + 1e-9


def test_clamping_excursions_are_logged(caplog):
    m = make_model([[2.0]], [0.01], w_x=[5.0])
    with caplog.at_level(logging.WARNING, logger="contagionlab.dynamics"):
        tr = dyn.simulate(m, State([0.9], [0.9]), IntegratorConfig(step=2.0, t_max=20.0, record_stride=1))
    assert tr.pre_clamp_max > 1 + 1e-9
    assert np.all((tr.states >= 0) & (tr.states <= 1))
    assert "clamped" in caplog.text


def test_initial_state_guard():
    m = make_model([[0.3]], [0.5])
    with pytest.raises(mdl.DomainError):
        dyn.simulate(m, State([1.5], [0.2]))


def test_assumptions_checked_before_integration():
    m = make_model([[0.0, 0.1], [0.1, 0.2]], [0.5, 0.5])
    with pytest.raises(mdl.AssumptionError):
        dyn.simulate(m, State.constant(2, 0.5))


def test_timeout_when_not_settled():
    spec = ex.builtin("star5")
    tr = dyn.simulate(spec.model, spec.initial.state, IntegratorConfig(t_max=5.0))
    assert not tr.converged
    assert tr.terminal.label == dyn.TIMEOUT
    assert tr.times[-1] == pytest.approx(5.0)
    assert tr.steps == 500


def test_convergence_needs_a_streak():
    # starting exactly at the flop, the residual is zero from the first step
    m = gen.random_model(np.random.default_rng(0), gamma_one=True)
    tr = dyn.simulate(m, State.constant(m.n, 0.0), IntegratorConfig(record_stride=1))
    assert tr.converged and tr.steps == dyn.CONVERGED_STREAK
    assert tr.terminal.label == dyn.FLOP


def test_records_every_stride():
    m = gen.random_model(np.random.default_rng(1))
    tr = dyn.simulate(m, State.constant(m.n, 0.5), IntegratorConfig(t_max=3.0, record_stride=50))
    assert np.allclose(tr.times, [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])


# ---------------------------------------------------------------------------
# terminal labels


@pytest.mark.parametrize("z, xi, label", [
    ([1, 1, 0.995, 1], None, dyn.HIT),
    ([0, 0.001, 0, 0], None, dyn.FLOP),
    ([0.5, 0.5, 0.4, 0.4], None, dyn.INTERIOR),
    ([1, 0, 1, 0], None, dyn.INTERIOR),
    ([1, 0, 1, 0], 0.01, dyn.SPLIT),
    ([0.5, 0.5, 0.5, 0.505], 0.01, dyn.INTERIOR),
])
def test_classify_terminal(z, xi, label):
    assert dyn.classify_terminal(dyn.constant_trajectory(z, xi)).label == label


def test_opinion_clusters():
    assert dyn.opinion_clusters([0.0, 0.005, 0.5, 0.505, 1.0], 0.01) == 3
    assert dyn.opinion_clusters([0.3], 0.01) == 1


def test_switch_trace_records_topology_changes():
    tr = dyn.simulate(*_bc_split_case())
    counts = [c for _, c in tr.switch_trace]
    assert tr.switch_trace[0][0] == 0.0
    assert all(a != b for a, b in zip(counts, counts[1:]))
    assert len(counts) >= 2
    assert tr.terminal.label == dyn.SPLIT


def _bc_split_case():
    m = ex.two_community_tipping(xi=0.01)
    return m, State(np.array([0.9, 0.8, 0.1, 0.2]), np.array([0.9, 0.8, 0.1, 0.2]))


def test_static_run_has_no_switch_trace():
    m = ex.two_community_tipping()
    tr = dyn.simulate(m, State.constant(4, 0.7))
    assert tr.switch_trace is None


# ---------------------------------------------------------------------------
# config and CSV


def test_integrator_config_checks():
    with pytest.raises(ValueError):
        IntegratorConfig(step=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(step=2.0, t_max=1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(record_stride=0)
    with pytest.raises(ValueError, match="unknown"):
        IntegratorConfig.from_dict({"stepsize": 0.1})
    cfg = IntegratorConfig(step=0.02)
    assert IntegratorConfig.from_dict(cfg.to_dict()) == cfg


def test_trajectory_csv_round_trip():
    m = gen.random_model(np.random.default_rng(3))
    tr = dyn.simulate(m, State.constant(m.n, 0.3), IntegratorConfig(t_max=2.0, record_stride=40))
    text = dyn.trajectory_csv(tr)
    lines = text.splitlines()
    n = m.n
    assert lines[0] == ",".join(["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"o{i}" for i in range(1, n + 1)])
    assert lines[-1].startswith("# terminal=Timeout residual=")
    assert len(lines) == len(tr) + 2
    back = dyn.read_trajectory_csv(text)
    assert back.terminal.label == tr.terminal.label
    assert np.allclose(back.states, tr.states, rtol=1e-11, atol=1e-300)
    assert np.allclose(back.times, tr.times)


@pytest.mark.parametrize("v, text", [
    (0.0, "0"),
    (0.5, "0.5"),
    (1.0 / 3.0, "0.333333333333"),
    (2.0, "2"),
    (1.23456789012345e-5, "0.0000123456789012"),
    (0.999999999999999, "1"),
])
def test_twelve_significant_digits(v, text):
    assert dyn._num(v) == text
    assert float(text) == float(f"{v:.12g}")
    assert "e" not in text


def test_nan_residual_text():
    tr = dyn.constant_trajectory([0.2, 0.3])
    tr.converged = False
    tr.residual = math.inf
    assert "# terminal=Timeout residual=inf" in dyn.trajectory_csv(tr)
