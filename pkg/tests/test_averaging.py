import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aop_lab.averaging import ModelAverager, default_t0
from aop_lab.netcore import ParamSet


def scalar(v):
    return ParamSet([np.array([[float(v)]])], [np.array([0.0])])


def value(p):
    return p.weights[0][0, 0]


def test_two_point_mean():
    a = ModelAverager(scalar(0), t0=0)
    a.absorb(1, scalar(1)).absorb(2, scalar(3))
    assert value(a.snapshot()) == 2.0


def test_five_point_mean():
    a = ModelAverager(scalar(0), t0=0)
    for t in range(1, 6):
        a.absorb(t, scalar(t))
    assert abs(value(a.snapshot()) - 3.0) <= 1e-12


def test_mirrors_online_until_t0():
    a = ModelAverager(scalar(-5), t0=3)
    for t in range(1, 4):
        a.absorb(t, scalar(10 * t))
        assert value(a.snapshot()) == 10 * t
        assert not a.active
    a.absorb(4, scalar(7))
    assert value(a.snapshot()) == 7 and a.active
    a.absorb(5, scalar(9))
    assert value(a.snapshot()) == 8


def test_snapshot_before_absorb_and_idempotent():
    init = ParamSet([np.arange(6.0).reshape(2, 3)], [np.ones(2)])
    a = ModelAverager(init, t0=0)
    assert a.snapshot().equal(init)
    a.absorb(1, init.combine(init, 2.0, 0.0))
    s1, s2 = a.snapshot(), a.snapshot()
    assert s1.equal(s2)
    s1.weights[0][:] = 0  # snapshots are copies
    assert a.snapshot().equal(s2)


def test_replay_oracle_random_checkpoints():
    rng = np.random.default_rng(0)
    shapes = [(4, 3), (2, 4)]
    log = [ParamSet([rng.standard_normal(s) for s in shapes], [rng.standard_normal(s[0]) for s in shapes])
           for _ in range(30)]
    a = ModelAverager(log[0], t0=10)
    for t, p in enumerate(log, start=1):
        a.absorb(t, p)
        if t > 10:
            mean = np.mean([q.flat() for q in log[10:t]], axis=0)
            assert np.max(np.abs(a.snapshot().flat() - mean)) <= 1e-12


def test_epochs_must_increase():
    a = ModelAverager(scalar(0), t0=0)
    a.absorb(2, scalar(1))
    with pytest.raises(ValueError, match="must increase"):
        a.absorb(2, scalar(1))


def test_constructor_validation():
    with pytest.raises(ValueError):
        ModelAverager(scalar(0), t0=0, mode="swa")
    with pytest.raises(ValueError):
        ModelAverager(scalar(0), t0=0, mode="fixed_ema")
    with pytest.raises(ValueError):
        ModelAverager(scalar(0), t0=-1)


def test_default_t0():
    assert default_t0(200) == 100
    assert default_t0(101) == 50


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(1, 30), st.integers(0, 5))
def test_constant_sequence_is_fixed_point(c, n, t0):
    a = ModelAverager(scalar(c), t0=t0)
    for t in range(1, n + 1):
        a.absorb(t, scalar(c))
    assert value(a.snapshot()) == pytest.approx(c, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.99), st.integers(1, 25))
def test_fixed_ema_is_convex_combination(tau, n):
    # feed unit vectors e_1..e_n: the average's coordinates are the mixing coefficients
    a = ModelAverager(ParamSet([np.zeros((1, n))], [np.zeros(1)]), t0=0, mode="fixed_ema", tau=tau)
    for t in range(1, n + 1):
        e = np.zeros((1, n))
        e[0, t - 1] = 1.0
        a.absorb(t, ParamSet([e], [np.zeros(1)]))
    coeffs = a.snapshot().weights[0][0]
    # the initial average (all zeros) keeps weight tau**n; with it the coefficients sum to 1
    assert np.all(coeffs >= 0)
    assert abs(coeffs.sum() + tau ** n - 1.0) <= 1e-12
