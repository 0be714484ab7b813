import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from w2loc.altmetrics import (
    NonPositiveShiftError,
    default_shift,
    krn,
    qwn_c,
    rld,
)
from w2loc.signal import DegenerateSignalError, Trace, trapezoid_weights
from w2loc.w2core import misfit_distance

from conftest import random_smooth_trace, ricker_example


def krn_linprog(d: Trace, s: Trace) -> float:
    """Same discretized dual solved by a generic LP solver."""
    n, dt = d.n, d.dt
    a = (d.samples - s.samples) * trapezoid_weights(n) * dt
    rows = np.zeros((2 * (n - 1), n))
    for i in range(n - 1):
        rows[2 * i, i], rows[2 * i, i + 1] = -1.0, 1.0
        rows[2 * i + 1, i], rows[2 * i + 1, i + 1] = 1.0, -1.0
    res = linprog(-a, A_ub=rows, b_ub=np.full(2 * (n - 1), dt), bounds=[(-1, 1)] * n,
                  method="highs", options=dict(primal_feasibility_tolerance=1e-10,
                                               dual_feasibility_tolerance=1e-10))
    assert res.status == 0
    return -res.fun


# ---------------------------------------------------------------- RLD

def test_rld_examples():
    d = ricker_example()
    assert rld(d, d) == 0.0
    assert rld(d, 0 * d) == pytest.approx(1.0, rel=1e-14)
    assert rld(d, 2 * d) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(DegenerateSignalError):
        rld(0 * d, d)


# ---------------------------------------------------------------- QWN_c

def test_qwn_c_examples():
    d, s = ricker_example(), ricker_example(delay=3.0)
    assert qwn_c(d, d, 2.0) == pytest.approx(0.0, abs=1e-12)
    vals = [qwn_c(d, s, c) for c in (10.0, 100.0, 1000.0)]
    assert vals[0] > vals[1] > vals[2] > 0
    # O(1/c^2): a tenfold shift cuts the value by roughly a hundred
    assert 50 < vals[1] / vals[2] < 200
    c = default_shift([d, s])
    assert c == pytest.approx(2.0 * max(np.abs(d.samples).max(), np.abs(s.samples).max()))
    v = qwn_c(d, s, c)
    assert 0 < v < misfit_distance(d, s)


def test_qwn_c_rejects_nonpositive_shift():
    d = ricker_example()
    with pytest.raises(NonPositiveShiftError) as exc:
        qwn_c(d, d, 0.1)
    assert exc.value.index >= 0


def test_qwn_c_scaling_preserves_argmin():
    d = ricker_example()
    shifts = np.linspace(-0.5, 0.5, 21)
    fam = [ricker_example(delay=2.5 + a) for a in shifts]
    c = 2.0
    base = [qwn_c(d, s, c) for s in fam]
    scaled = [qwn_c(3.0 * d, 3.0 * s, 3.0 * c) for s in fam]
    assert np.argmin(base) == np.argmin(scaled) == 10


# ---------------------------------------------------------------- KRN

def test_krn_examples():
    d = ricker_example()
    val, sol = krn(d, d)
    assert val == pytest.approx(0.0, abs=1e-14)
    assert sol.check(d.dt)
    m = 0.3
    z = Trace(0.01, np.zeros(101))
    val, sol = krn(z + m * Trace(0.01, np.ones(101)), z)
    assert val == pytest.approx(m * 1.0, rel=1e-12)
    np.testing.assert_allclose(sol.phi_values, 1.0)


def test_krn_close_supports_equals_cumulative_integral():
    # equal mass, supports less than 2 apart, small cumulative difference
    dt, n = 0.01, 301
    t = np.arange(n) * dt
    d = Trace(dt, 0.2 * np.exp(-((t - 1.4) / 0.1) ** 2))
    s = Trace(dt, 0.2 * np.exp(-((t - 1.6) / 0.1) ** 2))
    val, sol = krn(d, s)
    assert val == pytest.approx(krn_linprog(d, s), abs=1e-9)
    a = (d.samples - s.samples) * trapezoid_weights(n) * dt
    H = np.cumsum(a)
    assert val == pytest.approx(np.sum(np.abs(H[:-1])) * dt, rel=2e-2)


def test_krn_matches_linprog_on_random_instances():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(8, 65))
        dt = float(rng.uniform(0.05, 0.5))
        d = Trace(dt, rng.normal(size=n))
        s = Trace(dt, rng.normal(size=n))
        val, sol = krn(d, s)
        assert val == pytest.approx(krn_linprog(d, s), abs=1e-9)
        assert sol.check(dt)
        assert sol.objective == pytest.approx(val, abs=1e-12)


@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_krn_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = random_smooth_trace(rng, dt=0.02, n=151)
    s = random_smooth_trace(rng, dt=0.02, n=151)
    a, _ = krn(d, s)
    b, _ = krn(s, d)
    assert a >= -1e-12
    assert a == pytest.approx(b, rel=1e-10, abs=1e-13)
    l1 = np.sum(np.abs(d.samples - s.samples) * trapezoid_weights(151)) * 0.02
    assert a <= l1 + 1e-12


def test_krn_dual_certificate_constraints():
    rng = np.random.default_rng(2)
    d, s = random_smooth_trace(rng), random_smooth_trace(rng)
    val, sol = krn(d, s)
    phi = sol.phi_values
    assert np.all(np.abs(phi) <= 1 + 1e-9)
    assert np.all(np.abs(np.diff(phi)) <= d.dt + 1e-9)
    a = (d.samples - s.samples) * trapezoid_weights(d.n) * d.dt
    assert float(phi @ a) == pytest.approx(val, rel=1e-10)
