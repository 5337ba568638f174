import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal
from scipy.linalg import expm

from pathdob.lti import (
    DelayLine,
    DomainMismatchError,
    FilterState,
    ImproperError,
    Stability,
    StateSpace,
    TransferFunction,
    VariableDelayLine,
    delay_line,
    feedback,
    filter_step,
    hp,
    hp_lfilter,
    impulse_by_division,
    poly_from_roots,
    poly_mul,
    poly_roots,
    series,
    tf_close,
    tf_is_stable,
    tf_to_ss,
    trim,
    zoh_discretize,
)

TS = 0.01
GN_S = TransferFunction([4713, 1.598e5, 7.51e5], [1.242, 933.8, 10610, 0, 0])
Q_DOB_S = TransferFunction([1.0], [0.25, 1.0, 1.0])
Q_CDOB_S = TransferFunction([1.0], [0.0004, 0.04, 1.0])


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.abs(b))


# -- polynomials ------------------------------------------------------------


def test_trim_drops_negligible_leading_coefficients():
    np.testing.assert_array_equal(trim([1e-20, 0.0, 1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_array_equal(trim([0.0, 0.0]), [0.0])


def test_roots_near_double_root():
    r = poly_roots([1.0, -1.9604, 0.96079])
    np.testing.assert_allclose(r.real, [0.9802, 0.9802], atol=2e-3)
    np.testing.assert_allclose(np.prod(r).real, 0.96079, rtol=1e-12)


def test_roots_monomial():
    np.testing.assert_array_equal(poly_roots([1.0, 0.0, 0.0]), [0.0, 0.0])


def test_roots_quadratic_factor_of_nominal_denominator():
    r = np.sort(poly_roots([1.242, 933.8, 10610]).real)
    np.testing.assert_allclose(r, [-740.3, -11.53], rtol=1e-3)


def test_roots_of_zero_polynomial_rejected():
    with pytest.raises(ValueError, match="undefined roots"):
        poly_roots([0.0, 0.0])


coef = st.floats(-10, 10, allow_nan=False).filter(lambda v: abs(v) > 1e-3)


@given(st.lists(coef, min_size=2, max_size=9))
def test_roots_reexpand_to_coefficients(p):
    p = np.asarray(p)
    back = poly_from_roots(poly_roots(p), lead=p[0]).real
    scale = np.max(np.abs(p))
    assert np.max(np.abs(back - p)) / scale < 1e-8


# -- stability --------------------------------------------------------------


def test_stability_examples():
    assert tf_is_stable(GN_S) is Stability.MARGINAL
    assert tf_is_stable(TransferFunction([1], [1, -0.5], TS)) is Stability.STABLE
    assert tf_is_stable(TransferFunction([1], [1, -2.0], TS)) is Stability.UNSTABLE


def test_stability_rejects_improper():
    with pytest.raises(ImproperError):
        tf_is_stable(TransferFunction([1, 0, 0], [1, 1], TS))


mags = st.one_of(st.floats(0.0, 0.999), st.floats(1.001, 3.0))


@given(st.lists(st.tuples(mags, st.floats(0, np.pi)), min_size=1, max_size=4))
def test_discrete_stability_iff_roots_inside(pairs):
    roots = []
    for m, ang in pairs:
        if ang < 0.1:
            roots.append(m)
        else:
            roots += [m * np.exp(1j * ang), m * np.exp(-1j * ang)]
    den = poly_from_roots(roots).real
    g = TransferFunction([1.0], den, TS)
    expect = all(abs(r) < 1 - 1e-9 for r in roots)
    assert (tf_is_stable(g) is Stability.STABLE) == expect


# -- state space ------------------------------------------------------------


def test_tf_to_ss_gain():
    ss = tf_to_ss(TransferFunction.gain(3.0))
    assert ss.n_states == 0
    np.testing.assert_array_equal(ss.D, [[3.0]])


def test_tf_to_ss_first_order():
    ss = tf_to_ss(TransferFunction([1], [1, 1]))
    np.testing.assert_array_equal(ss.A, [[-1.0]])
    np.testing.assert_array_equal(ss.B, [[1.0]])
    np.testing.assert_array_equal(ss.C, [[1.0]])
    np.testing.assert_array_equal(ss.D, [[0.0]])


def test_tf_to_ss_rejects_improper():
    with pytest.raises(ImproperError, match="improper transfer function"):
        tf_to_ss(TransferFunction([1, 0, 0], [1, 1]))


def test_q_over_gn_is_realizable():
    qgi = TransferFunction(poly_mul(Q_DOB_S.num, GN_S.den), poly_mul(Q_DOB_S.den, GN_S.num))
    assert qgi.relative_degree == 0
    ss = tf_to_ss(qgi)
    assert ss.n_states == 4 and ss.D[0, 0] != 0


def test_state_space_shape_checks():
    with pytest.raises(ValueError):
        StateSpace(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros((1, 2)), [[0.0]])


stable_pole = st.floats(-20, -0.1)


@st.composite
def continuous_tf(draw, max_order=4):
    n = draw(st.integers(1, max_order))
    poles = draw(st.lists(stable_pole, min_size=n, max_size=n))
    m = draw(st.integers(0, n))
    num = draw(st.lists(st.floats(-5, 5), min_size=m + 1, max_size=m + 1))
    if abs(num[0]) < 1e-2:
        num[0] = 1.0
    return TransferFunction(num, poly_from_roots(poles).real)


@given(continuous_tf())
def test_realization_reproduces_tf(g):
    ss = tf_to_ss(g)
    rng = np.random.default_rng(1)
    pts = rng.normal(size=16) + 1j * rng.normal(size=16) + 0.5
    for x in pts:
        a = ss.evaluate(x)[0, 0]
        b = g(x)
        assert abs(a - b) <= 1e-8 * max(1.0, abs(b))
    back = ss.to_tf()
    assert tf_close(back, g, 1e-8)


# -- zero-order hold --------------------------------------------------------


def test_zoh_q_dob():
    q = zoh_discretize(Q_DOB_S, TS).normalized()
    assert rel_err(q.num, [0.0001974, 0.0001974]) < 0.02
    assert rel_err(q.den, [1.0, -1.96, 0.9608]) < 0.02
    np.testing.assert_allclose(q.den, [1.0, -2 * np.exp(-0.02), np.exp(-0.04)], rtol=1e-12)
    # Closed form for 1/(0.25 (s+2)^2): b1 = 1 - e(1 + aT), b2 = e(e + aT - 1).
    e, aT = np.exp(-0.02), 0.02
    np.testing.assert_allclose(q.num, [1 - e * (1 + aT), e * (e + aT - 1)], rtol=1e-9)
    assert abs(q.dcgain() - 1.0) < 1e-9


def test_zoh_q_cdob():
    q = zoh_discretize(Q_CDOB_S, TS).normalized()
    assert rel_err(q.num, [0.0902, 0.06461]) < 0.005
    assert rel_err(q.den, [1.0, -1.213, 0.3679]) < 0.005


def test_zoh_nominal_plant_denominator():
    g = zoh_discretize(GN_S, TS).normalized()
    assert rel_err(g.den, [1, -2.892, 2.784, -0.8927, 0.0005429]) < 0.01


def test_zoh_rejects_discrete_and_bad_ts():
    with pytest.raises(DomainMismatchError):
        zoh_discretize(TransferFunction([1], [1, -0.5], TS), TS)
    with pytest.raises(ValueError):
        zoh_discretize(Q_DOB_S, 0.0)
    with pytest.raises(ImproperError):
        zoh_discretize(TransferFunction([1, 0], [1]), TS)


@settings(max_examples=40)
@given(continuous_tf(max_order=3), st.floats(0.005, 0.2))
def test_zoh_step_matches_continuous_step(g, ts):
    ss = tf_to_ss(g)
    gz = zoh_discretize(g, ts)
    k = np.arange(60)
    y_d = FilterState(gz).run(np.ones(len(k)))
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    Ainv = np.linalg.inv(A)
    I = np.eye(A.shape[0])
    y_c = np.array([(C @ Ainv @ (expm(A * t) - I) @ B + D)[0, 0] for t in k * ts])
    scale = max(1.0, np.max(np.abs(y_c)))
    assert np.max(np.abs(y_d - y_c)) < 1e-8 * scale


# -- frequency response -----------------------------------------------------


def test_freq_response_examples():
    assert Q_DOB_S.freq_response(0.0) == pytest.approx(1.0 + 0j)
    printed = TransferFunction([0.0902, 0.06461], [1, -1.213, 0.3679], TS)
    assert printed.dcgain() == pytest.approx(0.15481 / 0.1549, rel=1e-9)
    assert printed.dcgain() == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ZeroDivisionError, match="pole on the evaluation contour"):
        GN_S.freq_response(0.0)


def test_freq_response_above_nyquist():
    g = TransferFunction([1], [1, -0.5], TS)
    with pytest.raises(ValueError, match="above Nyquist frequency"):
        g.freq_response(np.pi / TS * 1.01)


@st.composite
def discrete_tf(draw, max_order=3):
    n = draw(st.integers(1, max_order))
    poles = draw(st.lists(st.floats(-0.9, 0.9), min_size=n, max_size=n))
    num = draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n))
    if abs(num[0]) < 1e-2:
        num[0] = 1.0
    return TransferFunction(num, poly_from_roots(poles).real, TS)


@given(discrete_tf(), discrete_tf())
def test_series_response_is_product(a, b):
    w = np.random.default_rng(2).uniform(0, np.pi / TS, 64)
    ab = series(a, b)
    np.testing.assert_allclose(ab.freq_response(w), a.freq_response(w) * b.freq_response(w),
                               rtol=1e-10, atol=1e-12)


# -- algebra ----------------------------------------------------------------


def test_series_identity_and_feedback():
    g = TransferFunction([1, 2], [1, 3, 5], TS)
    assert tf_close(series(g, TransferFunction.gain(1.0, TS)), g)
    fb = feedback(TransferFunction.gain(1.0, TS))
    assert fb.dcgain() == pytest.approx(0.5)


def test_feedback_of_design_loop_is_stable():
    gn = zoh_discretize(GN_S, TS)
    c = TransferFunction([7.2, -7.0], [1.0, 0.0], TS)
    assert tf_is_stable(feedback(c * gn)) is Stability.STABLE


def test_domain_mismatch():
    with pytest.raises(DomainMismatchError):
        series(TransferFunction([1], [1, 1]), TransferFunction([1], [1, 0.5], TS))
    with pytest.raises(DomainMismatchError):
        TransferFunction([1], [1, 0.5], 0.01) * TransferFunction([1], [1, 0.5], 0.02)


def test_series_keeps_double_integrator():
    # Only coincident pairs cancel; near misses stay.
    a = TransferFunction([1, -1 + 1e-6], [1, 0.5], TS)
    b = TransferFunction([1], [1, -2, 1], TS)
    assert len((a * b).den) == 4


def test_text_round_trip():
    g = TransferFunction([0.5, -0.25], [1, -1.5, 0.7], TS)
    line = g.to_text()
    assert line.startswith("discrete 0.01 num:")
    assert tf_close(TransferFunction.from_text(line), g, 1e-9)
    c = TransferFunction.from_text("continuous num: 1 den: 1 1")
    assert c.ts is None


# -- runtime filters --------------------------------------------------------


def test_filter_unity_and_unit_delay():
    u = np.random.default_rng(3).normal(size=20)
    np.testing.assert_array_equal(FilterState(TransferFunction.gain(1.0, TS)).run(u), u)
    d = FilterState(TransferFunction([1], [1, 0], TS)).run(u)
    np.testing.assert_array_equal(d, np.concatenate([[0.0], u[:-1]]))


def test_filter_reset_and_zero_input():
    f = FilterState(TransferFunction([1, 0.3], [1, -0.5, 0.1], TS))
    f.run(np.ones(10))
    f.reset()
    assert f.order == 2
    np.testing.assert_array_equal(f.run(np.zeros(5)), 0.0)


def test_filter_steady_state_reset():
    g = TransferFunction([1, 0.3], [1, -0.5, 0.1], TS)
    f = FilterState(g)
    f.reset(steady_input=2.0)
    np.testing.assert_allclose(f.run(np.full(5, 2.0)), 2.0 * g.dcgain(), rtol=1e-14)


def test_filter_rejects_improper_and_continuous():
    with pytest.raises(ImproperError):
        FilterState(TransferFunction([1, 0, 0], [1, 1], TS))
    with pytest.raises(DomainMismatchError):
        FilterState(Q_DOB_S)


def test_q_dob_step_settles():
    q = zoh_discretize(Q_DOB_S, TS)
    y = FilterState(q).run(np.ones(500))
    assert abs(y[-1] - 1.0) < 1e-3


def test_impulse_matches_long_division():
    g = zoh_discretize(GN_S, TS)
    f = FilterState(g)
    imp = np.zeros(50)
    imp[0] = 1.0
    h = np.array([filter_step(f, v) for v in imp])
    np.testing.assert_allclose(h, impulse_by_division(g, 50), atol=1e-10)


@st.composite
def distinct_pole_tf(draw):
    n = draw(st.integers(1, 4))
    pole = st.one_of(st.floats(-0.9, -0.05), st.floats(0.05, 0.9))
    poles = draw(st.lists(pole, min_size=n, max_size=n, unique=True)
                 .filter(lambda p: len(p) < 2 or np.min(np.diff(np.sort(p))) > 0.05))
    num = draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n + 1))
    if abs(num[0]) < 1e-2:
        num[0] = 1.0
    return TransferFunction(num, poly_from_roots(poles).real, TS)


@settings(max_examples=30)
@given(distinct_pole_tf())
def test_filter_matches_partial_fractions(g):
    n = 1000
    b = np.concatenate([np.zeros(len(g.den) - len(g.num)), g.num])
    r, p, k = signal.residuez(b, g.den)
    idx = np.arange(n)
    h = np.real(sum(ri * pi ** idx for ri, pi in zip(r, p)))
    k = np.atleast_1d(np.real(k))
    h[: len(k)] += k
    u = np.random.default_rng(4).normal(size=n)
    expect = np.convolve(u, h)[:n]
    assert np.max(np.abs(FilterState(g).run(u) - expect)) < 1e-8 * max(1.0, np.max(np.abs(expect)))


def test_high_precision_filter_matches_double():
    g = TransferFunction([0.2, 0.1], [1, -0.7, 0.1], TS)
    u = np.random.default_rng(5).normal(size=200)
    np.testing.assert_allclose(hp_lfilter(hp(g.num), hp(g.den), u), FilterState(g).run(u),
                               atol=1e-13)


# -- delay lines ------------------------------------------------------------


def test_delay_line_examples():
    np.testing.assert_array_equal([delay_line(0).step(v) for v in [1, 2, 3]], [1, 2, 3])
    d = delay_line(3)
    assert [d.step(v) for v in [1, 0, 0, 0, 0]] == [0, 0, 0, 1, 0]
    assert len(d) == 3


def test_delay_line_equals_pure_delay_tf():
    u = np.zeros(150)
    u[0] = 1.0
    d = DelayLine(100)
    a = np.array([d.step(v) for v in u])
    b = FilterState(TransferFunction.delay(100, TS)).run(u)
    np.testing.assert_array_equal(a, b)


def test_delay_line_negative():
    with pytest.raises(ValueError):
        DelayLine(-1)


def test_variable_delay_constant_matches_fixed():
    u = np.random.default_rng(6).normal(size=50)
    v = VariableDelayLine(10)
    f = DelayLine(7)
    assert [v.step(x, 7) for x in u] == [f.step(x) for x in u]
    with pytest.raises(ValueError):
        v.step(0.0, 11)
