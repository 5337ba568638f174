import numpy as np
import pytest

from pathdob.cdob import (
    Q_CDOB_S,
    CdobConfig,
    CdobLoop,
    cdob_closed_loop_tfs,
    cdob_reference_response,
    cdob_sim_vs_tf_oracle,
    nd_identity_check,
    network_disturbance,
    q_cdob_default,
    simulate_cdob,
    trace_csv,
)
from pathdob.lti import (
    DelayLine,
    FilterState,
    ImproperError,
    TransferFunction,
    poly_add,
    poly_mul,
    tf_close,
)
from pathdob.pd_design import DESIGN_POINT, pd_tf
from pathdob.vehicle import nominal_plant_z

TS = 0.01


@pytest.fixture(scope="module")
def parts():
    return pd_tf(DESIGN_POINT, TS), nominal_plant_z(TS), q_cdob_default(TS)


def cfg_n(parts, n, q=None):
    c, gn, qd = parts
    return CdobConfig(c, gn, qd if q is None else q, n)


def delayed_pd(c, g, r, n):
    ctl, plant, line = FilterState(c), FilterState(g), DelayLine(n)
    y = np.zeros(len(r))
    for k in range(len(r)):
        y[k] = line.step(plant.output())
        plant.step(ctl.step(r[k] - y[k]))
    return y


def plain_loop_den(c, g):
    return poly_add(poly_mul(c.den, g.den), poly_mul(c.num, g.num))


def test_q_filter_denominator_closed_form():
    np.testing.assert_allclose(Q_CDOB_S.poles(), [-50.0, -50.0], atol=1e-4)
    q = q_cdob_default(TS)
    e = np.exp(-0.5)
    np.testing.assert_allclose(q.den, [1.0, -2 * e, e * e], rtol=1e-12)
    assert abs(q.dcgain() - 1.0) < 1e-9


def test_network_disturbance_impulse():
    u = np.zeros(8)
    u[0] = 1.0
    np.testing.assert_array_equal(network_disturbance(u, 3), [1, 0, 0, -1, 0, 0, 0, 0])
    np.testing.assert_array_equal(network_disturbance(u, 0), 0.0)
    with pytest.raises(ValueError):
        network_disturbance(u, -1)


def test_zero_input_zero_output(parts):
    sim = simulate_cdob(cfg_n(parts, 100), np.zeros(300))
    for key in ("y", "y_delayed", "y_comp", "dhat", "u"):
        np.testing.assert_array_equal(sim[key], 0.0)


def test_no_delay_estimate_vanishes(parts):
    cfg = cfg_n(parts, 0)
    r = np.ones(1000)
    sim = simulate_cdob(cfg, r)
    assert np.max(np.abs(sim["dhat"])) < 1e-10
    np.testing.assert_allclose(sim["y"], delayed_pd(cfg.c, cfg.gn, r, 0), atol=1e-10)


def test_long_delay_stable_where_pd_is_not(parts):
    cfg = cfg_n(parts, 100)
    r = np.ones(3000)
    sim = simulate_cdob(cfg, r)
    assert np.all(np.isfinite(sim["y"]))
    assert abs(sim["y"][-1] - 1.0) < 1e-3
    y_pd = delayed_pd(cfg.c, cfg.gn, r, 100)
    assert np.max(np.abs(y_pd[-500:])) > 10 * np.max(np.abs(y_pd[:500]))
    # Delayed PD characteristic polynomial: z^N cd gd + cn gn.
    den = poly_add(np.concatenate([poly_mul(cfg.c.den, cfg.gn.den), np.zeros(100)]),
                   poly_mul(cfg.c.num, cfg.gn.num))
    assert np.max(np.abs(np.roots(den))) > 1.0


def test_estimate_settles_for_constant_input(parts):
    sim = simulate_cdob(cfg_n(parts, 100), np.ones(4000))
    assert abs(sim["dhat"][-1]) < 1e-6


def test_network_identity_random_input(parts):
    r = np.random.default_rng(0).standard_normal(500)
    for n in (0, 3, 25, 100):
        assert nd_identity_check(cfg_n(parts, n), r) < 1e-8


def test_delay_free_when_q_is_one(parts):
    c, gn, _ = parts
    cl = cdob_closed_loop_tfs(c, gn, TransferFunction.gain(1.0, TS), 100)
    assert not cl.delayed.any()
    np.testing.assert_allclose(cl.undelayed, plain_loop_den(c, gn), rtol=1e-14)
    target = TransferFunction(poly_mul(c.num, gn.num),
                              np.concatenate([plain_loop_den(c, gn), np.zeros(100)]), TS)
    assert tf_close(cl.t_ry, target)


def test_no_delay_matches_plain_loop_for_any_q(parts):
    c, gn, q = parts
    target = TransferFunction(poly_mul(c.num, gn.num), plain_loop_den(c, gn), TS)
    for qq in (q, TransferFunction([0.3], [1.0, -0.7], TS)):
        assert tf_close(cdob_closed_loop_tfs(c, gn, qq, 0).t_ry, target, 1e-9)


def test_oracle_no_delay(parts):
    r = np.ones(1000)
    d = np.where(np.arange(1000) > 500, 0.1, 0.0)
    assert cdob_sim_vs_tf_oracle(cfg_n(parts, 0), r, d) < 1e-9


def test_oracle_long_delay(parts):
    r = np.ones(1000)
    assert cdob_sim_vs_tf_oracle(cfg_n(parts, 100), r) < 1e-9


def test_oracle_with_mismatched_plant(parts):
    cfg = cfg_n(parts, 25)
    g = nominal_plant_z(TS) * TransferFunction.gain(1.2, TS)
    r = np.ones(800)
    sim = simulate_cdob(cfg, r, plant=g)
    np.testing.assert_allclose(sim["y_delayed"], cdob_reference_response(cfg, r, plant=g),
                               atol=1e-9)


def test_causality(parts):
    cfg = cfg_n(parts, 10)
    r = np.random.default_rng(1).standard_normal(400)
    cut = r.copy()
    cut[250:] = 0.0
    a, b = simulate_cdob(cfg, r), simulate_cdob(cfg, cut)
    for key in ("y", "u", "dhat"):
        np.testing.assert_array_equal(a[key][:250], b[key][:250])


@pytest.mark.parametrize("n", [10, 25, 50, 75, 100])
def test_stable_across_delays(parts, n):
    cl = cdob_closed_loop_tfs(*parts, n)
    assert np.max(np.abs(cl.t_ry.poles())) < 1.0


def test_variable_delay(parts):
    cfg = cfg_n(parts, 100)
    r = np.ones(2000)
    fixed = simulate_cdob(cfg, r, delays=np.full(2000, 100))
    np.testing.assert_array_equal(fixed["y"], simulate_cdob(cfg, r)["y"])
    jitter = np.random.default_rng(2).integers(90, 101, 2000)
    sim = simulate_cdob(cfg, r, delays=jitter)
    assert np.all(np.isfinite(sim["y"]))
    assert np.max(np.abs(sim["y"])) < 10.0


def test_reset_settles_on_constant_measurement(parts):
    loop = CdobLoop(cfg_n(parts, 100))
    loop.reset(y0=1.0, r0=1.0)
    us = [loop.step(1.0, 1.0) for _ in range(5)]
    np.testing.assert_allclose(us, 0.0, atol=1e-12)


def test_config_validation(parts):
    c, gn, q = parts
    with pytest.raises(ValueError):
        CdobConfig(c, gn, q, -1)
    with pytest.raises(ValueError):
        CdobConfig(c, gn, q, 2.5)
    with pytest.raises(ImproperError):
        CdobConfig(c, gn, TransferFunction([0.5, 0.5], [1.0, 0.0], TS), 5)


def test_trace_csv(parts):
    sim = simulate_cdob(cfg_n(parts, 5), np.ones(20))
    text = trace_csv(sim)
    assert text.splitlines()[0] == "t,r,y_delayed,y_comp,dhat,u"
    assert len(text.splitlines()) == 21
    assert text == trace_csv(simulate_cdob(cfg_n(parts, 5), np.ones(20)))
