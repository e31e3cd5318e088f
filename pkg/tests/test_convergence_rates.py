import math

import numpy as np
import pytest

from vortex_limit.convergence_rates import (
    C_OSGOOD,
    RateInputs,
    ScheduleParams,
    besov_yudovich_exponent,
    convergence_experiment,
    e_m,
    flow_modulus,
    log_m,
    osgood_bound,
    phi_theta,
    rate_besov,
    rate_velocity,
    rate_vorticity,
    smoothed_patch,
    theta,
    validate_schedule,
)
from vortex_limit.errors import DomainError
from vortex_limit.torus_spectral import GridSpec2D

BETAS = (0.2, 0.1, 0.05, 0.025)
SMALL = RateInputs(u0_l2=0.1, w0_l2=0.1, w0_l3=0.1, w0_yud=0.1, w0_lp=0.1)


def test_iterated_log_round_trip():
    for m in range(4):
        for x in (3.0, 20.0, 1e6):
            if m == 3 and x < 16:
                continue
            assert abs(e_m(log_m(x, m), m) - x) < 1e-12 * x
    assert log_m(math.e**math.e, 2) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        log_m(0.5, 2)
    with pytest.raises(DomainError):
        e_m(-0.1, 1)
    with pytest.raises(DomainError):
        e_m(800.0, 1)


def test_theta_clipping():
    assert theta(1e9, 0) == 1.0
    assert theta(2.0, 1) == 1.0
    assert theta(100.0, 1) == pytest.approx(math.log(100))
    assert theta(1e6, 2) == pytest.approx(math.log(1e6) * math.log(math.log(1e6)))
    with pytest.raises(DomainError):
        theta(0.5, 1)


def test_phi_theta_m0_closed_form_and_continuity():
    for r in (1e-8, 1e-3, 0.1):
        assert abs(phi_theta(r, 0) - r * (1 - math.log(r))) < 1e-12 * r * (1 - math.log(r)) + 1e-15
    a = math.exp(-2)
    assert abs(phi_theta(a * (1 - 1e-12), 0) - phi_theta(a, 0)) < 1e-10
    assert phi_theta(0.0, 1) == 0.0


def test_osgood_closed_forms():
    M, v0, t, C, y = 3.0, 1e-4, 0.5, C_OSGOOD, 0.7
    a = math.exp(-C * t * y)
    assert abs(osgood_bound(M, v0, t, C, y, 0) - M * (v0 / M) ** a) < 1e-12
    assert abs(osgood_bound(M, v0, t, C, y, 1) - M / math.exp(math.log(M / v0) ** a)) < 1e-12
    assert osgood_bound(M, v0, 0.0, C, y, 1) == pytest.approx(v0, rel=1e-12)
    assert osgood_bound(M, 0.0, t, C, y, 0) == 0.0


def test_rate_velocity_m0_matches_closed_form():
    inp = RateInputs(m=0, T=0.7, u0_l2=0.3, w0_l2=0.8, w0_l3=1.1, w0_yud=0.9)
    M = 1 + 4 * 0.3**2 * 1.0 + 2 * 1.1**2
    for b in BETAS:
        expect = M * ((b * 0.8) ** 2 / M) ** math.exp(-C_OSGOOD * 0.7 * 0.9)
        assert abs(rate_velocity(inp, b) - expect) < 1e-12 * expect


@pytest.mark.parametrize(
    "fn",
    [
        lambda b: rate_velocity(SMALL, b),
        lambda b: rate_vorticity(SMALL, b),
        lambda b: rate_vorticity(SMALL, b, lambda s: s),
        lambda b: rate_besov(SMALL, b, "loc-Y"),
        lambda b: rate_besov(SMALL, b, "Y"),
        lambda b: rate_velocity(RateInputs(m=1, u0_l2=0.1, w0_l2=0.1, w0_l3=0.1, w0_yud=0.1), b),
    ],
)
def test_rates_vanish_monotonically(fn):
    vals = [fn(b) for b in BETAS]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert fn(1e-30) < vals[-1]


def test_besov_exponents():
    inp = RateInputs(s=2.0, s_prime=1.0, u0_l2=0.1, w0_l2=0.1, w0_l3=0.1, w0_yud=0.1, w0_lp=0.1)
    b = 0.01
    tail = abs(math.log(rate_velocity(inp, b))) ** (-1 / 7)
    assert rate_besov(inp, b, "loc-Y") == pytest.approx(b**0.5 + tail, rel=1e-14)
    alpha = besov_yudovich_exponent(inp)
    assert alpha == pytest.approx(2 / 3 * math.exp(-C_OSGOOD * 0.1 * 1.0))
    slope = math.log(rate_besov(inp, 0.01, "Y") / rate_besov(inp, 0.001, "Y")) / math.log(10)
    assert slope == pytest.approx(alpha, rel=1e-12) and slope > 0
    with pytest.raises(DomainError):
        rate_besov(inp, 0.1, "other")
    with pytest.raises(DomainError):
        RateInputs(s=1.0, s_prime=1.0)


def test_rate_vorticity_zero_data():
    inp = RateInputs(u0_l2=0.0, w0_l2=0.0, w0_l3=0.0, w0_yud=0.0, w0_lp=0.0)
    # zero data: the velocity rate vanishes and so does the vorticity rate
    assert rate_velocity(inp, 0.1) == 0.0
    assert rate_vorticity(inp, 0.1, lambda s: 0.0) == 0.0


def test_schedule_examples():
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    good = validate_schedule(ScheduleParams(1 / 3, 0.5), eps)
    bad = validate_schedule(ScheduleParams(2.0, 0.5), eps)
    assert good.clauses["eps_over_kappa2"] and good.passed
    assert not bad.clauses["eps_over_kappa2"] and not bad.passed
    assert np.allclose(good.values["eps_over_kappa2"], np.array(eps) ** (1 / 3))
    grow = validate_schedule(ScheduleParams(1 / 3, 0.5, V=lambda b: b**-3), eps)
    assert not grow.clauses["kappa_quarter_V"]
    custom = ScheduleParams(1 / 3, 1.0, beta_of=lambda e: 0.5)
    assert custom.beta(1e-3) == 0.5


def test_flow_modulus_monotone():
    vals = [flow_modulus(r, 0.5, 0) for r in (1e-6, 1e-4, 1e-2)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert flow_modulus(0.0, 0.5, 0) == 0.0


def test_smoothed_patch_mean_zero():
    w = smoothed_patch(GridSpec2D(64))
    assert abs(w.mean()) < 1e-14 and w.values.max() > 3


def test_small_convergence_experiment(tmp_path, ops12):
    g = GridSpec2D(64)
    res = convergence_experiment(smoothed_patch(g), (0.5, 0.25, 0.125), 0.1, p_list=(1.0, 2.0), ops=ops12, store_every=4)
    assert res.rate_ok and res.osgood_ok and res.kinetic_ok and res.passed
    errs = [res.sup_err_u[b] for b in (0.5, 0.25)]
    assert errs[1] < errs[0]
    files = res.write_csv(tmp_path)
    head = (tmp_path / "convergence.csv").read_text().splitlines()[0]
    assert head == "beta,t,err_u_l2,err_w_p1,err_w_p2,rate_u,rate_w,pass"
    assert set(files) == {"convergence.csv", "osgood.csv", "kinetic_vorticity.csv"}
    with pytest.raises(DomainError):
        convergence_experiment(smoothed_patch(g), (0.5,), 0.1, ops=ops12)
