import math

import numpy as np
import pytest

from vortex_limit.errors import HydrodynamicRHS, TailNotResolved, UnderResolvedShift
from vortex_limit.kinetic_ops import (
    CallablePoly,
    KineticVector,
    VelocityGrid,
    WeightSpec,
    build_L,
    burnett_matrix,
    collision_Q_direct,
    from_poly,
    gamma_apply,
    gh_rule,
    hermite_coefficients,
    hermite_values,
    hydro_basis,
    L_inverse_solve,
    maxwellian,
    moments,
    nu0_constant,
    nu_direct,
    nu_eval,
    nu_shape,
    project_P,
    read_operator_cache,
    to_poly,
    weighted_kernel_check,
    write_operator_cache,
)

SQ2PI = math.sqrt(2 * math.pi)


def poly(fn, deg):
    return CallablePoly(fn, deg)


def test_gauss_hermite_moments():
    x, w = gh_rule(10)
    assert abs(w.sum() - 1) < 1e-14
    assert abs(w @ x**4 - 3) < 1e-13 and abs(w @ x**6 - 15) < 1e-12


def test_shifted_maxwellian_moments():
    g = VelocityGrid(12, (0.3, -0.2, 0.0))
    R, U, T = 1.3, np.array([0.25, -0.1, 0.05]), 0.9
    m0, m1, m2 = moments(g, maxwellian(g, R, U, T))
    assert abs(m0 - R) < 1e-12
    assert np.abs(m1 - R * U).max() < 1e-12
    assert abs(m2 - R * (U @ U + 3 * T)) < 1e-11


def test_hydro_basis_orthonormal_and_projection():
    g = VelocityGrid(12)
    b = hydro_basis(g)
    assert np.abs(b.gram - np.eye(5)).max() < 1e-13
    f = from_poly(g, poly(lambda X: X[..., 0] ** 3 + X[..., 1] ** 2 * X[..., 2], 3))
    pf, comp = project_P(f, b)
    pf2, _ = project_P(pf, b)
    assert np.abs(pf2.values - pf.values).max() < 1e-13
    assert np.abs(b.matrix.T @ (g.weights * comp.values)).max() < 1e-13


def test_projection_of_cubic():
    # int xi_1^4 mu = 3 and the odd cubic has no density or energy part
    g = VelocityGrid(12)
    f = from_poly(g, poly(lambda X: X[..., 0] ** 3, 3))
    pf, _ = project_P(f, hydro_basis(g))
    assert np.abs(pf.values - 3 * g.xi[:, 0] * g.sqrt_mu).max() < 1e-13


def test_hermite_interpolation_round_trip():
    g = VelocityGrid(8)
    P = g.xi[:, 0] ** 2 * g.xi[:, 1] - 0.5 * g.xi[:, 2]
    c = hermite_coefficients(g, P * g.mu)
    assert np.abs(hermite_values(g, c) - P).max() < 1e-13 * np.abs(P).max()
    q = to_poly(KineticVector(g, P * g.mu, "F"))
    assert q.deg == 3


def test_tail_not_resolved():
    g = VelocityGrid(10)
    wide = maxwellian(g, 1.0, (0, 0, 0), 2.0)
    with pytest.raises(TailNotResolved):
        to_poly(KineticVector(g, wide, "F"))


def test_collision_frequency_closed_form():
    # nu(0) = int |v*| mu dv* * int |e . sigma| dsigma = 2 sqrt(2/pi) * 2 pi
    assert abs(nu_direct(np.array([0.0]))[0] - 4 * SQ2PI) < 1e-10
    r = np.linspace(0, 6, 25)
    assert np.abs(nu_eval(r, 2 * SQ2PI) - nu_direct(r)).max() / nu_direct(r).min() < 1e-6
    # linear growth with slope int |e . sigma| dsigma = 2 pi
    assert abs(nu_eval(200.0, 2 * SQ2PI) / 200.0 - 2 * math.pi) < 1e-3
    assert abs(nu_shape(np.array([0.0]))[0] - 2.0) < 1e-15


def test_fitted_constants(model12):
    assert abs(model12.c1 - 2 * SQ2PI) < 1e-6 and model12.c1_residual < 1e-4
    assert abs(model12.c2 + 1 / SQ2PI) < 1e-4
    assert abs(model12.c3 + 4 / SQ2PI) < 1e-4
    assert model12.k_residual < 1e-4
    nu0 = nu0_constant(model12.c1)
    r = np.linspace(0, 8, 200)
    assert np.all(nu0 * (r + 1) <= nu_eval(r, model12) * (1 + 1e-12))


def test_loss_term_is_nu(model12):
    g = model12.grid
    M = KineticVector(g, g.mu, "F", poly(lambda X: np.ones(X.shape[:-1]), 0))
    Q, gain, loss = collision_Q_direct(M, M, return_parts=True)
    r = np.linalg.norm(g.xi, axis=1)
    inside = r < 4
    assert np.abs(loss[inside] / g.mu[inside] - nu_eval(r[inside], 2 * SQ2PI)).max() < 1e-8
    assert np.abs(Q.values).max() < 1e-12 * np.abs(loss).max()


def test_h_theorem(model12):
    g = model12.grid
    p = poly(lambda X: 1 + 0.3 * X[..., 0] ** 2 + 0.1 * X[..., 1] ** 2 * X[..., 2] ** 2, 4)
    F = KineticVector(g, p(g.xi) * g.mu, "F", p)
    Q = collision_Q_direct(F, F)
    assert g.integrate(Q.values * np.log(F.values)) < 0


def test_collision_invariance(model16):
    g = model16.grid
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=4), rng.normal(size=4)

    def mk(c):
        p = poly(lambda X: 1 + c[0] * X[..., 0] * X[..., 1] + c[1] * X[..., 2] ** 2 + c[2] * X[..., 0] ** 3 + c[3] * X[..., 1], 3)
        return KineticVector(g, p(g.xi) * g.mu, "F", p)

    F, G = mk(0.2 * a), mk(0.2 * b)
    Q = collision_Q_direct(F, G)
    scale = math.sqrt(g.integrate(F.values**2 / g.mu) * g.integrate(G.values**2 / g.mu))
    for phi in (np.ones(g.size), g.xi[:, 0], g.xi[:, 1], g.xi[:, 2], np.sum(g.xi**2, axis=1)):
        assert abs(g.integrate(Q.values * phi)) < 1e-6 * scale


def test_L_symmetric_nonnegative_with_null_space(model12):
    g = model12.grid
    rng = np.random.default_rng(0)
    f = KineticVector(g, model12.Phi @ rng.normal(size=model12.Phi.shape[1]), "f")
    h = KineticVector(g, model12.Phi @ rng.normal(size=model12.Phi.shape[1]), "f")
    Lf, Lh = model12.apply(f), model12.apply(h)
    assert abs(Lf.inner(h) - f.inner(Lh)) < 1e-10 * f.norm() * h.norm() * model12.c1
    assert Lf.inner(f) > 0
    for v in hydro_basis(g).vectors:
        assert model12.apply(v).norm() < 1e-10
    S = model12.L_matrix
    assert np.array_equal(S, S.T)


def test_L_matches_direct_gamma(model12):
    # L f = -2 Gamma(sqrt(mu), f) for the symmetrized collision operator
    g = model12.grid
    B = from_poly(g, poly(lambda X: X[..., 0] * X[..., 1], 2))
    one = from_poly(g, poly(lambda X: np.ones(X.shape[:-1]), 0))
    direct = -2 * gamma_apply(one, B).inner(B)
    assert abs(model12.apply(B).inner(B) / direct - 1) < 1e-6


def test_L_inverse(model12):
    g = model12.grid
    B = from_poly(g, poly(lambda X: X[..., 0] * X[..., 2], 2))
    A = L_inverse_solve(B, model12)
    assert np.abs(model12.apply(A).values - B.values).max() < 1e-10
    with pytest.raises(HydrodynamicRHS):
        L_inverse_solve(from_poly(g, poly(lambda X: X[..., 0], 1)), model12)


def test_spectral_gap(model12):
    d = model12.delta0
    assert 0 < d < 1
    g = model12.grid
    rng = np.random.default_rng(5)
    f = KineticVector(g, model12.Phi @ rng.normal(size=model12.Phi.shape[1]), "f")
    _, f = project_P(f, hydro_basis(g))
    nu = nu_eval(np.linalg.norm(g.xi, axis=1), model12)
    assert model12.apply(f).inner(f) >= d * g.integrate(nu * f.values**2) * (1 - 1e-9)


def test_burnett_structure(model12, model16):
    bt = burnett_matrix(model12)
    assert abs(bt.inner_L(0, 0, 0, 0) / bt.inner_L(0, 1, 0, 1) - 4 / 3) < 1e-10
    assert abs(bt.inner_L(0, 0, 0, 1)) < 1e-10 * bt.eta0
    assert abs(bt.eta0 - bt.inner_L(0, 1, 0, 1)) < 1e-12
    # variational lower bound with the single trial function xi_1 xi_2 sqrt(mu)
    g = model12.grid
    B = from_poly(g, poly(lambda X: X[..., 0] * X[..., 1], 2))
    sonine = B.inner(B) ** 2 / model12.apply(B).inner(B)
    assert sonine <= bt.eta0 < 1.03 * sonine
    eta16 = burnett_matrix(model16).eta0
    assert abs(eta16 / bt.eta0 - 1) < 0.02


def test_shift_guards():
    with pytest.raises(UnderResolvedShift):
        build_L((0.6, 0.0, 0.0), n_v=16)
    with pytest.raises(UnderResolvedShift):
        build_L((0.2, 0.0, 0.0), n_v=12)


def test_galilean_invariance(model16):
    shifted = build_L((0.3, -0.2, 0.0), n_v=16)
    g = shifted.grid
    B = from_poly(g, poly(lambda X: X[..., 0] * X[..., 1], 2))
    B0 = from_poly(model16.grid, poly(lambda X: X[..., 0] * X[..., 1], 2))
    assert np.abs(shifted.apply(B).values - model16.apply(B0).values).max() < 1e-12


def test_weighted_kernel(model12):
    with pytest.raises(ValueError):
        WeightSpec(0.3)
    rep = weighted_kernel_check(WeightSpec(0.1), model12, n_pairs=500)
    assert rep.passed and rep.envelope_C > 0 and rep.decreasing_beyond_peak


def test_operator_cache_round_trip(tmp_path):
    m = build_L((0.0, 0.0, 0.0), n_v=8, fit_kernel=False)
    write_operator_cache(tmp_path / "L.lop", m)
    back = read_operator_cache(tmp_path / "L.lop")
    assert back["n_v"] == 8 and back["c1"] == m.c1
    assert np.array_equal(back["L_matrix"], m.L_matrix)
