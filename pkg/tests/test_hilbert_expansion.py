import math

import numpy as np
import pytest

from vortex_limit.errors import MissingOperatorCache
from vortex_limit.euler_lagrangian import AuxState, run_aux, run_euler
from vortex_limit.hilbert_expansion import (
    ExpansionFields,
    RemainderSnapshot,
    ScaleParams,
    assemble_expansion,
    energy_functionals,
    hydro_cancellation_check,
    kinetic_moments,
    moment_identity,
    residual_sources,
    write_residual_csv,
    xi_derivative,
)
from vortex_limit.kinetic_ops import VelocityGrid, hydro_basis, nu_eval
from vortex_limit.torus_spectral import GridSpec2D, ScalarField2D

TP = 2 * math.pi


@pytest.fixture(scope="module")
def flow(ops12):
    g = GridSpec2D(32)
    w0 = ScalarField2D.from_function(g, lambda x, y: np.sin(TP * x) * np.sin(TP * y) + 0.5 * np.cos(TP * (x + 2 * y)))
    dt = 0.005
    eu = run_euler(w0, 0.2, dt)
    ax = run_aux(AuxState.zero(g, ops12.eta0), eu, dt, 40)
    return eu, ax


@pytest.fixture(scope="module")
def fields(flow):
    eu, ax = flow
    return ExpansionFields.from_trajectories(eu, ax, 20)


def test_scale_params_validation():
    with pytest.raises(ValueError):
        ScaleParams(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        ScaleParams(0.1, 0.1, 0.1, vartheta=0.3)


def test_xi_derivative_exact_on_polynomials():
    g = VelocityGrid(8)
    x = g.xi
    f = x[:, 0] ** 2 * x[:, 1] * g.sqrt_mu
    d = xi_derivative(g, f, 0)
    exact = (2 * x[:, 0] * x[:, 1] - 0.5 * x[:, 0] ** 3 * x[:, 1]) * g.sqrt_mu
    assert np.abs(d - exact).max() < 1e-12


def test_material_derivative_of_gradient(flow, fields):
    eu, ax = flow
    sp = eu.sp
    k, dt = 20, eu.dt
    d12 = lambda j: sp.inv(sp.ik1 * sp.velocity(eu.spectra[j])[1])
    dt_fd = (d12(k - 2) - 8 * d12(k - 1) + 8 * d12(k + 1) - d12(k + 2)) / (12 * dt)
    adv = fields["u_0"] * fields.spectral_derivative(fields["du_01"], 0) + fields["u_1"] * fields.spectral_derivative(fields["du_01"], 1)
    assert np.abs(dt_fd + adv - fields["Dtdu_01"]).max() < 1e-6


def test_decomposition_additivity(fields, ops12):
    sc = ScaleParams(0.01, 0.2, 0.1)
    pd = assemble_expansion(fields, sc, (3, 5), ops12)
    total = sum(pd.parts[k] for k in pd.parts)
    assert np.abs(total - pd.F.values).max() <= 1e-13 * np.abs(pd.F.values).max()
    # mass: mu and the scalar corrections carry it, the others are orthogonal to 1
    g = pd.F.grid
    mass = g.integrate(pd.F.values)
    expect = 1 + sc.eps**2 * fields["p"][3, 5] + sc.eps**2 * sc.kappa * fields["pt"][3, 5]
    assert abs(mass - expect) < 1e-13
    with pytest.raises(MissingOperatorCache):
        assemble_expansion(fields, sc, (0, 0), None)


def test_moment_identity(fields, ops12):
    for eps, kappa in ((0.05, 0.3), (1e-6, 0.01), (1e-40, 1e-13)):
        sc = ScaleParams(eps, kappa, 0.1)
        u1, u2, w = kinetic_moments(fields, sc, ops12)
        m1, m2 = moment_identity(fields, sc)
        assert max(np.abs(u1 - m1).max(), np.abs(u2 - m2).max()) < 1e-12
        sp = fields.spectral_derivative
        assert np.abs(w - (sp(m2, 0) - sp(m1, 1))).max() < 1e-10


def test_moment_of_remainder(fields, ops12):
    sc = ScaleParams(0.01, 0.2, 0.1)
    g = ops12.grid
    fR = np.broadcast_to(0.7 * g.xi[:, 0] * g.sqrt_mu, (32, 32, g.size))
    u1, u2, _ = kinetic_moments(fields, sc, ops12, f_R=fR)
    m1, m2 = moment_identity(fields, sc)
    assert np.abs(u1 - m1 - 0.7).max() < 1e-12 and np.abs(u2 - m2).max() < 1e-12
    with pytest.raises(MissingOperatorCache):
        kinetic_moments(fields, sc, None)


def test_hydro_cancellation(flow, ops12):
    eu, ax = flow
    hc = hydro_cancellation_check(eu, ax, ops12.eta0, 20)
    hp = hydro_cancellation_check(eu, ax, ops12.eta0, 20, perturb=0.01)
    assert hc.passed
    assert hp.residual >= 100 * hc.residual
    assert hc.div_u < 1e-12 and hc.div_u_tilde < 1e-12
    bad = hydro_cancellation_check(eu, ax, 2 * ops12.eta0, 20)
    assert not bad.passed


def test_residual_structure(fields, ops12):
    nodes = [(3, 5), (10, 20)]
    ratios, epss = [], (0.02, 0.002)
    for eps in epss:
        rep = residual_sources(fields, ScaleParams(eps, 0.1, 0.1), ops12, nodes)
        assert rep.norms["R2_par"] < 1e-8 * rep.norms["R2_perp"]
        ratios.append(rep.norms["dR2_par"] / rep.norms["dR2"])
    slope = math.log(ratios[0] / ratios[1]) / math.log(epss[0] / epss[1])
    assert abs(slope - 1) < 0.05


def test_r3_projections(fields, ops12):
    # <R3, sqrt(mu)> = (eps/kappa) p + eps p~ and <R3, A_01> = -eps (d0 u1 + d1 u0) <A_01, A_01>
    from vortex_limit.hilbert_expansion import _evaluate, _r3_terms

    sc = ScaleParams(0.01, 0.2, 0.1)
    node = (7, 9)
    R3 = _evaluate(_r3_terms(fields, sc, ops12), [node])[0]
    w = ops12.grid.weights
    s = ops12.vec["s"]
    A = ops12.vec["A01"]
    assert abs(w @ (R3 * s) - (sc.eps / sc.kappa * fields["p"][node] + sc.eps * fields["pt"][node])) < 1e-13
    shear = fields["du_01"][node] + fields["du_10"][node]
    assert abs(w @ (R3 * A) + sc.eps * shear * (w @ (A * A))) < 1e-12


def test_residual_csv(tmp_path, fields, ops12):
    rep = residual_sources(fields, ScaleParams(0.01, 0.1, 0.1), ops12, [(0, 0)])
    write_residual_csv(tmp_path / "r.csv", [rep])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "eps,kappa,beta,order,norm,envelope_const"
    assert len(lines) == 7
    with pytest.raises(MissingOperatorCache):
        residual_sources(fields, ScaleParams(0.01, 0.1, 0.1), None)


def test_energy_functionals_closed_forms():
    g = VelocityGrid(8)
    sc = ScaleParams(0.1, 0.25, 0.1)
    n = 8
    hyd = np.broadcast_to(g.sqrt_mu, (n, n, g.size))
    snaps = [RemainderSnapshot(t, hyd) for t in (0.0, 0.5, 1.0)]
    E, D, F = energy_functionals(snaps, sc, g)
    assert np.allclose(E, 1 / sc.kappa**2, rtol=1e-12)
    assert np.abs(D).max() < 1e-20
    assert np.allclose(F, sc.eps * g.sqrt_mu.max())
    B = g.xi[:, 0] * g.xi[:, 1] * g.sqrt_mu
    snaps = [RemainderSnapshot(t, np.broadcast_to(B, (n, n, g.size))) for t in (0.0, 0.5, 1.0)]
    E, D, _ = energy_functionals(snaps, sc, g)
    nuB = g.integrate(nu_eval(np.linalg.norm(g.xi, axis=1), 2 * math.sqrt(2 * math.pi)) * B * B)
    assert np.allclose(D, np.array([0.0, 0.5, 1.0]) * nuB / (sc.eps**2 * sc.kappa**3), rtol=1e-12)
    # spatial derivatives enter with kappa weights
    X = (np.arange(n) / n)[:, None, None]
    wave = np.sin(TP * X) * np.ones((1, n, 1)) * g.sqrt_mu[None, None, :]
    E, _, _ = energy_functionals([RemainderSnapshot(0.0, wave)], sc, g)
    expect = 0.5 * (1 / sc.kappa**2 + TP**2 / sc.kappa + TP**4)
    assert abs(E[0] / expect - 1) < 1e-12
    assert hydro_basis(g).matrix.shape == (g.size, 5)
