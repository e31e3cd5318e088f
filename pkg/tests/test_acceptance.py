"""Acceptance criteria 1-8; each test prints one PASS/FAIL line."""

import hashlib
import json
import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from vortex_limit.harness_cli import parse_config_text, run

TP = 2 * math.pi
DIGESTS: dict[int, str] = {}
OUT: dict[str, object] = {}


def _digest(values) -> str:
    return hashlib.sha256(json.dumps(values, sort_keys=True, default=repr).encode()).hexdigest()


def _report(k, label, checks, elapsed, limit):
    failed = [n for n, ok in checks.items() if not ok]
    if limit is not None and elapsed >= limit:
        failed.append(f"runtime {elapsed:.0f}s >= {limit}s")
    status = "FAIL" if failed else "PASS"
    detail = f"{label} ({elapsed:.1f}s)" + (f" failed: {', '.join(failed)}" if failed else "")
    line = f"{status} criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failed, line


def _cli(experiment, text, out):
    cfg = parse_config_text(f"[run]\nexperiment = {experiment}\nseed = 0\n" + text)
    man = run(cfg, out)
    values = {"files": man.files, "constants": man.constants, "checks": man.checks}
    return dict(man.checks), values


# ---------------------------------------------------------------------------
# criterion bodies: each returns (checks, values) and is rerun for determinism


def crit1(_out):
    from vortex_limit.torus_spectral import (
        GreenKernelEval,
        GridSpec2D,
        ScalarField2D,
        biot_savart,
        biot_savart_kernel,
        curl,
        evaluate,
    )

    g = GridSpec2D(32)
    X, Y = g.mesh
    u = biot_savart(ScalarField2D.from_function(g, lambda x, y: np.sin(TP * x) * np.sin(TP * y)))
    e_single = max(
        np.abs(u.u1.values - np.sin(TP * X) * np.cos(TP * Y) / (4 * math.pi)).max(),
        np.abs(u.u2.values + np.cos(TP * X) * np.sin(TP * Y) / (4 * math.pi)).max(),
    )
    u = biot_savart(ScalarField2D.from_function(g, lambda x, y: np.cos(TP * (x + 2 * y)) + 0.25 * np.sin(3 * TP * x)))
    s = np.sin(TP * (X + 2 * Y))
    e_double = max(
        np.abs(u.u1.values + s / (5 * math.pi)).max(),
        np.abs(u.u2.values - s / (10 * math.pi) + 0.25 * np.cos(3 * TP * X) / (6 * math.pi)).max(),
    )
    rng = np.random.default_rng(0)
    c = np.zeros((32, 32), complex)
    c[1:6, 1:6] = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    vals = np.fft.ifft2(c).real
    w = ScalarField2D(g, vals - vals.mean())
    e_round = float(np.abs(curl(biot_savart(w)).values - w.values).max() / np.abs(w.values).max())
    w = ScalarField2D.from_function(g, lambda x, y: np.exp(-20 * (x**2 + y**2)))
    w = ScalarField2D(g, w.values - w.values.mean())
    pts = np.array([[0.1, 0.05], [-0.3, 0.2], [0.37, -0.41]])
    k = biot_savart_kernel(w, pts, GreenKernelEval())
    us = biot_savart(w)
    e_kernel = float(np.abs(k - np.stack([evaluate(us.u1, pts), evaluate(us.u2, pts)], axis=-1)).max())
    values = dict(single=e_single, double=e_double, round_trip=e_round, kernel=e_kernel)
    checks = {
        "single_mode_1e-10": e_single <= 1e-10,
        "double_mode_1e-10": e_double <= 1e-10,
        "curl_round_trip_1e-10": e_round <= 1e-10,
        "kernel_vs_spectral_1e-6": e_kernel <= 1e-6,
    }
    return checks, values


def crit2(out):
    return _cli("euler-run", "[grid]\nn = 256\nT = 1.0\nstore_every = 8\ninitial = modes\n", out)


def crit3(out):
    return _cli("flow-run", "[grid]\nn = 128\nT = 0.5\ninitial = modes\n", out)


def crit4(_out):
    from vortex_limit.kinetic_ops import (
        CallablePoly,
        KineticVector,
        build_L,
        burnett_matrix,
        collision_Q_direct,
        from_poly,
        hydro_basis,
        project_P,
    )

    model = build_L((0.0, 0.0, 0.0), n_v=20)
    g = model.grid
    basis = hydro_basis(g)
    gram = float(np.abs(basis.gram - np.eye(5)).max())
    null = max(model.apply(v).norm() for v in basis.vectors)
    cubic = from_poly(g, CallablePoly(lambda X: X[..., 0] ** 3, 3))
    pc, _ = project_P(cubic, basis)
    e_cubic = float(np.abs(pc.values - 3 * g.xi[:, 0] * g.sqrt_mu).max())

    def mk(c):
        p = CallablePoly(lambda X: 1 + c[0] * X[..., 0] * X[..., 1] + c[1] * X[..., 2] ** 2 + c[2] * X[..., 0] ** 3 + c[3] * X[..., 1], 3)
        return KineticVector(g, p(g.xi) * g.mu, "F", p)

    F, G = mk([0.1, -0.2, 0.05, 0.3]), mk([-0.15, 0.1, 0.2, -0.1])
    Q = collision_Q_direct(F, G)
    scale = math.sqrt(g.integrate(F.values**2 / g.mu) * g.integrate(G.values**2 / g.mu))
    invariants = (np.ones(g.size), g.xi[:, 0], g.xi[:, 1], g.xi[:, 2], np.sum(g.xi**2, axis=1))
    e_inv = max(abs(g.integrate(Q.values * phi)) for phi in invariants) / scale
    one = CallablePoly(lambda X: np.ones(X.shape[:-1]), 0)
    M = KineticVector(g, g.mu, "F", one)
    QM, _, loss = collision_Q_direct(M, M, return_parts=True)
    e_qmm = float(np.abs(QM.values).max() / np.abs(loss).max())
    bt = burnett_matrix(model)
    ratio = bt.inner_L(0, 0, 0, 0) / bt.inner_L(0, 1, 0, 1)
    off = max(abs(bt.inner_L(0, 0, 0, 1)), abs(bt.inner_L(0, 1, 1, 2)), abs(bt.inner_L(0, 0, 1, 2)))
    eta16 = burnett_matrix(build_L((0.0, 0.0, 0.0), n_v=16)).eta0
    eta24 = burnett_matrix(build_L((0.0, 0.0, 0.0), n_v=24)).eta0
    drift = abs(eta24 / eta16 - 1)
    values = dict(
        gram=gram, null=null, cubic=e_cubic, invariance=e_inv, qmm=e_qmm, ratio=ratio, off=off,
        eta0=bt.eta0, eta16=eta16, eta24=eta24, c1=model.c1, c1_residual=model.c1_residual,
    )
    checks = {
        "gram_1e-9": gram <= 1e-9,
        "null_space_1e-8": null <= 1e-8,
        "cubic_projection_1e-8": e_cubic <= 1e-8,
        "collision_invariance_1e-6": e_inv <= 1e-6,
        "Q(M,M)_1e-6": e_qmm <= 1e-6,
        "ratio_4/3_1e-4": abs(ratio - 4 / 3) <= 1e-4,
        "off_pattern_1e-6_eta0": off <= 1e-6 * bt.eta0,
        "eta0_16_to_24_2pct": drift <= 0.02,
        "nu_fit_1e-4": model.c1_residual <= 1e-4,
    }
    return checks, values


def crit5(_out):
    from vortex_limit.euler_lagrangian import AuxState, run_aux, run_euler
    from vortex_limit.hilbert_expansion import (
        ExpansionFields,
        ScaleParams,
        assemble_expansion,
        build_expansion_operators,
        hydro_cancellation_check,
        kinetic_moments,
        moment_identity,
        residual_sources,
    )
    from vortex_limit.kinetic_ops import build_L
    from vortex_limit.torus_spectral import GridSpec2D, ScalarField2D

    ops = build_expansion_operators(build_L((0.0, 0.0, 0.0), n_v=12))
    g = GridSpec2D(32)
    w0 = ScalarField2D.from_function(g, lambda x, y: np.sin(TP * x) * np.sin(TP * y) + 0.5 * np.cos(TP * (x + 2 * y)))
    eu = run_euler(w0, 0.2, 0.005)
    ax = run_aux(AuxState.zero(g, ops.eta0), eu, 0.005, 40)
    fields = ExpansionFields.from_trajectories(eu, ax, 20)
    sc = ScaleParams(0.01, 0.2, 0.1)
    add = 0.0
    for node in ((3, 5), (16, 9), (30, 1)):
        pd = assemble_expansion(fields, sc, node, ops)
        total = sum(pd.parts.values())
        add = max(add, float(np.abs(total - pd.F.values).max() / np.abs(pd.F.values).max()))
    ident = 0.0
    for eps, kappa in ((0.05, 0.3), (1e-3, 0.1), (1e-6, 0.01)):
        s = ScaleParams(eps, kappa, 0.1)
        u1, u2, _ = kinetic_moments(fields, s, ops)
        m1, m2 = moment_identity(fields, s)
        ident = max(ident, float(np.abs(u1 - m1).max()), float(np.abs(u2 - m2).max()))
    hc = hydro_cancellation_check(eu, ax, ops.eta0, 20)
    hp = hydro_cancellation_check(eu, ax, ops.eta0, 20, perturb=0.01)
    nodes = [(3, 5), (10, 20)]
    epss = (0.02, 0.002)
    q = []
    for eps in epss:
        rep = residual_sources(fields, ScaleParams(eps, 0.1, 0.1), ops, nodes)
        q.append(rep.norms["dR2_par"] / rep.norms["dR2"])
    slope = math.log(q[0] / q[1]) / math.log(epss[0] / epss[1])
    values = dict(
        additivity=add, identity=ident, hydro=hc.residual, disc=hc.discretization_error,
        sensitivity=hp.residual / hc.residual, slope=slope, eta0=ops.eta0,
    )
    checks = {
        "additivity_1e-13": add <= 1e-13,
        "moment_identity_1e-9": ident <= 1e-9,
        "hydro_cancellation_10x_disc": hc.passed,
        "perturbation_100x": hp.residual >= 100 * hc.residual,
        "slope_1_pm_0.15": abs(slope - 1) <= 0.15,
    }
    return checks, values


def crit6(out):
    from vortex_limit.convergence_rates import C_OSGOOD, RateInputs, osgood_bound, rate_velocity

    inp = RateInputs(m=0, T=0.7, u0_l2=0.3, w0_l2=0.8, w0_l3=1.1, w0_yud=0.9)
    M = 1 + 4 * 0.3**2 + 2 * 1.1**2
    closed = 0.0
    for b in (0.2, 0.1, 0.05, 0.025):
        expect = M * ((b * 0.8) ** 2 / M) ** math.exp(-C_OSGOOD * 0.7 * 0.9)
        closed = max(closed, abs(rate_velocity(inp, b) - expect) / expect)
    for t in (0.0, 0.3, 1.0):
        expect = 2.0 * (1e-3 / 2.0) ** math.exp(-C_OSGOOD * t * 0.5)
        closed = max(closed, abs(osgood_bound(2.0, 1e-3, t, C_OSGOOD, 0.5, 0) - expect) / expect)
    checks, values = _cli("rates-sweep", "[rates]\nbetas = 0.2, 0.1, 0.05, 0.025\n", out)
    checks["m0_closed_form_1e-12"] = closed <= 1e-12
    values["closed"] = closed
    return checks, values


CONVERGENCE_CFG = """[grid]
n = 512
store_every = 16
amplitude = 5
[velocity]
n_v = 12
[rates]
T = 0.5
betas = 0.2, 0.1, 0.05, 0.025
p_list = 1, 2
"""


def crit7(out):
    return _cli("convergence", CONVERGENCE_CFG, out)


CRITERIA = {
    1: (crit1, "Biot-Savart closed forms, round trip, kernel", 10),
    2: (crit2, "Euler invariants n=256 T=1", 300),
    3: (crit3, "Lagrangian structure and cross-solver", 300),
    4: (crit4, "kinetic identities n_v=20", 1800),
    5: (crit5, "expansion structure", 1200),
    6: (crit6, "rate layer", None),
    7: (crit7, "convergence experiment n=512 T=0.5", 7200),
}


def _run(k, out):
    fn = CRITERIA[k][0]
    t0 = time.perf_counter()
    checks, values = fn(out)
    return checks, values, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, tmp_path_factory):
    out = tmp_path_factory.mktemp(f"criterion{k}")
    checks, values, elapsed = _run(k, out)
    DIGESTS[k] = _digest(values)
    _report(k, CRITERIA[k][1], checks, elapsed, CRITERIA[k][2])


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path_factory):
    from vortex_limit.kinetic_ops import _kernel_constants, galerkin_blocks

    t0 = time.perf_counter()
    checks = {}
    for k in sorted(CRITERIA):
        galerkin_blocks.cache_clear()
        _kernel_constants.cache_clear()
        _, values, _ = _run(k, tmp_path_factory.mktemp(f"rerun{k}"))
        checks[f"criterion_{k}_identical"] = k in DIGESTS and _digest(values) == DIGESTS[k]
    _report(8, "reruns reproduce byte-identical outputs", checks, time.perf_counter() - t0, None)
