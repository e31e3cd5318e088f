"""Viscosity-canceling expansion of the Boltzmann solution around the fluid fields.

At a spatial point x the expansion is

    F = mu + eps^2 p mu - eps^2 kappa grad u : A sqrt(mu)
        + (eps kappa u~ . xi + eps^2 kappa p~) mu + eps f_R sqrt(mu),

with xi = v - eps u(x) and mu the comoving unit Maxwellian. Every kinetic
ingredient is a fixed function of xi, so all of them are built once on one
comoving grid (``ExpansionOperators``) and combined with fluid coefficients
pointwise. A spatial derivative of a kinetic ingredient a(xi) is
-eps (d u_l) d_{xi_l} a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import MissingOperatorCache
from .euler_lagrangian import (
    AuxTrajectory,
    EulerTrajectory,
    _Spectral,
    aux_pressure,
    time_derivatives,
    v_beta_at,
    v_beta_from_records,
)
from .kinetic_ops import (
    BurnettTensor,
    CollisionModel,
    KineticVector,
    VelocityGrid,
    burnett_matrix,
    from_poly,
    CallablePoly,
    gamma_apply,
    he_orthonormal,
    hermite_coefficients,
    hydro_basis,
    nu_eval,
)
from .torus_spectral import GridSpec2D

PLANAR = (0, 1)
PAIRS = ((0, 0), (0, 1), (1, 1))


@dataclass(frozen=True)
class ScaleParams:
    eps: float
    kappa: float
    beta: float
    delta: tuple[float, float, float] = (1.0, 1.0, 1.0)
    vartheta: float = 0.2
    varrho: float = 0.2
    C0: float = 2.0

    def __post_init__(self):
        for name in ("eps", "kappa", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("vartheta", "varrho"):
            v = getattr(self, name)
            if not 0.0 < v < 0.25:
                raise ValueError(f"{name} must lie in (0, 1/4), got {v}")


# ---------------------------------------------------------------------------
# fluid fields


@dataclass
class ExpansionFields:
    """Fluid fields and derivatives on the spatial grid (arrays of shape (n, n)).

    Keys: u_i, du_ij (d_i u_j), ddu_kij (d_k d_i u_j), p, dp_i, ddp_ij, Dtp,
    ut_i, dut_ij, pt, dpt_i, Dtpt, Dtdu_ij (material derivative of d_i u_j).
    """

    grid: GridSpec2D
    eta0: float
    data: dict[str, np.ndarray]
    t: float = 0.0
    v_beta: float = math.nan

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    @classmethod
    def from_spectra(
        cls, grid: GridSpec2D, omega_hat: np.ndarray, ut_hat: np.ndarray | None, eta0: float, t: float = 0.0
    ) -> "ExpansionFields":
        sp = _Spectral.of(grid)
        zero = np.zeros_like(omega_hat)
        vh = np.stack([zero, zero]) if ut_hat is None else ut_hat
        d = time_derivatives(sp, omega_hat, vh, eta0)
        ik = (sp.ik1, sp.ik2)
        out: dict[str, np.ndarray] = {}
        uh, ph, uth, pth = d["u"], d["p"], d["ut"], d["pt"]
        for i in PLANAR:
            out[f"u_{i}"] = sp.inv(uh[i])
            out[f"ut_{i}"] = sp.inv(uth[i])
            out[f"dp_{i}"] = sp.inv(ik[i] * ph)
            out[f"dpt_{i}"] = sp.inv(ik[i] * pth)
            for j in PLANAR:
                out[f"du_{i}{j}"] = sp.inv(ik[i] * uh[j])
                out[f"dut_{i}{j}"] = sp.inv(ik[i] * uth[j])
                out[f"ddp_{i}{j}"] = sp.inv(ik[i] * ik[j] * ph)
                for k in PLANAR:
                    out[f"ddu_{k}{i}{j}"] = sp.inv(ik[k] * ik[i] * uh[j])
        out["p"] = sp.inv(ph)
        out["pt"] = sp.inv(pth)
        u = (out["u_0"], out["u_1"])
        out["Dtp"] = sp.inv(d["dtp"]) + u[0] * out["dp_0"] + u[1] * out["dp_1"]
        out["Dtpt"] = sp.inv(d["dtpt"]) + u[0] * out["dpt_0"] + u[1] * out["dpt_1"]
        for i in PLANAR:
            for j in PLANAR:
                out[f"Dtdu_{i}{j}"] = -sum(out[f"du_{i}{k}"] * out[f"du_{k}{j}"] for k in PLANAR) - out[f"ddp_{i}{j}"]
        rec = v_beta_at(sp, omega_hat, vh, eta0)
        return cls(grid, eta0, out, t, v_beta_from_records([rec]))

    @classmethod
    def from_trajectories(
        cls, euler: EulerTrajectory, aux: AuxTrajectory | None, index: int
    ) -> "ExpansionFields":
        t = float(euler.times[index])
        vh = None if aux is None else aux.u_hats[index]
        eta0 = 0.0 if aux is None else aux.eta0
        return cls.from_spectra(euler.grid, euler.spectra[index], vh, eta0, t)

    @classmethod
    def zero(cls, grid: GridSpec2D, eta0: float = 0.0) -> "ExpansionFields":
        z = np.zeros((grid.n, grid.n // 2 + 1), dtype=complex)
        return cls.from_spectra(grid, z, None, eta0)

    def spectral_derivative(self, values: np.ndarray, axis: int) -> np.ndarray:
        sp = _Spectral.of(self.grid)
        ik = sp.ik1 if axis == 0 else sp.ik2
        return sp.inv(ik * sp.fwd(values))


# ---------------------------------------------------------------------------
# kinetic ingredients


def xi_derivative(grid: VelocityGrid, f: np.ndarray, axis: int) -> np.ndarray:
    """d/dxi_axis of f = sqrt(mu) P with P the tensor Hermite interpolant of f / sqrt(mu)."""
    n = grid.n_v
    c = hermite_coefficients(grid, f * grid.sqrt_mu)
    x = grid.axis[0]
    V = he_orthonormal(x, n - 1)
    Dv = np.zeros_like(V)
    Dv[1:] = V[:-1] * np.sqrt(np.arange(1, n))[:, None]
    mats = [V, V, V]
    mats[axis] = Dv
    dP = np.einsum("abc,ai,bj,ck->ijk", c, *mats).ravel()
    return grid.sqrt_mu * dP - 0.5 * grid.xi[:, axis] * f


@dataclass
class ExpansionOperators:
    """Kinetic ingredients of the expansion on one comoving grid (U = 0)."""

    model: CollisionModel
    burnett: BurnettTensor
    vec: dict[str, np.ndarray]
    gamma: dict[tuple[str, str], np.ndarray]
    sphere: tuple[int, int]

    @property
    def grid(self) -> VelocityGrid:
        return self.model.grid

    @property
    def eta0(self) -> float:
        return self.burnett.eta0

    def G(self, a: str, b: str) -> np.ndarray:
        return self.gamma[(a, b)] if (a, b) in self.gamma else self.gamma[(b, a)]

    def P(self, f: np.ndarray) -> np.ndarray:
        M = self.hydro
        return M @ (M.T @ (self.grid.weights * f))

    @property
    def hydro(self) -> np.ndarray:
        if "_hydro" not in self.vec:
            self.vec["_hydro"] = hydro_basis(self.grid).matrix
        return self.vec["_hydro"]

    def dxi(self, name: str, axis: int) -> np.ndarray:
        key = f"d{axis}:{name}"
        if key not in self.vec:
            base = self.vec[name] if name in self.vec else self.gamma_by_name(name)
            self.vec[key] = xi_derivative(self.grid, base, axis)
        return self.vec[key]

    def gamma_by_name(self, name: str) -> np.ndarray:
        a, b = name[2:-1].split(",")
        return self.G(a, b)


def _vecname_A(i: int, j: int) -> str:
    i, j = min(i, j), max(i, j)
    return f"A{i}{j}"


def build_expansion_operators(
    model: CollisionModel,
    sphere: tuple[int, int] = (12, 24),
) -> ExpansionOperators:
    """Precompute every kinetic object used by the residual sources (U = 0 grid)."""
    grid = model.grid
    if any(grid.U):
        raise ValueError("expansion operators are built on the unshifted grid")
    bt = burnett_matrix(model)
    s = grid.sqrt_mu
    xi = grid.xi
    vec: dict[str, np.ndarray] = {"s": s.copy()}
    kv: dict[str, KineticVector] = {}
    for i in PLANAR:
        p = CallablePoly(lambda X, i=i: X[..., i], 1)
        kv[f"e{i}"] = from_poly(grid, p)
        vec[f"e{i}"] = kv[f"e{i}"].values
    for i, j in PAIRS:
        name = f"A{i}{j}"
        kv[name] = bt.A[i][j]
        vec[name] = bt.A[i][j].values
        vec[f"X{i}{j}"] = xi[:, i] * xi[:, j] * s
        vec[f"B{i}{j}"] = (xi[:, i] * xi[:, j] - (np.sum(xi**2, axis=1) / 3.0 if i == j else 0.0)) * s
    M = hydro_basis(grid).matrix
    vec["_hydro"] = M

    def comp(f):
        return f - M @ (M.T @ (grid.weights * f))

    for k in PLANAR:
        for i, j in PAIRS:
            vec[f"T{k}{i}{j}"] = comp(xi[:, k] * vec[f"A{i}{j}"])
    for i in PLANAR:
        for j in PLANAR:
            for k in PLANAR:
                vec[f"C{i}{j}{k}"] = comp(xi[:, i] * xi[:, j] * xi[:, k] * s)
    ops = ExpansionOperators(model, bt, vec, {}, sphere)
    # derivatives of the density-type ingredients d_{xi_l}(A sqrt(mu)) / sqrt(mu)
    for i, j in PAIRS:
        A = vec[f"A{i}{j}"]
        for l in PLANAR:
            vec[f"dA{l}{i}{j}"] = xi_derivative(grid, A, l) - 0.5 * xi[:, l] * A
    names = ["e0", "e1", "A00", "A01", "A11"]
    for a_i, a in enumerate(names):
        for b in names[a_i:]:
            ops.gamma[(a, b)] = gamma_apply(kv[a], kv[b], sphere=sphere).values
    return ops


# ---------------------------------------------------------------------------
# point distributions and moments


PART_NAMES = ("mu", "eps2_p_mu", "A_term", "u_tilde_term", "p_tilde_term", "f_R_term")


@dataclass
class PointDistribution:
    x: tuple[float, float]
    F: KineticVector
    parts: dict[str, np.ndarray]


def _coeff_at(fields: ExpansionFields, key: str, idx: tuple[int, int]) -> float:
    return float(fields[key][idx])


def assemble_expansion(
    fields: ExpansionFields,
    scales: ScaleParams,
    node: tuple[int, int],
    ops: ExpansionOperators | None,
    f_R: np.ndarray | None = None,
) -> PointDistribution:
    """F at spatial grid node ``node`` on the grid comoving with eps u(x)."""
    if ops is None:
        raise MissingOperatorCache("assemble_expansion needs ExpansionOperators")
    e, k = scales.eps, scales.kappa
    v = ops.vec
    U = (e * _coeff_at(fields, "u_0", node), e * _coeff_at(fields, "u_1", node), 0.0)
    grid = VelocityGrid(ops.grid.n_v, U)
    mu = ops.grid.mu
    s = v["s"]
    du = {(i, j): _coeff_at(fields, f"du_{i}{j}", node) for i in PLANAR for j in PLANAR}
    A_sum = sum((du[i, j] + (du[j, i] if i != j else 0.0)) * v[f"A{i}{j}"] for i, j in PAIRS)
    xi = ops.grid.xi
    ut = sum(_coeff_at(fields, f"ut_{i}", node) * xi[:, i] for i in PLANAR)
    parts = {
        "mu": mu.copy(),
        "eps2_p_mu": e**2 * _coeff_at(fields, "p", node) * mu,
        "A_term": -(e**2) * k * A_sum * s,
        "u_tilde_term": e * k * ut * mu,
        "p_tilde_term": e**2 * k * _coeff_at(fields, "pt", node) * mu,
        "f_R_term": np.zeros_like(mu) if f_R is None else e * np.asarray(f_R, dtype=float) * s,
    }
    total = np.zeros_like(mu)
    for name in PART_NAMES:
        total = total + parts[name]
    return PointDistribution((float(fields.grid.x[node[0]]), float(fields.grid.x[node[1]])), KineticVector(grid, total, "F"), parts)


def kinetic_moments(
    fields: ExpansionFields,
    scales: ScaleParams,
    ops: ExpansionOperators | None,
    f_R: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u_B1, u_B2, omega_B) on the spatial grid.

    u_B = (1/eps) int (F - M_{1,0,1}) v_bar dv by comoving grid quadrature at every
    node. Quadrature is linear, so each expansion part is integrated once and
    recombined with its pointwise coefficient. ``f_R`` has shape (n, n, N_v).
    """
    if ops is None:
        raise MissingOperatorCache("kinetic_moments needs ExpansionOperators")
    e, k = scales.eps, scales.kappa
    g = ops.grid
    w = g.weights
    xi = g.xi
    v = ops.vec
    s = v["s"]
    mu = g.mu
    n = fields.grid.n
    u = [fields[f"u_{i}"] for i in PLANAR]
    U = [e * ui for ui in u]

    nv = g.n_v

    def odd(dens, a):
        # odd part along xi_a: the symmetric nodes make even parts cancel exactly
        c = dens.reshape(nv, nv, nv)
        return 0.5 * (c - np.flip(c, axis=a)).ravel()

    def mom(dens):
        # (int dens, int xi_1 dens, int xi_2 dens)
        return float(w @ dens), float(w @ (xi[:, 0] * odd(dens, 0))), float(w @ (xi[:, 1] * odd(dens, 1)))

    parts = []  # (coefficient field, moment triple)
    parts.append((np.ones((n, n)), mom(mu)))
    parts.append((e**2 * fields["p"], mom(mu)))
    for i, j in PAIRS:
        c = fields[f"du_{i}{j}"] + (fields[f"du_{j}{i}"] if i != j else 0.0)
        parts.append((-(e**2) * k * c, mom(v[f"A{i}{j}"] * s)))
    for i in PLANAR:
        parts.append((e * k * fields[f"ut_{i}"], mom(xi[:, i] * mu)))
    parts.append((e**2 * k * fields["pt"], mom(mu)))
    ub = [np.zeros((n, n)), np.zeros((n, n))]
    for coef, (m0, m1, m2) in parts:
        for a, ma in enumerate((m1, m2)):
            ub[a] = ub[a] + coef * (ma + U[a] * m0)
    if f_R is not None:
        fr = np.asarray(f_R, dtype=float) * s
        m0 = fr @ w
        ub[0] = ub[0] + e * (fr @ (w * xi[:, 0]) + U[0] * m0)
        ub[1] = ub[1] + e * (fr @ (w * xi[:, 1]) + U[1] * m0)
    # M_{1,0,1} has zero velocity moment, so nothing is subtracted; the mu part
    # contributes eps u exactly and no 1/eps cancellation occurs
    ub = [x / e for x in ub]
    sp = _Spectral.of(fields.grid)
    h1, h2 = sp.fwd(ub[0]), sp.fwd(ub[1])
    omega = sp.inv(sp.ik1 * h2 - sp.ik2 * h1)
    return ub[0], ub[1], omega


def moment_identity(fields: ExpansionFields, scales: ScaleParams) -> tuple[np.ndarray, np.ndarray]:
    """u + eps^2 p u + kappa u~ + eps^2 kappa p~ u."""
    e, k = scales.eps, scales.kappa
    out = []
    for i in PLANAR:
        u = fields[f"u_{i}"]
        out.append(u + e**2 * fields["p"] * u + k * fields[f"ut_{i}"] + e**2 * k * fields["pt"] * u)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# residual sources


def _r1_terms(fields: ExpansionFields, scales: ScaleParams, ops: ExpansionOperators):
    """(coefficient field, kinetic ingredient) pairs of R1 as an f-type function."""
    e, k = scales.eps, scales.kappa
    v = ops.vec
    F = fields
    T = []
    du = lambda i, j: F[f"du_{i}{j}"]
    for i in PLANAR:
        for j in PLANAR:
            X = v[f"X{min(i, j)}{max(i, j)}"]
            B = v[f"B{min(i, j)}{max(i, j)}"]
            A = f"A{min(i, j)}{max(i, j)}"
            # e3: p d_i u_j xi_i xi_j sqrt(mu)
            T.append((F["p"] * du(i, j), X))
            # e3kappa1: p~ grad u : xi xi sqrt(mu)
            T.append((k * F["pt"] * du(i, j), X))
            # e3kappa1: d_i u_j xi_m d_m u_l d_{xi_l}(A_ji sqrt(mu)) / sqrt(mu)
            for m in PLANAR:
                for l in PLANAR:
                    T.append((k * du(i, j) * du(m, l), ops.grid.xi[:, m] * v[f"dA{l}{min(i, j)}{max(i, j)}"]))
            # kappa D_t(-grad u : A sqrt(mu)) / sqrt(mu)
            T.append((-k * F[f"Dtdu_{i}{j}"], v[A]))
            for l in PLANAR:
                T.append((-k * e * du(i, j) * F[f"dp_{l}"], v[f"dA{l}{min(i, j)}{max(i, j)}"]))
            # -(p + kappa p~) grad u : L A
            T.append((-(F["p"] + k * F["pt"]) * du(i, j), B))
            # -kappa Gamma(grad u : A, grad u : A)
            for a in PLANAR:
                for b in PLANAR:
                    g = ops.G(A, f"A{min(a, b)}{max(a, b)}")
                    T.append((-k * du(i, j) * du(a, b), g))
    s = v["s"]
    # e3kappa1: u~ . (grad p - (grad p . xi) xi) sqrt(mu)
    T.append((k * (F["ut_0"] * F["dp_0"] + F["ut_1"] * F["dp_1"]), s))
    for a in PLANAR:
        for b in PLANAR:
            T.append((-k * F[f"ut_{a}"] * F[f"dp_{b}"], v[f"X{min(a, b)}{max(a, b)}"]))
    # D_t(p mu) / sqrt(mu) and kappa D_t(p~ mu) / sqrt(mu)
    T.append((F["Dtp"] + k * F["Dtpt"], s))
    for l in PLANAR:
        T.append((-e * (F["p"] + k * F["pt"]) * F[f"dp_{l}"], v[f"e{l}"]))
    return T


def _r2_terms(fields: ExpansionFields, scales: ScaleParams, ops: ExpansionOperators):
    e = scales.eps
    v = ops.vec
    F = fields
    T = []
    for i in PLANAR:
        for j in PLANAR:
            T.append((F[f"dut_{i}{j}"], v[f"B{min(i, j)}{max(i, j)}"]))
            T.append((-F[f"ut_{i}"] * F[f"ut_{j}"], ops.G(f"e{i}", f"e{j}")))
            for l in PLANAR:
                for m in PLANAR:
                    # 2 eps Gamma(u~ . xi sqrt(mu), grad u : A)
                    T.append((2.0 * e * F[f"ut_{i}"] * F[f"du_{l}{m}"], ops.G(f"e{i}", f"A{min(l, m)}{max(l, m)}")))
            for kk in PLANAR:
                # -eps grad^2 u : (I - P)(xi A)
                T.append((-e * F[f"ddu_{kk}{i}{j}"], v[f"T{kk}{min(i, j)}{max(i, j)}"]))
                # eps u~_j d_i u_k (I - P)(xi_i xi_j xi_k sqrt(mu))
                T.append((e * F[f"ut_{j}"] * F[f"du_{i}{kk}"], v[f"C{i}{j}{kk}"]))
    return T


def _r3_terms(fields: ExpansionFields, scales: ScaleParams, ops: ExpansionOperators):
    e, k = scales.eps, scales.kappa
    v = ops.vec
    F = fields
    T = [(2.0 * F["ut_0"], v["e0"]), (2.0 * F["ut_1"], v["e1"])]
    T.append(((e / k) * F["p"] + e * F["pt"], v["s"]))
    for i, j in PAIRS:
        c = F[f"du_{i}{j}"] + (F[f"du_{j}{i}"] if i != j else 0.0)
        T.append((-e * c, v[f"A{i}{j}"]))
    return T


def _evaluate(terms, nodes: Sequence[tuple[int, int]]) -> np.ndarray:
    """Values of sum_a c_a(x) m_a at the given spatial nodes, shape (len(nodes), N_v)."""
    idx = tuple(np.array(nodes).T)
    C = np.stack([c[idx] for c, _ in terms], axis=1)
    M = np.stack([m for _, m in terms], axis=0)
    return C @ M


def _evaluate_dx(terms, fields: ExpansionFields, scales: ScaleParams, ops: ExpansionOperators, nodes, axis: int):
    """d/dx_axis of sum_a c_a(x) m_a(xi) with xi = v - eps u(x)."""
    idx = tuple(np.array(nodes).T)
    dC = np.stack([fields.spectral_derivative(c, axis)[idx] for c, _ in terms], axis=1)
    M = np.stack([m for _, m in terms], axis=0)
    out = dC @ M
    C = np.stack([c[idx] for c, _ in terms], axis=1)
    g = ops.grid
    for l in PLANAR:
        dM = np.stack([xi_derivative(g, m, l) for _, m in terms], axis=0)
        out -= scales.eps * fields[f"du_{axis}{l}"][idx][:, None] * (C @ dM)
    return out


@dataclass
class ResidualReport:
    eps: float
    kappa: float
    beta: float
    norms: dict[str, float]
    envelope: dict[str, float]
    v_beta: float

    def rows(self) -> list[tuple]:
        out = []
        for order in ("R1", "R2_perp", "R2_par", "R3", "dR2", "dR2_par"):
            out.append((self.eps, self.kappa, self.beta, order, self.norms[order], self.envelope.get(order, math.nan)))
        return out


def _l2v(g: VelocityGrid, vals: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(vals**2 @ g.weights, 0.0))


def default_nodes(grid: GridSpec2D, count: int = 16) -> list[tuple[int, int]]:
    step = max(grid.n // int(math.sqrt(count)), 1)
    return [(i, j) for i in range(0, grid.n, step) for j in range(0, grid.n, step)]


def residual_sources(
    fields: ExpansionFields,
    scales: ScaleParams,
    ops: ExpansionOperators | None,
    nodes: Sequence[tuple[int, int]] | None = None,
) -> ResidualReport:
    """Norms of R1, (I-P)R2, P R2, R3 and of the first x-derivative of R2.

    Norms are plain L^2_v at each sampled node, maximized over nodes. Envelope
    constants are max |R| exp(varrho |xi|^2) / V(beta) over nodes and velocities.
    """
    if ops is None:
        raise MissingOperatorCache("residual_sources needs ExpansionOperators")
    g = ops.grid
    nodes = default_nodes(fields.grid) if nodes is None else list(nodes)
    R1 = _evaluate(_r1_terms(fields, scales, ops), nodes)
    t2 = _r2_terms(fields, scales, ops)
    R2 = _evaluate(t2, nodes)
    R3 = _evaluate(_r3_terms(fields, scales, ops), nodes)
    M = ops.hydro
    w = g.weights

    def P(vals):
        return (vals * w) @ M @ M.T

    R2p = P(R2)
    dR2 = np.concatenate([_evaluate_dx(t2, fields, scales, ops, nodes, a) for a in PLANAR])
    dR2p = P(dR2)
    norms = {
        "R1": float(_l2v(g, R1).max()),
        "R2_perp": float(_l2v(g, R2 - R2p).max()),
        "R2_par": float(_l2v(g, R2p).max()),
        "R3": float(_l2v(g, R3).max()),
        "dR2": float(_l2v(g, dR2).max()),
        "dR2_par": float(_l2v(g, dR2p).max()),
    }
    V = fields.v_beta
    env = {}
    gauss = np.exp(scales.varrho * np.sum(g.xi**2, axis=1))
    for name, vals in (("R1", R1), ("R2_perp", R2 - R2p), ("R3", R3)):
        env[name] = float(np.abs(vals * gauss).max() / V) if V > 0 else 0.0
    return ResidualReport(scales.eps, scales.kappa, scales.beta, norms, env, V)


def write_residual_csv(path: str | Path, reports: Sequence[ResidualReport]) -> None:
    lines = ["eps,kappa,beta,order,norm,envelope_const"]
    for r in reports:
        for row in r.rows():
            lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# hydrodynamic cancellation at order eps^2 kappa


@dataclass
class HydroCheck:
    residual: float
    discretization_error: float
    div_u: float
    div_u_tilde: float

    @property
    def passed(self) -> bool:
        return self.residual <= 10.0 * self.discretization_error


def _central(hats: Sequence[np.ndarray], k: int, h: float, stride: int) -> np.ndarray:
    a = lambda j: hats[k + j * stride]
    return (a(-2) - 8.0 * a(-1) + 8.0 * a(1) - a(2)) / (12.0 * h * stride)


def hydro_cancellation_check(
    euler: EulerTrajectory,
    aux: AuxTrajectory,
    eta0: float,
    index: int,
    perturb: float = 0.0,
    nodes: Sequence[tuple[int, int]] | None = None,
) -> HydroCheck:
    """Max over nodes of |d_t u~ + u.grad u~ + u~.grad u - eta0 Lap u + grad p~|.

    d_t u~ is measured from the stored auxiliary snapshots (fourth-order central
    difference); the discretization error estimate is the change of that
    difference when the stencil spacing doubles, plus a roundoff floor.
    ``perturb`` scales u~ by (1 + perturb) everywhere to probe sensitivity.
    """
    if index < 4 or index + 4 >= len(aux.u_hats):
        raise ValueError("index needs four stored neighbours on each side")
    if abs(aux.dt - euler.dt) > 1e-12 or abs(aux.t0 - euler.t0) > 1e-12:
        raise ValueError("aux and Euler trajectories must share their time samples")
    sp = _Spectral.of(euler.grid)
    fac = 1.0 + perturb
    hats = [fac * h for h in aux.u_hats]
    vh = hats[index]
    uh = np.stack(sp.velocity(euler.spectra[index]))
    pt = aux_pressure(sp, uh, vh)
    ik = (sp.ik1, sp.ik2)
    lap = -4.0 * math.pi**2 * sp.k2sum

    def bracket(dt_vh):
        out = []
        for i in PLANAR:
            adv = sp.advect(uh[0], uh[1], vh[i]) + sp.advect(vh[0], vh[1], uh[i])
            out.append(sp.inv(dt_vh[i] + adv - eta0 * lap * uh[i] + ik[i] * pt))
        return np.stack(out)

    B1 = bracket(_central(hats, index, aux.dt, 1))
    B2 = bracket(_central(hats, index, aux.dt, 2))
    if nodes is None:
        sel = (slice(None), slice(None))
    else:
        sel = tuple(np.array(nodes).T)
    mag = lambda B: np.sqrt(B[0][sel] ** 2 + B[1][sel] ** 2)
    res = float(mag(B1).max())
    scale = float(np.abs(sp.inv(eta0 * lap * uh[0])).max()) + float(np.abs(sp.inv(uh[0])).max())
    est = float(mag(B1 - B2).max()) / 15.0 + 1e-12 * max(scale, 1.0)
    div_u = float(np.abs(sp.inv(sp.ik1 * uh[0] + sp.ik2 * uh[1])).max())
    div_ut = float(np.abs(sp.inv(sp.ik1 * vh[0] + sp.ik2 * vh[1])).max())
    return HydroCheck(res, est, div_u, div_ut)


# ---------------------------------------------------------------------------
# energy functionals of a remainder


@dataclass
class RemainderSnapshot:
    t: float
    values: np.ndarray  # (n, n, N_v), f-type values on the comoving grid


def _spatial_derivs(values: np.ndarray, s: int) -> list[np.ndarray]:
    if s == 0:
        return [values]
    n = values.shape[0]
    k = np.fft.fftfreq(n, 1.0 / n)
    ny = n // 2
    ik = 2j * math.pi * np.where(np.abs(k) == ny, 0.0, k)
    c = np.fft.fft2(values, axes=(0, 1))
    out = []
    for a in range(s + 1):
        b = s - a
        m = (ik[:, None] ** a) * (ik[None, :] ** b)
        out.append(np.fft.ifft2(c * m[:, :, None], axes=(0, 1)).real)
    return out


def energy_functionals(
    snapshots: Sequence[RemainderSnapshot],
    scales: ScaleParams,
    vgrid: VelocityGrid,
    model: CollisionModel | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(E, D, F) series over the snapshot times.

    E(t) = sum_{s<=2} sup_{t'<=t} ||kappa^{-1+s/2} d^s f_R||^2,
    D(t) = sum_{s<=2} int_0^t ||eps^{-1} kappa^{-3/2+s/2} nu^{1/2} (I-P) d^s f_R||^2,
    F(t) = eps sup_{t'<=t} max |f_R|.
    """
    e, k = scales.eps, scales.kappa
    w = vgrid.weights
    M = hydro_basis(vgrid).matrix
    nu = nu_eval(np.sqrt(np.sum(vgrid.xi**2, axis=1)), model if model is not None else 2.0 * math.sqrt(2.0 * math.pi))
    times = np.array([s.t for s in snapshots])
    e_terms = np.zeros((len(snapshots), 3))
    d_terms = np.zeros((len(snapshots), 3))
    finf = np.zeros(len(snapshots))
    for a, snap in enumerate(snapshots):
        vals = np.asarray(snap.values, dtype=float)
        finf[a] = float(np.abs(vals).max())
        for s in range(3):
            for dv in _spatial_derivs(vals, s):
                e_terms[a, s] += k ** (2 * (-1.0 + s / 2.0)) * float(np.mean(dv**2 @ w))
                comp = dv - ((dv * w) @ M) @ M.T
                d_terms[a, s] += (e**-2) * k ** (2 * (-1.5 + s / 2.0)) * float(np.mean(comp**2 @ (w * nu)))
    E = np.maximum.accumulate(e_terms, axis=0).sum(axis=1)
    dsum = d_terms.sum(axis=1)
    D = np.zeros(len(snapshots))
    if len(snapshots) > 1:
        D[1:] = np.cumsum(0.5 * (dsum[1:] + dsum[:-1]) * np.diff(times))
    F = e * np.maximum.accumulate(finf)
    return E, D, F
