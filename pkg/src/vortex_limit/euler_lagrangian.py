"""Regularized 2D Euler, the viscosity-canceling auxiliary system, and flow maps.

All time stepping is classical RK4 on the pseudo-spectral right-hand side
with 2/3 dealiasing. Trajectories keep the vorticity spectrum at every stored
step; velocities, pressures and time derivatives are rebuilt from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import (
    BlowupDetected,
    CflViolation,
    InterpolationGap,
    MismatchedClouds,
    NotDivergenceFree,
    WindowMismatch,
)
from .torus_spectral import (
    GridSpec2D,
    ScalarField2D,
    VectorField2D,
    biot_savart,
    derivative,
    divergence,
    lp_norm,
)

TWO_PI = 2.0 * math.pi


class _Spectral:
    """rfft2 multipliers for one grid."""

    _cache: dict[tuple[int, float], "_Spectral"] = {}

    def __init__(self, grid: GridSpec2D):
        n = grid.n
        self.grid = grid
        k1 = np.fft.fftfreq(n, 1.0 / n)[:, None]
        k2 = np.fft.rfftfreq(n, 1.0 / n)[None, :]
        self.ik1 = 1j * TWO_PI * k1 * np.ones_like(k2)
        self.ik2 = 1j * TWO_PI * k2 * np.ones_like(k1)
        ny = n // 2
        odd_ok = (np.abs(k1) != ny) & (np.abs(k2) != ny)
        self.ik1 = np.where(odd_ok, self.ik1, 0.0)
        self.ik2 = np.where(odd_ok, self.ik2, 0.0)
        self.k2sum = (k1**2 + k2**2) * np.ones_like(self.ik1.real)
        lap = 4.0 * math.pi**2 * self.k2sum
        self.inv_lap = np.where(lap > 0, 1.0 / np.where(lap > 0, lap, 1.0), 0.0)
        cut = grid.dealias_fraction * n / 2.0
        self.mask = (np.abs(k1) < cut) & (np.abs(k2) < cut)

    @classmethod
    def of(cls, grid: GridSpec2D) -> "_Spectral":
        key = (grid.n, grid.dealias_fraction)
        if key not in cls._cache:
            cls._cache[key] = cls(grid)
        return cls._cache[key]

    def fwd(self, a: np.ndarray) -> np.ndarray:
        return sfft.rfft2(a)

    def inv(self, c: np.ndarray) -> np.ndarray:
        return sfft.irfft2(c, s=(self.grid.n, self.grid.n))

    def velocity(self, wh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ph = wh * self.inv_lap
        return self.ik2 * ph, -self.ik1 * ph

    def pressure(self, u1h: np.ndarray, u2h: np.ndarray) -> np.ndarray:
        """p with -Delta p = div div(u (x) u), products dealiased."""
        u1, u2 = self.inv(u1h * self.mask), self.inv(u2h * self.mask)
        s11 = self.fwd(u1 * u1)
        s12 = self.fwd(u1 * u2)
        s22 = self.fwd(u2 * u2)
        dd = self.ik1 * self.ik1 * s11 + 2.0 * self.ik1 * self.ik2 * s12 + self.ik2 * self.ik2 * s22
        return dd * self.inv_lap * self.mask

    def advect(self, a1h, a2h, bh) -> np.ndarray:
        """Spectrum of (a . grad) b, dealiased."""
        m = self.mask
        a1, a2 = self.inv(a1h * m), self.inv(a2h * m)
        bx, by = self.inv(self.ik1 * bh * m), self.inv(self.ik2 * bh * m)
        return self.fwd(a1 * bx + a2 * by) * m

    def product(self, ah, bh) -> np.ndarray:
        m = self.mask
        return self.fwd(self.inv(ah * m) * self.inv(bh * m)) * m

    def field(self, c: np.ndarray) -> ScalarField2D:
        return ScalarField2D(self.grid, self.inv(c))


# ---------------------------------------------------------------------------
# states


@dataclass
class EulerState:
    t: float
    omega: ScalarField2D
    u: VectorField2D
    p: ScalarField2D

    @classmethod
    def from_omega(cls, omega: ScalarField2D, t: float = 0.0) -> "EulerState":
        u = biot_savart(omega)
        return cls(t, omega, u, pressure_solve(u))


@dataclass
class AuxState:
    t: float
    u_tilde: VectorField2D
    p_tilde: ScalarField2D
    eta0: float

    @classmethod
    def zero(cls, grid: GridSpec2D, eta0: float, t: float = 0.0) -> "AuxState":
        z = ScalarField2D(grid, np.zeros((grid.n, grid.n)))
        return cls(t, VectorField2D(z, z), z, eta0)


def pressure_solve(u: VectorField2D, tol: float = 1e-10) -> ScalarField2D:
    """Zero-mean p with -Delta p = div div(u (x) u)."""
    g = u.grid
    div = divergence(u)
    scale = max(float(np.abs(u.stack()).max()) * g.n, 1e-300)
    if float(np.abs(div.values).max()) > tol * scale:
        raise NotDivergenceFree("velocity field is not divergence free")
    sp = _Spectral.of(g)
    return sp.field(sp.pressure(sp.fwd(u.u1.values), sp.fwd(u.u2.values)))


def _euler_rhs(sp: _Spectral, wh: np.ndarray) -> np.ndarray:
    u1h, u2h = sp.velocity(wh)
    return -sp.advect(u1h, u2h, wh)


def cfl_bound(omega: ScalarField2D) -> float:
    u = biot_savart(omega)
    umax = float(np.sqrt(u.u1.values**2 + u.u2.values**2).max())
    return math.inf if umax == 0.0 else omega.grid.h / (4.0 * umax)


class EulerTrajectory:
    """Vorticity spectra at uniformly spaced times with PDE-derived fields."""

    def __init__(self, grid: GridSpec2D, t0: float, dt: float, spectra: list[np.ndarray]):
        self.grid = grid
        self.t0 = t0
        self.dt = dt
        self.spectra = spectra
        self.sp = _Spectral.of(grid)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.spectra))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.spectra) - 1)

    def covers(self, a: float, b: float) -> bool:
        tol = 1e-9 * max(1.0, abs(self.t_end))
        return self.t0 - tol <= min(a, b) and max(a, b) <= self.t_end + tol

    def omega_hat(self, t: float) -> np.ndarray:
        """Cubic Lagrange interpolation in time of the stored spectra."""
        if not self.covers(t, t):
            raise WindowMismatch(f"t={t} outside [{self.t0}, {self.t_end}]")
        nsnap = len(self.spectra)
        x = (t - self.t0) / self.dt
        j = int(round(x))
        if abs(x - j) < 1e-9:
            return self.spectra[min(max(j, 0), nsnap - 1)]
        if nsnap < 4:
            i = min(int(math.floor(x)), nsnap - 2)
            w = x - i
            return (1 - w) * self.spectra[i] + w * self.spectra[i + 1]
        i0 = min(max(int(math.floor(x)) - 1, 0), nsnap - 4)
        idx = range(i0, i0 + 4)
        out = 0.0
        for a in idx:
            w = 1.0
            for b in idx:
                if b != a:
                    w *= (x - b) / (a - b)
            out = out + w * self.spectra[a]
        return out

    def state(self, t: float) -> EulerState:
        wh = self.omega_hat(t)
        sp = self.sp
        u1h, u2h = sp.velocity(wh)
        u = VectorField2D(sp.field(u1h), sp.field(u2h))
        return EulerState(t, sp.field(wh), u, sp.field(sp.pressure(u1h, u2h)))

    def velocity_hat(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.sp.velocity(self.omega_hat(t))


def _rk4(f, y, dt):
    k1 = f(0.0, y)
    k2 = f(0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def run_euler(
    omega0: ScalarField2D,
    T: float,
    dt: float,
    store_every: int = 1,
    t0: float = 0.0,
    blowup_factor: float = 10.0,
) -> EulerTrajectory:
    """Integrate the vorticity equation on [t0, t0 + T] and keep snapshots."""
    g = omega0.grid
    if dt > cfl_bound(omega0) * (1 + 1e-12):
        raise CflViolation(f"dt={dt} exceeds CFL bound {cfl_bound(omega0):.4g}")
    if abs(omega0.mean()) > 1e-10 * max(lp_norm(omega0, 2), 1e-300):
        raise ValueError("vorticity must have zero mean")
    sp = _Spectral.of(g)
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    wh = sp.fwd(omega0.values) * sp.mask
    w0max = float(np.abs(omega0.values).max())
    spectra = [wh]
    rhs = lambda _s, y: _euler_rhs(sp, y)
    for k in range(steps):
        wh = _rk4(rhs, wh, dt)
        if (k + 1) % store_every == 0:
            wmax = float(np.abs(sp.inv(wh)).max())
            if w0max > 0 and wmax > blowup_factor * w0max:
                raise BlowupDetected(f"max|omega| grew from {w0max:.3g} to {wmax:.3g}")
            spectra.append(wh)
    return EulerTrajectory(g, t0, dt * store_every, spectra)


def euler_advance(state: EulerState, dt: float, steps: int) -> EulerState:
    traj = run_euler(state.omega, dt * steps, dt, store_every=max(steps, 1), t0=state.t)
    return traj.state(traj.t_end)


# ---------------------------------------------------------------------------
# auxiliary system


class AuxTrajectory:
    def __init__(self, grid, t0, dt, u_hats, eta0):
        self.grid = grid
        self.t0 = t0
        self.dt = dt
        self.u_hats = u_hats
        self.eta0 = eta0

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self.u_hats) - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.u_hats))


def _aux_terms(sp: _Spectral, uh, vh):
    """Spectra of N = u.grad v + v.grad u (two components)."""
    n1 = sp.advect(uh[0], uh[1], vh[0]) + sp.advect(vh[0], vh[1], uh[0])
    n2 = sp.advect(uh[0], uh[1], vh[1]) + sp.advect(vh[0], vh[1], uh[1])
    return n1, n2


def _leray(sp: _Spectral, a1, a2):
    kk = np.where(sp.k2sum > 0, sp.k2sum, 1.0) * (-(TWO_PI**2))
    dot = (sp.ik1 * a1 + sp.ik2 * a2) / kk
    return a1 - sp.ik1 * dot, a2 - sp.ik2 * dot


def aux_rhs(sp: _Spectral, uh, vh, eta0):
    n1, n2 = _aux_terms(sp, uh, vh)
    lap = -4.0 * math.pi**2 * sp.k2sum
    r1 = -n1 + eta0 * lap * uh[0]
    r2 = -n2 + eta0 * lap * uh[1]
    return np.stack(_leray(sp, r1, r2))


def aux_pressure(sp: _Spectral, uh, vh) -> np.ndarray:
    """p_tilde = (-Delta)^{-1} div(u.grad v + v.grad u)."""
    n1, n2 = _aux_terms(sp, uh, vh)
    return (sp.ik1 * n1 + sp.ik2 * n2) * sp.inv_lap


def run_aux(aux: AuxState, euler: EulerTrajectory, dt: float, steps: int, store_every: int = 1) -> AuxTrajectory:
    g = aux.u_tilde.grid
    t_end = aux.t + dt * steps
    if not euler.covers(aux.t, t_end):
        raise WindowMismatch(f"aux window [{aux.t}, {t_end}] not covered by Euler trajectory")
    sp = _Spectral.of(g)
    div = divergence(aux.u_tilde)
    if float(np.abs(div.values).max()) > 1e-10 * max(float(np.abs(aux.u_tilde.stack()).max()) * g.n, 1e-300):
        raise NotDivergenceFree("initial u_tilde is not divergence free")
    vh = np.stack([sp.fwd(aux.u_tilde.u1.values), sp.fwd(aux.u_tilde.u2.values)])
    hats = [vh]
    t = aux.t
    for k in range(steps):
        def f(s, y, t=t):
            return aux_rhs(sp, euler.velocity_hat(t + s), y, aux.eta0)

        vh = _rk4(f, vh, dt)
        t = aux.t + (k + 1) * dt
        if (k + 1) % store_every == 0:
            hats.append(vh)
    return AuxTrajectory(g, aux.t, dt * store_every, hats, aux.eta0)


def aux_state_at(aux_traj: AuxTrajectory, euler: EulerTrajectory, index: int) -> AuxState:
    sp = _Spectral.of(aux_traj.grid)
    vh = aux_traj.u_hats[index]
    t = aux_traj.t0 + index * aux_traj.dt
    uh = euler.velocity_hat(t)
    return AuxState(
        t,
        VectorField2D(sp.field(vh[0]), sp.field(vh[1])),
        sp.field(aux_pressure(sp, uh, vh)),
        aux_traj.eta0,
    )


def aux_advance(aux: AuxState, euler_trajectory: EulerTrajectory, dt: float, steps: int) -> AuxState:
    traj = run_aux(aux, euler_trajectory, dt, steps, store_every=max(steps, 1))
    return aux_state_at(traj, euler_trajectory, len(traj.u_hats) - 1)


# ---------------------------------------------------------------------------
# flow maps


@dataclass
class FlowMap:
    t: float
    s: float
    labels: np.ndarray
    X: np.ndarray
    grad_X: np.ndarray


@dataclass(frozen=True)
class StabilitySpec:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


class _SplineSampler:
    """Periodic cubic B-spline sampling of u and grad u at one time."""

    def __init__(self, sp: _Spectral, wh: np.ndarray):
        u1h, u2h = sp.velocity(wh)
        fields = [u1h, u2h, sp.ik1 * u1h, sp.ik2 * u1h, sp.ik1 * u2h, sp.ik2 * u2h]
        self.coef = [ndimage.spline_filter(sp.inv(c), order=3, mode="grid-wrap") for c in fields]
        self.h = sp.grid.h

    def __call__(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = (X.T + 0.5) / self.h
        vals = [
            ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False) for c in self.coef
        ]
        u = np.stack(vals[:2], axis=-1)
        du = np.stack([np.stack(vals[2:4], -1), np.stack(vals[4:6], -1)], axis=-2)
        return u, du


def grid_labels(grid: GridSpec2D) -> np.ndarray:
    X1, X2 = grid.mesh
    return np.stack([X1.ravel(), X2.ravel()], axis=-1)


def flow_integrate(
    u_source: EulerTrajectory,
    t: float,
    s_targets: Sequence[float],
    labels: np.ndarray | None = None,
    dt: float | None = None,
) -> list[FlowMap]:
    """Backward RK4 for X(s; t, x) and its Jacobian, returning one map per target."""
    targets = sorted((float(s) for s in s_targets), reverse=True)
    if any(s > t + 1e-12 for s in targets):
        raise ValueError("targets must satisfy s <= t")
    dt = u_source.dt if dt is None else dt
    if u_source.dt > dt * (1 + 1e-9):
        raise InterpolationGap(f"snapshot spacing {u_source.dt} exceeds step {dt}")
    if not u_source.covers(min(targets + [t]), t):
        raise WindowMismatch("flow window not covered by the velocity trajectory")
    if labels is None:
        labels = grid_labels(u_source.grid)
    labels = np.asarray(labels, dtype=float)
    X = labels.copy()
    J = np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy()
    cache: dict[float, _SplineSampler] = {}

    def sampler(time: float) -> _SplineSampler:
        key = round(time, 12)
        if key not in cache:
            if len(cache) > 6:
                cache.pop(next(iter(cache)))
            cache[key] = _SplineSampler(u_source.sp, u_source.omega_hat(time))
        return cache[key]

    def rhs(time, X, J):
        u, du = sampler(time)(X)
        return u, du @ J

    out: list[FlowMap] = []
    s = t
    for target in targets:
        nsteps = int(math.ceil((s - target) / dt - 1e-9))
        if nsteps > 0:
            hstep = (s - target) / nsteps
            for _ in range(nsteps):
                h = -hstep
                k1x, k1j = rhs(s, X, J)
                k2x, k2j = rhs(s + h / 2, X + h / 2 * k1x, J + h / 2 * k1j)
                k3x, k3j = rhs(s + h / 2, X + h / 2 * k2x, J + h / 2 * k2j)
                k4x, k4j = rhs(s + h, X + h * k3x, J + h * k3j)
                X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
                J = J + h / 6 * (k1j + 2 * k2j + 2 * k3j + k4j)
                s = s + h
        s = target
        Xw = labels.copy() if target == t else (X + 0.5) % 1.0 - 0.5
        Jw = np.broadcast_to(np.eye(2), J.shape).copy() if target == t else J.copy()
        out.append(FlowMap(t=t, s=target, labels=labels, X=Xw, grad_X=Jw))
    order = {s: i for i, s in enumerate(sorted(set(float(x) for x in s_targets)))}
    by_s = {fm.s: fm for fm in out}
    return [by_s[float(x)] for x in s_targets] if order else out


def transport_vorticity(omega0: ScalarField2D, flow: FlowMap) -> ScalarField2D:
    """omega(t, x) = omega0(X(0; t, x)) by cubic spline sampling."""
    g = omega0.grid
    if flow.labels.shape[0] != g.n * g.n:
        raise ValueError("flow labels must be the grid nodes")
    coef = ndimage.spline_filter(omega0.values, order=3, mode="grid-wrap")
    idx = (flow.X.T + 0.5) / g.h
    vals = ndimage.map_coordinates(coef, idx, order=3, mode="grid-wrap", prefilter=False)
    return ScalarField2D(g, vals.reshape(g.n, g.n))


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (np.asarray(a) - np.asarray(b) + 0.5) % 1.0 - 0.5
    return np.sqrt(np.sum(d**2, axis=-1))


def stability_lambda(flow1: FlowMap, flow2: FlowMap, spec: StabilitySpec) -> float:
    if flow1.labels.shape != flow2.labels.shape or not np.array_equal(flow1.labels, flow2.labels):
        raise MismatchedClouds("flow maps use different label clouds")
    if flow1.s != flow2.s or flow1.t != flow2.t:
        raise MismatchedClouds("flow maps use different (s, t)")
    d = torus_distance(flow1.X, flow2.X)
    return float(np.mean(np.log1p(d / spec.lam)))


def operator_norm_2x2(A: np.ndarray) -> np.ndarray:
    """Largest singular value of stacked 2x2 matrices."""
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    s = a**2 + b**2 + c**2 + d**2
    det = a * d - b * c
    return np.sqrt(0.5 * (s + np.sqrt(np.maximum(s**2 - 4 * det**2, 0.0))))


def grad_u_sup(traj: EulerTrajectory, t: float) -> float:
    """max_x of the operator norm of grad u at time t."""
    sp = traj.sp
    u1h, u2h = traj.velocity_hat(t)
    G = np.empty((traj.grid.n, traj.grid.n, 2, 2))
    G[..., 0, 0] = sp.inv(sp.ik1 * u1h)
    G[..., 0, 1] = sp.inv(sp.ik2 * u1h)
    G[..., 1, 0] = sp.inv(sp.ik1 * u2h)
    G[..., 1, 1] = sp.inv(sp.ik2 * u2h)
    return float(operator_norm_2x2(G).max())


def gronwall_bound(traj: EulerTrajectory, s: float, t: float, samples: int | None = None) -> float:
    """exp(int_s^t ||grad u||_inf) by Simpson's rule on the stored snapshots."""
    if t == s:
        return 1.0
    m = samples or max(2, int(math.ceil((t - s) / traj.dt)))
    m += m % 2
    tt = np.linspace(s, t, m + 1)
    vals = np.array([grad_u_sup(traj, x) for x in tt])
    w = np.ones(m + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(math.exp((t - s) / (3 * m) * np.dot(w, vals)))


# ---------------------------------------------------------------------------
# regularity diagnostics


def log_plus(a: float) -> float:
    return max(math.log(a), 0.0) if a > 0 else 0.0


def lip_bound(beta: float, p: float, t: float, w0_lp: float, C: float = 2.0) -> float:
    """(beta^{-2/p} log_+(1/beta)) ||w0||_p exp(t C beta^{-2/p} ||w0||_p)."""
    q = 0.0 if p == math.inf else 2.0 / p
    b = beta ** (-q)
    expo = t * C * b * w0_lp
    return b * log_plus(1.0 / beta) * w0_lp * (math.exp(expo) if expo < 700 else math.inf)


def u_beta_bound(beta: float, p: float, t: float, w0_lp: float, C: float = 2.0) -> float:
    """U(beta, p) = exp(Lip(beta, p)) beta^{-8 - 2(1/p - 1/2)_+} ||w0||_p."""
    lip = lip_bound(beta, p, t, w0_lp, C)
    q = 0.0 if p == math.inf else 1.0 / p
    expo = -8.0 - 2.0 * max(q - 0.5, 0.0)
    if lip > 700:
        return math.inf
    return math.exp(lip) * beta**expo * w0_lp


def _multi_indices(order: int) -> list[tuple[int, int]]:
    return [(a, order - a) for a in range(order + 1)]


def _sup_derivs(sp: _Spectral, hats: Sequence[np.ndarray], order: int) -> float:
    best = 0.0
    for c in hats:
        for a, b in _multi_indices(order):
            best = max(best, float(np.abs(sp.inv(sp.ik1**a * sp.ik2**b * c)).max()))
    return best


def time_derivatives(sp: _Spectral, wh: np.ndarray, vh: np.ndarray | None, eta0: float) -> dict[str, np.ndarray]:
    """Spectra of fields and their PDE-substituted time derivatives."""
    u1h, u2h = sp.velocity(wh)
    uh = np.stack([u1h, u2h])
    ph = sp.pressure(u1h, u2h)
    # d_t u = -u.grad u - grad p
    dtu = np.stack(
        [-sp.advect(u1h, u2h, u1h) - sp.ik1 * ph, -sp.advect(u1h, u2h, u2h) - sp.ik2 * ph]
    )
    # d_t p = (-Delta)^{-1} div div(d_t u (x) u + u (x) d_t u)
    dd = 0.0
    ik = (sp.ik1, sp.ik2)
    for i in range(2):
        for j in range(2):
            prod = sp.product(dtu[i], uh[j]) + sp.product(uh[i], dtu[j])
            dd = dd + ik[i] * ik[j] * prod
    dtp = dd * sp.inv_lap
    out = {"u": uh, "p": ph, "dtu": dtu, "dtp": dtp}
    if vh is not None:
        ptil = aux_pressure(sp, uh, vh)
        dtv = aux_rhs(sp, uh, vh, eta0)
        n1a, n2a = _aux_terms(sp, dtu, vh)
        n1b, n2b = _aux_terms(sp, uh, dtv)
        dtptil = (sp.ik1 * (n1a + n1b) + sp.ik2 * (n2a + n2b)) * sp.inv_lap
        out.update({"ut": vh, "pt": ptil, "dtut": dtv, "dtpt": dtptil})
    return out


@dataclass
class RegularityRecord:
    lip_bound: float
    lip_measured: float
    v_beta: float
    u_beta_p: float
    C: float = 2.0


def v_beta_at(sp: _Spectral, wh: np.ndarray, vh: np.ndarray | None, eta0: float) -> dict[str, float]:
    """Max-norm ingredients of the growth-of-estimate function at one time."""
    d = time_derivatives(sp, wh, vh, eta0)
    uh, ph = d["u"], d["p"]
    zero = np.zeros_like(ph)
    vt = d.get("ut", np.stack([zero, zero]))
    pt = d.get("pt", zero)
    du = [sp.ik1 * uh[i] for i in range(2)] + [sp.ik2 * uh[i] for i in range(2)]
    tup = list(uh) + du + [ph] + list(vt) + [pt]
    dtdu = [sp.ik1 * d["dtu"][i] for i in range(2)] + [sp.ik2 * d["dtu"][i] for i in range(2)]
    dtt = list(d["dtu"]) + dtdu + [d["dtp"]] + list(d.get("dtut", np.stack([zero, zero]))) + [d.get("dtpt", zero)]
    rec = {}
    for s1 in range(3):
        rec[f"dt_{s1}"] = _sup_derivs(sp, dtt, s1)
        rec[f"dx_{s1}"] = _sup_derivs(sp, tup, s1 + 1)
    for s2 in range(3):
        rec[f"w_{s2}"] = _sup_derivs(sp, list(vt) + list(uh), s2)
    rec["u_j"] = sum(_sup_derivs(sp, list(uh), j) for j in range(3))
    return rec


def v_beta_from_records(records: Sequence[dict[str, float]]) -> float:
    """Combine per-time maxima into V(beta) (sup over t taken per factor)."""
    sup = {k: max(r[k] for r in records) for k in records[0]}
    total = 0.0
    for s1 in range(3):
        for s2 in range(3 - s1):
            lead = sup[f"dt_{s1}"] + sup[f"dx_{s1}"]
            total += lead * (1.0 + sup[f"w_{s2}"]) * (1.0 + sup["u_j"]) ** 2
    return total


def regularity_diagnostics(
    beta: float,
    p: float,
    t: float,
    w0_lp: float,
    trajectory: EulerTrajectory,
    aux: AuxTrajectory | None = None,
    C: float = 2.0,
    stride: int = 1,
) -> RegularityRecord:
    sp = trajectory.sp
    times = [x for x in trajectory.times[::stride] if x <= t + 1e-12]
    lip_meas = max(grad_u_sup(trajectory, x) for x in times)
    recs = []
    for x in times:
        vh = None
        eta0 = 0.0
        if aux is not None:
            k = int(round((x - aux.t0) / aux.dt))
            vh = aux.u_hats[min(max(k, 0), len(aux.u_hats) - 1)]
            eta0 = aux.eta0
        recs.append(v_beta_at(sp, trajectory.omega_hat(x), vh, eta0))
    return RegularityRecord(
        lip_bound=lip_bound(beta, p, t, w0_lp, C),
        lip_measured=lip_meas,
        v_beta=v_beta_from_records(recs),
        u_beta_p=u_beta_bound(beta, p, t, w0_lp, C),
        C=C,
    )


# ---------------------------------------------------------------------------
# trajectory store


def write_trajectory(directory, traj: EulerTrajectory, beta: float = 0.0, eta0: float = 0.0, seed: int = 0) -> None:
    from pathlib import Path

    from .torus_spectral import write_snapshot

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, c in enumerate(traj.spectra):
        write_snapshot(d / f"snap_{i}.f2d", [traj.sp.field(c)])
    lines = [f"t0={traj.t0!r}", f"dt={traj.dt!r}", f"n={traj.grid.n}", f"beta={beta!r}", f"eta0={eta0!r}", f"seed={seed}"]
    (d / "run.manifest").write_text("\n".join(lines) + "\n")


def read_trajectory(directory) -> EulerTrajectory:
    from pathlib import Path

    from .torus_spectral import read_snapshot

    d = Path(directory)
    meta = dict(line.split("=", 1) for line in (d / "run.manifest").read_text().splitlines() if "=" in line)
    n = int(meta["n"])
    grid = GridSpec2D(n)
    sp = _Spectral.of(grid)
    files = sorted(d.glob("snap_*.f2d"), key=lambda p: int(p.stem.split("_")[1]))
    spectra = [sp.fwd(read_snapshot(f)[0].values) for f in files]
    return EulerTrajectory(grid, float(meta["t0"]), float(meta["dt"]), spectra)
