"""Hard-sphere Boltzmann operators on a comoving Gauss-Hermite velocity grid.

Velocities are written as v = U + xi with U the local bulk shift. Every
operator below is Galilean invariant, so it acts on functions of xi alone and
the grid simply moves with U.

The collision integral is evaluated exactly (up to the sphere rule) for
densities of the form polynomial(xi) * mu(xi): along each collision direction
sigma the v* integral reduces to one-dimensional Gaussian integrals that have
closed forms in erf and Hermite polynomials.

The linearized operator is represented by its Galerkin matrix on the
orthonormal Burnett functions of total degree <= D, plus the collision
frequency on the orthogonal complement.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg, optimize, special

from .errors import HydrodynamicRHS, TailNotResolved, UnderResolvedShift

SQ2PI = math.sqrt(2.0 * math.pi)
DEFAULT_SPHERE = (16, 32)
GALERKIN_SPHERE = (24, 48)
RADIAL_NODES = 80
RADIAL_CUT = 12.0
DEGREE_CAP = 12
MAX_SHIFT = 0.5
LOP_MAGIC = b"VLIM-LOP"


# ---------------------------------------------------------------------------
# one-dimensional building blocks


def he_table(x, nmax: int) -> np.ndarray:
    """Probabilists' Hermite polynomials He_0..He_nmax at x."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = 1.0
    if nmax > 0:
        out[1] = x
    for n in range(1, nmax):
        out[n + 1] = x * out[n] - n * out[n - 1]
    return out


def he_orthonormal(x, nmax: int) -> np.ndarray:
    """He_n / sqrt(n!), orthonormal under the standard normal density."""
    return he_table(x, nmax) / np.sqrt(special.factorial(np.arange(nmax + 1)))[(...,) + (None,) * np.ndim(x)]


def J_table(y, nmax: int) -> np.ndarray:
    """J_n(y) = E|y - Z| He_n(Z)-type line integrals used by the collision integral.

    J_0 = 2 phi + y (2 Phi - 1), J_1 = 1 - 2 Phi, J_n = 2 He_{n-2} phi.
    """
    y = np.asarray(y, dtype=float)
    phi = np.exp(-0.5 * y**2) / SQ2PI
    Phi = special.ndtr(y)
    out = np.empty((nmax + 1,) + y.shape)
    out[0] = 2.0 * phi + y * (2.0 * Phi - 1.0)
    if nmax >= 1:
        out[1] = 1.0 - 2.0 * Phi
    if nmax >= 2:
        out[2:] = 2.0 * he_table(y, nmax - 2) * phi
    return out


def sphere_rule(n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in cos(theta) times the uniform rule in phi."""
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    c = np.repeat(ct, n_phi)
    s = np.sqrt(1.0 - c**2)
    p = np.tile(ph, n_theta)
    nodes = np.stack([s * np.cos(p), s * np.sin(p), c], axis=-1)
    weights = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    return nodes, weights


def gh_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes with weights normalized to the standard normal."""
    x, w = hermegauss(n)
    return x, w / SQ2PI


def phi3(xi: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.sum(xi**2, axis=-1)) / SQ2PI**3


# ---------------------------------------------------------------------------
# grid, vectors, Maxwellians


@dataclass(frozen=True)
class VelocityGrid:
    """Tensor Gauss-Hermite grid centred at the bulk shift U."""

    n_v: int
    U: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n_v < 2:
            raise ValueError("n_v must be at least 2")
        object.__setattr__(self, "U", tuple(float(a) for a in self.U))

    @cached_property
    def axis(self) -> tuple[np.ndarray, np.ndarray]:
        return gh_rule(self.n_v)

    @cached_property
    def xi(self) -> np.ndarray:
        x = self.axis[0]
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
        return g.reshape(-1, 3)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.xi + np.asarray(self.U)

    @cached_property
    def W(self) -> np.ndarray:
        """Probability weights against the standard 3D normal."""
        w = self.axis[1]
        return np.einsum("i,j,k->ijk", w, w, w).ravel()

    @cached_property
    def weights(self) -> np.ndarray:
        """Lebesgue weights: sum(weights * g) approximates the integral of g."""
        return self.W / self.mu

    @cached_property
    def mu(self) -> np.ndarray:
        return phi3(self.xi)

    @cached_property
    def sqrt_mu(self) -> np.ndarray:
        return np.sqrt(self.mu)

    @property
    def size(self) -> int:
        return self.n_v**3

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@dataclass
class KineticVector:
    """Values on a velocity grid.

    tag "f" stores a perturbation f with F = sqrt(mu) f; tag "F" stores a density.
    ``poly`` optionally carries the exact representation values = poly(xi) * mu^a
    (a = 1/2 for "f", 1 for "F").
    """

    grid: VelocityGrid
    values: np.ndarray
    tag: str = "f"
    poly: "Poly | None" = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError("values must have one entry per grid node")
        if self.tag not in ("f", "F"):
            raise ValueError("tag must be 'f' or 'F'")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kinetic vector has non-finite entries")

    def inner(self, other: "KineticVector") -> float:
        return float(np.dot(self.grid.weights, self.values * other.values))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def density(self) -> np.ndarray:
        return self.values if self.tag == "F" else self.values * self.grid.sqrt_mu

    def _new(self, values, poly=None):
        return KineticVector(self.grid, values, self.tag, poly)

    def __add__(self, other: "KineticVector") -> "KineticVector":
        return self._new(self.values + other.values)

    def __sub__(self, other: "KineticVector") -> "KineticVector":
        return self._new(self.values - other.values)

    def __mul__(self, c: float) -> "KineticVector":
        poly = None if self.poly is None else ScaledPoly(self.poly, float(c))
        return self._new(self.values * c, poly)

    __rmul__ = __mul__


def from_poly(grid: VelocityGrid, poly: "Poly", tag: str = "f") -> KineticVector:
    """Sample poly(xi) * sqrt(mu) ("f") or poly(xi) * mu ("F")."""
    base = grid.sqrt_mu if tag == "f" else grid.mu
    return KineticVector(grid, poly(grid.xi) * base, tag, poly)


@dataclass
class LocalMaxwellian:
    U: np.ndarray
    values: np.ndarray


def maxwellian(grid: VelocityGrid, R: float = 1.0, U: Sequence[float] | None = None, T: float = 1.0) -> np.ndarray:
    """M_{R,U,T} at the grid nodes (U defaults to the grid centre)."""
    U = np.asarray(grid.U if U is None else U, dtype=float)
    d = grid.nodes - U
    return R / (2.0 * math.pi * T) ** 1.5 * np.exp(-np.sum(d**2, axis=-1) / (2.0 * T))


def local_maxwellian(grid: VelocityGrid) -> LocalMaxwellian:
    return LocalMaxwellian(np.asarray(grid.U), maxwellian(grid))


def moments(grid: VelocityGrid, F: np.ndarray) -> tuple[float, np.ndarray, float]:
    """(int F, int v F, int |v|^2 F) by grid quadrature."""
    w = grid.weights * F
    v = grid.nodes
    return float(w.sum()), w @ v, float(w @ np.sum(v**2, axis=-1))


@dataclass
class HydroBasis:
    grid: VelocityGrid
    vectors: list[KineticVector]

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.stack([v.values for v in self.vectors], axis=1)

    @cached_property
    def gram(self) -> np.ndarray:
        M = self.matrix
        return M.T @ (self.grid.weights[:, None] * M)


def hydro_basis(grid: VelocityGrid) -> HydroBasis:
    polys = [
        CallablePoly(lambda X: np.ones(X.shape[:-1]), 0),
        CallablePoly(lambda X: X[..., 0], 1),
        CallablePoly(lambda X: X[..., 1], 1),
        CallablePoly(lambda X: X[..., 2], 1),
        CallablePoly(lambda X: (np.sum(X**2, axis=-1) - 3.0) / math.sqrt(6.0), 2),
    ]
    return HydroBasis(grid, [from_poly(grid, p) for p in polys])


def project_P(f: KineticVector, basis: HydroBasis) -> tuple[KineticVector, KineticVector]:
    M = basis.matrix
    c = M.T @ (basis.grid.weights * f.values)
    pf = M @ c
    return KineticVector(f.grid, pf, f.tag), KineticVector(f.grid, f.values - pf, f.tag)


# ---------------------------------------------------------------------------
# polynomial factors


class Poly:
    """Polynomial P(xi) of known total degree; densities are P * mu."""

    deg: int

    def __call__(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def marginals(self, sig: np.ndarray) -> np.ndarray:
        """g_k(sigma) = E[P(Z) He_k(sigma . Z)] / k! for k <= deg, shape (S, deg+1)."""
        n = self.deg + 1
        x, w = gh_rule(n)
        X = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        W = np.einsum("i,j,k->ijk", w, w, w).ravel()
        P = self(X) * W
        y = sig @ X.T
        H = he_table(y, self.deg)
        fact = special.factorial(np.arange(n))
        return np.einsum("kan,n->ak", H, P) / fact


class CallablePoly(Poly):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], deg: int):
        self.fn = fn
        self.deg = int(deg)

    def __call__(self, X):
        return np.broadcast_to(self.fn(X), X.shape[:-1]).astype(float)


class ScaledPoly(Poly):
    def __init__(self, base: Poly, c: float):
        self.base = base
        self.c = c
        self.deg = base.deg

    def __call__(self, X):
        return self.c * self.base(X)


class HermitePoly(Poly):
    """sum_alpha c_alpha He_alpha(xi) / sqrt(alpha!) over |alpha| <= deg."""

    def __init__(self, coeffs: np.ndarray, deg: int):
        d = deg
        self.deg = int(d)
        idx = [(a, b, c) for a in range(d + 1) for b in range(d + 1 - a) for c in range(d + 1 - a - b)]
        self.index = np.array(idx, dtype=int).reshape(-1, 3)
        self.coef = np.array([coeffs[a, b, c] for a, b, c in idx])
        keep = self.coef != 0.0
        self.index = self.index[keep]
        self.coef = self.coef[keep]

    def __call__(self, X):
        shape = X.shape[:-1]
        Xf = X.reshape(-1, 3)
        out = np.zeros(len(Xf))
        if len(self.coef) == 0:
            return out.reshape(shape)
        H = [he_orthonormal(Xf[:, i], self.deg) for i in range(3)]
        for (a, b, c), k in zip(self.index, self.coef):
            out += k * H[0][a] * H[1][b] * H[2][c]
        return out.reshape(shape)

    def marginals(self, sig):
        # E[He_alpha He_k(sigma . Z)] / (k! sqrt(alpha!)) = sigma^alpha / sqrt(alpha!) for |alpha| = k
        out = np.zeros((len(sig), self.deg + 1))
        for (a, b, c), k in zip(self.index, self.coef):
            norm = math.sqrt(math.factorial(a) * math.factorial(b) * math.factorial(c))
            out[:, a + b + c] += k * sig[:, 0] ** a * sig[:, 1] ** b * sig[:, 2] ** c / norm
        return out


def hermite_coefficients(grid: VelocityGrid, F: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite coefficients of P = F / mu, tensor shape (n_v,)*3."""
    x, w = grid.axis
    n = grid.n_v
    H = he_orthonormal(x, n - 1)  # (k, i)
    A = (grid.weights * F).reshape(n, n, n)
    return np.einsum("ijk,ai,bj,ck->abc", A, H, H, H)


def hermite_derivative(coeffs: np.ndarray, axis: int) -> np.ndarray:
    """Coefficients of d/dxi_axis (P mu) / mu given those of P."""
    n = coeffs.shape[0]
    out = np.zeros_like(coeffs)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[axis] = slice(0, n - 1)
    dst[axis] = slice(1, n)
    shape = [1, 1, 1]
    shape[axis] = n - 1
    fac = np.sqrt(np.arange(1, n)).reshape(shape)
    out[tuple(dst)] = -coeffs[tuple(src)] * fac
    return out


def hermite_values(grid: VelocityGrid, coeffs: np.ndarray) -> np.ndarray:
    """P(xi) at the grid nodes from tensor Hermite coefficients."""
    n = grid.n_v
    H = he_orthonormal(grid.axis[0], n - 1)
    return np.einsum("abc,ai,bj,ck->ijk", coeffs, H, H, H).ravel()


def to_poly(F: KineticVector, tol: float = 1e-13, degree_cap: int | None = None) -> Poly:
    """Exact polynomial factor of a density, truncated at its effective degree.

    Raises TailNotResolved when F / mu is not captured by polynomials of degree
    below the cap: the Hermite energy beyond the cap must be below 1e-8 of the total.
    """
    if F.poly is not None:
        if F.tag == "F":
            return F.poly
    grid = F.grid
    cap = min(grid.n_v - 1, DEGREE_CAP) if degree_cap is None else degree_cap
    dens = F.density()
    c = hermite_coefficients(grid, dens)
    n = grid.n_v
    a, b, d = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    tot = a + b + d
    energy = float(np.sum(c**2))
    if energy == 0.0:
        return HermitePoly(np.zeros((1, 1, 1)), 0)
    tail = float(np.sum(c[tot > cap] ** 2))
    if tail > 1e-16 * energy and math.sqrt(tail / energy) > 1e-8:
        raise TailNotResolved(
            f"distribution not resolved by degree <= {cap} Hermite modes (tail fraction {math.sqrt(tail / energy):.2e})"
        )
    cmax = float(np.abs(c).max())
    live = tot[(np.abs(c) > tol * cmax) & (tot <= cap)]
    deg = int(live.max()) if live.size else 0
    c = np.where(tot <= deg, c, 0.0)
    return HermitePoly(c, deg)


# ---------------------------------------------------------------------------
# Burnett functions


def _lognorm(n: int, l: int) -> float:
    return -0.5 * (-1.5 * math.log(2.0 * math.pi) + (l + 0.5) * math.log(2.0) + special.gammaln(n + l + 1.5) - special.gammaln(n + 1))


def real_sph_harm(l: int, m: int, X: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(X**2, axis=-1))
    safe = np.where(r > 0, r, 1.0)
    ct = np.clip(np.where(r > 0, X[..., 2] / safe, 1.0), -1.0, 1.0)
    theta = np.arccos(ct)
    ph = np.arctan2(X[..., 1], X[..., 0])
    Y = special.sph_harm_y(l, abs(m), theta, ph)
    if m == 0:
        return Y.real
    s = math.sqrt(2.0) * (-1.0) ** m
    return s * (Y.real if m > 0 else Y.imag)


def burnett_radial(n: int, l: int, r: np.ndarray) -> np.ndarray:
    return math.exp(_lognorm(n, l)) * special.eval_genlaguerre(n, l + 0.5, 0.5 * r**2) * r**l


def burnett_function(n: int, l: int, m: int, X: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(X**2, axis=-1))
    return burnett_radial(n, l, r) * real_sph_harm(l, m, X)


def burnett_index(D: int) -> list[tuple[int, int, int]]:
    out = []
    for l in range(D + 1):
        for n in range((D - l) // 2 + 1):
            for m in range(-l, l + 1):
                out.append((n, l, m))
    return out


class BurnettPoly(Poly):
    """sum_k c_k p_{n_k l_k m_k}(xi) over the Burnett index set."""

    def __init__(self, index: Sequence[tuple[int, int, int]], coef: np.ndarray, tol: float = 0.0):
        coef = np.asarray(coef, dtype=float)
        keep = np.abs(coef) > tol * (np.abs(coef).max() if coef.size else 0.0)
        self.terms = [(index[i], float(coef[i])) for i in np.flatnonzero(keep)]
        self.deg = max((2 * n + l for (n, l, _), _ in self.terms), default=0)

    def __call__(self, X):
        out = np.zeros(X.shape[:-1])
        r = np.sqrt(np.sum(X**2, axis=-1))
        rad: dict[tuple[int, int], np.ndarray] = {}
        ang: dict[tuple[int, int], np.ndarray] = {}
        for (n, l, m), c in self.terms:
            if (n, l) not in rad:
                rad[(n, l)] = burnett_radial(n, l, r)
            if (l, m) not in ang:
                ang[(l, m)] = real_sph_harm(l, m, X)
            out += c * rad[(n, l)] * ang[(l, m)]
        return out


def _one() -> Poly:
    return CallablePoly(lambda X: np.ones(X.shape[:-1]), 0)


# ---------------------------------------------------------------------------
# collision integral


def radon_Q(
    Fp: Poly,
    Gp: Poly,
    xi: np.ndarray,
    sphere: tuple[np.ndarray, np.ndarray],
    chunk: int = 128,
) -> tuple[np.ndarray, np.ndarray]:
    """(gain, loss) of the symmetrized hard-sphere Q(F, G) with F = Fp mu, G = Gp mu.

    Points xi are comoving velocities. The v* integral for fixed sigma is done in
    closed form; the sigma integral uses the supplied sphere rule.
    """
    sig, ws = sphere
    gF = Fp.marginals(sig)
    gG = gF if Gp is Fp else Gp.marginals(sig)
    lines = {}

    def line_rule(D: Poly):
        if D.deg not in lines:
            t, w = gh_rule(D.deg + 1)
            H = he_table(t, D.deg) / special.factorial(np.arange(D.deg + 1))[:, None]
            lines[D.deg] = (t, w, H)
        return lines[D.deg]

    xi = np.asarray(xi, dtype=float).reshape(-1, 3)
    gain = np.empty(len(xi))
    loss = np.empty(len(xi))
    for s0 in range(0, len(xi), chunk):
        v = xi[s0 : s0 + chunk]
        y0 = v @ sig.T
        zeta = v[:, None, :] - y0[..., None] * sig[None]
        phi2 = np.exp(-0.5 * np.sum(zeta**2, axis=-1)) / (2.0 * math.pi)
        phi1 = np.exp(-0.5 * y0**2) / SQ2PI

        def A(D: Poly) -> np.ndarray:
            t, w, H = line_rule(D)
            pts = zeta[:, :, None, :] + t[None, None, :, None] * sig[None, :, None, :]
            P = D(pts.reshape(-1, 3)).reshape(pts.shape[:3])
            c = np.einsum("bsn,n,kn->bsk", P, w, H)
            return phi2 * np.einsum("bsk,kbs->bs", c, J_table(y0, D.deg))

        def marg(g, deg):
            return phi1 * np.einsum("sk,kbs->bs", g, he_table(y0, deg))

        def nu(g, deg):
            return np.einsum("sk,kbs->bs", g, J_table(y0, deg)) @ ws

        AF = A(Fp)
        AG = AF if Gp is Fp else A(Gp)
        gain[s0 : s0 + chunk] = 0.5 * ((AF * marg(gG, Gp.deg) + AG * marg(gF, Fp.deg)) @ ws)
        ph3 = phi3(v)
        loss[s0 : s0 + chunk] = 0.5 * ph3 * (Fp(v) * nu(gG, Gp.deg) + Gp(v) * nu(gF, Fp.deg))
    return gain, loss


def _as_density_poly(x: KineticVector) -> Poly:
    if x.poly is not None and x.tag == "F":
        return x.poly
    if x.poly is not None and x.tag == "f":
        # F = sqrt(mu) f = poly * mu
        return x.poly
    return to_poly(x)


def collision_Q_direct(
    F: KineticVector,
    G: KineticVector,
    sphere: tuple[int, int] = DEFAULT_SPHERE,
    return_parts: bool = False,
):
    """Symmetrized hard-sphere Q(F, G) at the grid nodes (density tag "F")."""
    if F.grid != G.grid:
        raise ValueError("operands live on different grids")
    grid = F.grid
    Fp, Gp = _as_density_poly(F), _as_density_poly(G)
    gain, loss = radon_Q(Fp, Gp, grid.xi, sphere_rule(*sphere))
    out = KineticVector(grid, gain - loss, "F")
    return (out, gain, loss) if return_parts else out


def gamma_apply(
    f: KineticVector,
    g: KineticVector,
    sphere: tuple[int, int] = DEFAULT_SPHERE,
    points: np.ndarray | None = None,
) -> KineticVector | np.ndarray:
    """Gamma(f, g) = Q(sqrt(mu) f, sqrt(mu) g) / sqrt(mu).

    With ``points`` (comoving velocities) the raw values there are returned.
    """
    if f.grid != g.grid:
        raise ValueError("operands live on different grids")
    Fp = _as_density_poly(KineticVector(f.grid, f.values, "f", f.poly))
    Gp = Fp if g is f else _as_density_poly(KineticVector(g.grid, g.values, "f", g.poly))
    xi = f.grid.xi if points is None else np.asarray(points, dtype=float)
    gain, loss = radon_Q(Fp, Gp, xi, sphere_rule(*sphere))
    vals = (gain - loss) / np.sqrt(phi3(xi))
    return KineticVector(f.grid, vals, "f") if points is None else vals


# ---------------------------------------------------------------------------
# collision frequency and kernel


def nu_shape(r) -> np.ndarray:
    """(r + 1/r) int_0^r exp(-z^2/2) dz + exp(-r^2/2), with its limit 2 at r = 0."""
    r = np.asarray(r, dtype=float)
    erfint = math.sqrt(math.pi / 2.0) * special.erf(r / math.sqrt(2.0))
    small = r < 1e-6
    rs = np.where(small, 1.0, r)
    big = (rs + 1.0 / rs) * erfint + np.exp(-0.5 * r**2)
    return np.where(small, 2.0 + r**2 / 3.0, big)


def nu_direct(r: np.ndarray, sphere: tuple[int, int] = DEFAULT_SPHERE) -> np.ndarray:
    """int int |(v - v*) . sigma| mu(v*) dsigma dv* for |v| = r, by the line formula."""
    sig, ws = sphere_rule(*sphere)
    r = np.asarray(r, dtype=float)
    y = np.outer(r, sig[:, 2])
    return J_table(y, 0)[0] @ ws


def fit_c1(sphere: tuple[int, int] = DEFAULT_SPHERE, n: int = 61) -> tuple[float, float]:
    """Least-squares c1 on r in [0, 6]; returns (c1, max relative residual)."""
    r = np.linspace(0.0, 6.0, n)
    d = nu_direct(r, sphere)
    s = nu_shape(r)
    c1 = float(np.dot(s, d) / np.dot(s, s))
    return c1, float(np.max(np.abs(c1 * s - d) / np.abs(d)))


def nu_eval(r, model: "CollisionModel | float") -> np.ndarray:
    c1 = model if isinstance(model, (int, float)) else model.c1
    return c1 * nu_shape(r)


def nu0_constant(c1: float, rmax: float = 8.0) -> float:
    """Largest nu0 with nu0 (r + 1) <= nu(r) on [0, rmax]."""
    r = np.linspace(0.0, rmax, 1601)
    q = nu_eval(r, c1) / (r + 1.0)
    i = int(np.argmin(q))
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, len(r) - 1)]
    res = optimize.minimize_scalar(lambda x: float(nu_eval(x, c1) / (x + 1.0)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(min(res.fun, q[i])) * (1.0 - 1e-12)


def k_terms(v: np.ndarray, vs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two closed-form kernel shapes (comoving velocities), without constants."""
    d = v - vs
    rho2 = np.sum(d**2, axis=-1)
    rho = np.sqrt(rho2)
    a2 = np.sum(v**2, axis=-1)
    b2 = np.sum(vs**2, axis=-1)
    t1 = rho * np.exp(-(a2 + b2) / 4.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t2 = np.exp(-rho2 / 8.0 - (a2 - b2) ** 2 / (8.0 * rho2)) / rho
    return t1, t2


def k_closed(v, vs, c2: float, c3: float) -> np.ndarray:
    t1, t2 = k_terms(np.asarray(v, float), np.asarray(vs, float))
    return c2 * t1 - c3 * t2


def _polar_rule(n_r: int = 48, R: float = 10.0, sphere: tuple[int, int] = (12, 24)):
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R * (x + 1.0)
    wr = 0.5 * R * w
    om, wo = sphere_rule(*sphere)
    return r, wr, om, wo


def k_action_terms(v: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """int t_i(v, v*) fn(v*) dv* for the two kernel shapes, shape (len(v), 2)."""
    r, wr, om, wo = _polar_rule()
    out = np.empty((len(v), 2))
    for i, x in enumerate(v):
        vs = x[None, None, :] + r[:, None, None] * om[None, :, :]
        t1, t2 = k_terms(np.broadcast_to(x, vs.shape), vs)
        f = fn(vs.reshape(-1, 3)).reshape(vs.shape[:2])
        jac = (wr * r**2)[:, None] * wo[None, :]
        out[i, 0] = np.sum(jac * t1 * f)
        out[i, 1] = np.sum(jac * t2 * f)
    return out


# ---------------------------------------------------------------------------
# Galerkin representation of L


@lru_cache(maxsize=4)
def galerkin_blocks(
    D: int,
    sphere: tuple[int, int] = GALERKIN_SPHERE,
    n_r: int = RADIAL_NODES,
    R: float = RADIAL_CUT,
) -> tuple[dict[int, np.ndarray], float]:
    """Raw radial blocks Lambda^l_{nn'} = <L p_{nl0}, p_{n'l0}> and the largest asymmetry."""
    rule = sphere_rule(*sphere)
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R * (x + 1.0)
    wr = 0.5 * R * w
    pts = np.stack([0.0 * r, 0.0 * r, r], axis=-1)
    one = _one()
    blocks = {}
    asym = 0.0
    for l in range(D + 1):
        ns = (D - l) // 2 + 1
        Y2 = (2 * l + 1) / (4.0 * math.pi)
        rad = np.array([burnett_radial(n, l, r) for n in range(ns)]) * math.sqrt(Y2)
        M = np.zeros((ns, ns))
        for a in range(ns):
            pa = BurnettPoly([(a, l, 0)], np.array([1.0]))
            gain, loss = radon_Q(one, pa, pts, rule)
            q = gain - loss
            M[a] = -2.0 * (wr * r**2 * q) @ rad.T / Y2
        asym = max(asym, float(np.abs(M - M.T).max()))
        blocks[l] = M
    return blocks, asym


NULL_MODES = {(0, 0), (1, 0), (0, 1)}  # (n, l) pairs spanning the collision invariants


@dataclass
class CollisionModel:
    """Linearized hard-sphere operator on one comoving grid."""

    grid: VelocityGrid
    D: int
    sphere: tuple[int, int]
    c1: float
    c1_residual: float
    c2: float
    c3: float
    k_residual: float
    raw_asymmetry: float
    index: list[tuple[int, int, int]]
    Lam: np.ndarray  # Galerkin matrix on the Burnett index set (null modes removed)
    null_mask: np.ndarray

    @property
    def U(self) -> tuple[float, float, float]:
        return self.grid.U

    @cached_property
    def Phi(self) -> np.ndarray:
        """Sampled Burnett vectors p_k sqrt(mu), one column per index."""
        xi = self.grid.xi
        cols = np.empty((len(xi), len(self.index)))
        r = np.sqrt(np.sum(xi**2, axis=-1))
        ang: dict[tuple[int, int], np.ndarray] = {}
        for j, (n, l, m) in enumerate(self.index):
            if (l, m) not in ang:
                ang[(l, m)] = real_sph_harm(l, m, xi)
            cols[:, j] = burnett_radial(n, l, r) * ang[(l, m)]
        return cols * self.grid.sqrt_mu[:, None]

    @cached_property
    def nu(self) -> np.ndarray:
        return nu_eval(np.sqrt(np.sum(self.grid.xi**2, axis=-1)), self.c1)

    @cached_property
    def G_nu(self) -> np.ndarray:
        P = self.Phi
        return P.T @ ((self.grid.weights * self.nu)[:, None] * P)

    @cached_property
    def _ginv_factor(self):
        P = self.Phi
        G = P.T @ ((self.grid.weights / self.nu)[:, None] * P)
        return linalg.cho_factor(G)

    @cached_property
    def _lam_solver(self):
        live = ~self.null_mask
        return live, linalg.cho_factor(self.Lam[np.ix_(live, live)])

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        return self.Phi.T @ (self.grid.weights * f)

    def apply(self, f: KineticVector | np.ndarray) -> KineticVector:
        vals = f.values if isinstance(f, KineticVector) else np.asarray(f, dtype=float)
        c = self.coefficients(vals)
        comp = vals - self.Phi @ c
        nc = self.nu * comp
        nc = nc - self.Phi @ self.coefficients(nc)
        return KineticVector(self.grid, self.Phi @ (self.Lam @ c) + nc, "f")

    def L_dense(self) -> np.ndarray:
        """Nodal matrix A with (A f)_i = (L f)(xi_i)."""
        N = self.grid.size
        P = self.Phi
        w = self.grid.weights
        Pi = P @ (P.T * w[None, :])
        I_Pi = np.eye(N) - Pi
        return P @ self.Lam @ (P.T * w[None, :]) + I_Pi @ (self.nu[:, None] * I_Pi)

    @property
    def L_matrix(self) -> np.ndarray:
        """Symmetric representation sqrt(w) A / sqrt(w)."""
        s = np.sqrt(self.grid.weights)
        Psi = self.Phi * s[:, None]
        N = self.grid.size
        Q = np.eye(N) - Psi @ Psi.T
        S = Psi @ self.Lam @ Psi.T + Q @ (self.nu[:, None] * Q)
        return 0.5 * (S + S.T)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """x in the non-null subspace with L x = b (b orthogonal to the null space)."""
        c = self.coefficients(b)
        bc = b - self.Phi @ c
        live, fac = self._lam_solver
        alpha = np.zeros_like(c)
        alpha[live] = linalg.cho_solve(fac, c[live])
        t = self.Phi.T @ (self.grid.weights * bc / self.nu)
        gamma = -linalg.cho_solve(self._ginv_factor, t)
        xc = (bc + self.Phi @ gamma) / self.nu
        return self.Phi @ alpha + xc

    @cached_property
    def delta0(self) -> float:
        """Smallest generalized eigenvalue of (Lambda, G_nu) off the null space."""
        live = ~self.null_mask
        ev = linalg.eigh(self.Lam[np.ix_(live, live)], self.G_nu[np.ix_(live, live)], eigvals_only=True)
        return float(ev.min())

    @cached_property
    def basis(self) -> HydroBasis:
        return hydro_basis(self.grid)

    def burnett_poly(self, coef: np.ndarray) -> BurnettPoly:
        return BurnettPoly(self.index, coef, tol=1e-15)


def _assemble_lambda(index, blocks) -> tuple[np.ndarray, np.ndarray]:
    m = len(index)
    Lam = np.zeros((m, m))
    null = np.zeros(m, dtype=bool)
    pos: dict[tuple[int, int], list[int]] = {}
    for j, (n, l, mm) in enumerate(index):
        pos.setdefault((l, mm), []).append(j)
        if (n, l) in NULL_MODES:
            null[j] = True
    for (l, mm), js in pos.items():
        B = blocks[l]
        B = 0.5 * (B + B.T)
        ns = [index[j][0] for j in js]
        Lam[np.ix_(js, js)] = B[np.ix_(ns, ns)]
    Lam[null, :] = 0.0
    Lam[:, null] = 0.0
    return Lam, null


def fit_kernel_constants(c1: float, sphere: tuple[int, int] = DEFAULT_SPHERE, n_points: int = 100, seed: int = 0):
    """Fit (c2, c3) from K f = nu f - L f on test functions at random velocities.

    L f comes from the exact collision integral; K f from the closed-form kernel
    integrated in polar coordinates around each point. Returns (c2, c3, rel residual).
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_points, 3)) * 1.2
    rule = sphere_rule(*sphere)
    tests = [
        CallablePoly(lambda X: np.ones(X.shape[:-1]), 0),
        CallablePoly(lambda X: X[..., 0], 1),
        CallablePoly(lambda X: X[..., 0] * X[..., 1], 2),
        CallablePoly(lambda X: np.sum(X**2, axis=-1) - 3.0, 2),
        CallablePoly(lambda X: X[..., 2] ** 3 - 3.0 * X[..., 2], 3),
    ]
    one = _one()
    rows, rhs = [], []
    for p in tests:
        gain, loss = radon_Q(one, p, v, rule)
        sq = np.sqrt(phi3(v))
        Lf = -2.0 * (gain - loss) / sq
        f = p(v) * sq
        Kf = nu_eval(np.linalg.norm(v, axis=1), c1) * f - Lf
        terms = k_action_terms(v, lambda X, p=p: p(X) * np.sqrt(phi3(X)))
        rows.append(np.stack([terms[:, 0], -terms[:, 1]], axis=1))
        rhs.append(Kf)
    A = np.concatenate(rows)
    b = np.concatenate(rhs)
    (c2, c3), *_ = np.linalg.lstsq(A, b, rcond=None)
    res = float(np.linalg.norm(A @ np.array([c2, c3]) - b) / np.linalg.norm(b))
    return float(c2), float(c3), res


@lru_cache(maxsize=2)
def _kernel_constants(c1: float, sphere: tuple[int, int]):
    return fit_kernel_constants(c1, sphere)


def build_L(
    U: Sequence[float] = (0.0, 0.0, 0.0),
    n_v: int = 20,
    sphere: tuple[int, int] = DEFAULT_SPHERE,
    D: int | None = None,
    galerkin_sphere: tuple[int, int] = GALERKIN_SPHERE,
    fit_kernel: bool = True,
) -> CollisionModel:
    U = tuple(float(a) for a in (list(U) + [0.0] * 3)[:3])
    if math.hypot(*U) > MAX_SHIFT:
        raise UnderResolvedShift(f"|U| = {math.hypot(*U):.3g} exceeds the validated shift {MAX_SHIFT}")
    if n_v < 16 and any(U):
        raise UnderResolvedShift("shifted operators need n_v >= 16")
    grid = VelocityGrid(n_v, U)
    D = min(n_v - 1, DEGREE_CAP) if D is None else D
    c1, c1_res = fit_c1(sphere)
    blocks, asym = galerkin_blocks(D, galerkin_sphere)
    index = burnett_index(D)
    Lam, null = _assemble_lambda(index, blocks)
    c2, c3, kres = _kernel_constants(c1, sphere) if fit_kernel else (math.nan, math.nan, math.nan)
    return CollisionModel(grid, D, sphere, c1, c1_res, c2, c3, kres, asym, index, Lam, null)


def L_inverse_solve(rhs: KineticVector, model: CollisionModel, tol: float = 1e-8) -> KineticVector:
    basis = model.basis
    pf, comp = project_P(rhs, basis)
    nr = rhs.norm()
    if nr == 0.0:
        return KineticVector(rhs.grid, np.zeros_like(rhs.values), "f")
    if pf.norm() > tol * nr:
        raise HydrodynamicRHS(f"right-hand side has hydrodynamic part {pf.norm() / nr:.2e} (relative)")
    x = model.solve(comp.values)
    _, xc = project_P(KineticVector(rhs.grid, x, "f"), basis)
    return xc


# ---------------------------------------------------------------------------
# Burnett tensor and viscosity


@dataclass
class BurnettTensor:
    """A_ij = L^{-1}((xi_i xi_j - delta_ij |xi|^2 / 3) sqrt(mu)) and eta0."""

    model: CollisionModel
    A: list[list[KineticVector]]
    coef: np.ndarray  # (3, 3, m) Burnett coefficients of A_ij
    eta0: float

    def inner_L(self, i, j, k, l) -> float:
        a, b = self.A[i][j], self.A[k][l]
        return self.model.apply(a).inner(b)


def burnett_source(grid: VelocityGrid, i: int, j: int) -> KineticVector:
    p = CallablePoly(
        lambda X, i=i, j=j: X[..., i] * X[..., j] - (np.sum(X**2, axis=-1) / 3.0 if i == j else 0.0), 2
    )
    return from_poly(grid, p)


def burnett_matrix(model: CollisionModel) -> BurnettTensor:
    grid = model.grid
    live, fac = model._lam_solver
    coef = np.zeros((3, 3, len(model.index)))
    A = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(i, 3):
            b = burnett_source(grid, i, j)
            c = model.coefficients(b.values)
            a = np.zeros_like(c)
            a[live] = linalg.cho_solve(fac, c[live])
            coef[i, j] = coef[j, i] = a
            poly = model.burnett_poly(a)
            vec = KineticVector(grid, model.Phi @ a, "f", poly)
            A[i][j] = A[j][i] = vec
    c12 = model.coefficients(burnett_source(grid, 0, 1).values)
    eta0 = float(c12 @ coef[0, 1])
    return BurnettTensor(model, A, coef, eta0)


# ---------------------------------------------------------------------------
# weights and the weighted kernel


@dataclass(frozen=True)
class WeightSpec:
    vartheta: float
    U: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not 0.0 < self.vartheta < 0.25:
            raise ValueError("vartheta must lie in (0, 1/4)")


def log_weight(v: np.ndarray, spec: WeightSpec) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    U = np.asarray(spec.U, dtype=float)
    return spec.vartheta * np.sum(v**2, axis=-1) - 0.5 * (v[..., 0] * U[0] + v[..., 1] * U[1])


def weight(v: np.ndarray, spec: WeightSpec) -> np.ndarray:
    """w(v) = exp(vartheta |v|^2 - U . v_bar / 2), v_bar the planar components."""
    return np.exp(log_weight(v, spec))


@dataclass
class KernelReport:
    C_vartheta: float
    envelope_C: float
    radii: np.ndarray
    integrals: np.ndarray
    integral_C: float
    peak_radius: float
    decreasing_beyond_peak: bool
    passed: bool


def weighted_kernel_check(
    spec: WeightSpec,
    model: CollisionModel,
    n_pairs: int = 2000,
    radii: Sequence[float] = (0, 1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 20, 24),
    seed: int = 0,
) -> KernelReport:
    """Sample k_w on node pairs and tabulate int (1 + |v - v*|) k_w(v, v*) dv*.

    The Gaussian envelope rate C_vartheta is the analytic one for the two kernel
    terms (halved to absorb polynomial factors); its prefactor is fitted. The
    integral bound is checked as sup_v nu(v) * int(...) < inf with a fitted constant.
    """
    th = spec.vartheta
    C_th = 0.5 * min((1.0 - 16.0 * th**2) / 4.0, 0.25 - th)
    U = np.asarray(model.U)
    rng = np.random.default_rng(seed)
    nodes = model.grid.nodes
    inside = nodes[np.linalg.norm(nodes - U, axis=1) <= 6.0]
    i = rng.integers(0, len(inside), n_pairs)
    j = rng.integers(0, len(inside), n_pairs)
    keep = i != j
    v, vs = inside[i[keep]], inside[j[keep]]
    k = np.abs(k_closed(v - U, vs - U, model.c2, model.c3))
    kw = k * np.exp(log_weight(v, spec) - log_weight(vs, spec))
    rho = np.linalg.norm(v - vs, axis=1)
    env = np.exp(-C_th * rho**2 / 2.0) / rho
    C = float((kw / env).max())
    radii = np.asarray(radii, dtype=float)
    r, wr, om, wo = _polar_rule(200, 40.0, (48, 96))
    jac = (wr * r**2)[:, None] * wo[None, :]
    ints = []
    for a in radii:
        x = U + np.array([a, 0.0, 0.0])
        vstar = x[None, None, :] + r[:, None, None] * om[None, :, :]
        kk = np.abs(k_closed(np.broadcast_to(x - U, vstar.shape), vstar - U, model.c2, model.c3))
        kk = kk * np.exp(log_weight(x, spec) - log_weight(vstar, spec))
        ints.append(float(np.sum(jac * (1.0 + r[:, None]) * kk)))
    ints = np.array(ints)
    scaled = ints * nu_eval(radii, model)
    peak = int(np.argmax(ints))
    dec = bool(np.all(np.diff(ints[peak:]) < 0.0))
    # the tail must not grow faster than 1/nu: the scaled integral stays below its running max
    bounded = bool(scaled[-1] <= scaled.max() and scaled[-1] <= 1.05 * scaled[-2])
    passed = bool(np.isfinite(C) and dec and bounded)
    return KernelReport(C_th, C, radii, ints, float(scaled.max()), float(radii[peak]), dec, passed)


# ---------------------------------------------------------------------------
# operator cache


def write_operator_cache(path: str | Path, model: CollisionModel) -> None:
    S = model.L_matrix
    iu = np.triu_indices(S.shape[0])
    with open(path, "wb") as fh:
        fh.write(LOP_MAGIC)
        fh.write(struct.pack("<I", model.grid.n_v))
        fh.write(struct.pack("<3d", *model.U))
        fh.write(struct.pack("<3d", model.c1, model.c2, model.c3))
        fh.write(np.ascontiguousarray(S[iu], dtype="<f8").tobytes())


def read_operator_cache(path: str | Path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != LOP_MAGIC:
        raise ValueError(f"{path}: bad operator cache magic")
    (n_v,) = struct.unpack("<I", data[8:12])
    U = struct.unpack("<3d", data[12:36])
    c = struct.unpack("<3d", data[36:60])
    N = n_v**3
    packed = np.frombuffer(data[60:], dtype="<f8")
    if packed.size != N * (N + 1) // 2:
        raise ValueError(f"{path}: truncated operator cache")
    S = np.zeros((N, N))
    iu = np.triu_indices(N)
    S[iu] = packed
    S = S + S.T - np.diag(np.diag(S))
    return {"n_v": n_v, "U": U, "c1": c[0], "c2": c[1], "c3": c[2], "L_matrix": S}
