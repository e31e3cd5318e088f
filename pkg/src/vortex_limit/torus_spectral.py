"""Periodic field arithmetic on the unit torus [-1/2, 1/2)^2.

Fourier convention: f(x) = sum_k c_k exp(2 pi i k.x), so (-Delta)^{-1}
divides coefficient k by 4 pi^2 |k|^2. Arrays are indexed [i1, i2] with
x_a = -1/2 + i_a h.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .errors import BadExponent, LatticeSingularity, NonZeroMean, UnderResolved

TWO_PI = 2.0 * math.pi
F2D_MAGIC = b"VLIM-F2D" + b"\0" * 7 + b"\1"


@dataclass(frozen=True)
class GridSpec2D:
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 + self.h * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers in FFT order."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, np.ndarray]:
        return self.k[:, None], self.k[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        k1, k2 = self.wavevectors
        return k1**2 + k2**2

    @cached_property
    def phase(self) -> np.ndarray:
        """(-1)^(k1+k2): converts FFT output to coefficients on [-1/2,1/2)."""
        s = np.where(self.k.astype(int) % 2 == 0, 1.0, -1.0)
        return s[:, None] * s[None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.n / 2.0
        k1, k2 = self.wavevectors
        return (np.abs(k1) < cut) & (np.abs(k2) < cut)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on the modes that odd derivatives must zero."""
        ny = self.n // 2
        k1, k2 = self.wavevectors
        return (np.abs(k1) == ny) | (np.abs(k2) == ny)


def to_spectrum(values: np.ndarray) -> np.ndarray:
    n = values.shape[0]
    s = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return sfft.fft2(values) / n**2 * (s[:, None] * s[None, :])


def from_spectrum(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[0]
    s = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return sfft.ifft2(coeffs * (s[:, None] * s[None, :]) * n**2).real


class ScalarField2D:
    """Real samples on a GridSpec2D with a lazily cached spectrum."""

    def __init__(self, grid: GridSpec2D, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.n):
            raise ValueError(f"values shape {values.shape} does not match grid n={grid.n}")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    @classmethod
    def from_spectrum(cls, grid: GridSpec2D, coeffs: np.ndarray) -> "ScalarField2D":
        f = cls(grid, from_spectrum(coeffs))
        f.__dict__["spectrum"] = coeffs
        return f

    @classmethod
    def from_function(cls, grid: GridSpec2D, fn) -> "ScalarField2D":
        X1, X2 = grid.mesh
        return cls(grid, np.broadcast_to(fn(X1, X2), (grid.n, grid.n)).copy())

    @cached_property
    def spectrum(self) -> np.ndarray:
        return to_spectrum(self.values)

    @property
    def n(self) -> int:
        return self.grid.n

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other):
        return ScalarField2D(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField2D(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField2D(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField2D(self.grid, -self.values)


def _vals(other):
    return other.values if isinstance(other, ScalarField2D) else other


@dataclass
class VectorField2D:
    u1: ScalarField2D
    u2: ScalarField2D

    def __post_init__(self):
        if self.u1.grid != self.u2.grid:
            raise ValueError("components must share a grid")

    @property
    def grid(self) -> GridSpec2D:
        return self.u1.grid

    @property
    def components(self) -> tuple[ScalarField2D, ScalarField2D]:
        return self.u1, self.u2

    def stack(self) -> np.ndarray:
        return np.stack([self.u1.values, self.u2.values])

    @classmethod
    def from_arrays(cls, grid: GridSpec2D, a1: np.ndarray, a2: np.ndarray) -> "VectorField2D":
        return cls(ScalarField2D(grid, a1), ScalarField2D(grid, a2))

    def __add__(self, other: "VectorField2D") -> "VectorField2D":
        return VectorField2D(self.u1 + other.u1, self.u2 + other.u2)

    def __sub__(self, other: "VectorField2D") -> "VectorField2D":
        return VectorField2D(self.u1 - other.u1, self.u2 - other.u2)

    def __mul__(self, c: float) -> "VectorField2D":
        return VectorField2D(self.u1 * c, self.u2 * c)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# spectral calculus


def derivative(field: ScalarField2D, order: tuple[int, int]) -> ScalarField2D:
    """Spectral partial derivative d1^a d2^b."""
    a, b = order
    g = field.grid
    k1, k2 = g.wavevectors
    mult = (1j * TWO_PI * k1) ** a * (1j * TWO_PI * k2) ** b
    c = field.spectrum * mult
    if (a + b) % 2 == 1:
        c = np.where(g.nyquist_mask, 0.0, c)
    return ScalarField2D.from_spectrum(g, c)


def gradient(field: ScalarField2D) -> VectorField2D:
    return VectorField2D(derivative(field, (1, 0)), derivative(field, (0, 1)))


def divergence(u: VectorField2D) -> ScalarField2D:
    return derivative(u.u1, (1, 0)) + derivative(u.u2, (0, 1))


def curl(u: VectorField2D) -> ScalarField2D:
    """Scalar curl grad_perp . u = d1 u2 - d2 u1."""
    return derivative(u.u2, (1, 0)) - derivative(u.u1, (0, 1))


def laplacian(field: ScalarField2D) -> ScalarField2D:
    g = field.grid
    return ScalarField2D.from_spectrum(g, -4.0 * math.pi**2 * g.k2 * field.spectrum)


def inverse_neg_laplacian_coeffs(grid: GridSpec2D, coeffs: np.ndarray) -> np.ndarray:
    k2 = grid.k2
    out = np.zeros_like(coeffs)
    nz = k2 > 0
    out[nz] = coeffs[nz] / (4.0 * math.pi**2 * k2[nz])
    return out


def leray_project(u: VectorField2D) -> VectorField2D:
    """Divergence-free part of u (the mean is kept)."""
    g = u.grid
    k1, k2 = g.wavevectors
    c1, c2 = u.u1.spectrum, u.u2.spectrum
    kk = np.where(g.k2 > 0, g.k2, 1.0)
    dot = (k1 * c1 + k2 * c2) / kk
    p1 = c1 - k1 * dot
    p2 = c2 - k2 * dot
    return VectorField2D(ScalarField2D.from_spectrum(g, p1), ScalarField2D.from_spectrum(g, p2))


def poisson_inverse(omega: ScalarField2D) -> ScalarField2D:
    """Zero-mean psi with -Delta psi = omega."""
    c = omega.spectrum
    norm = float(np.sqrt(np.mean(omega.values**2)))
    if abs(c[0, 0]) > 1e-10 * max(norm, 1e-300) and abs(c[0, 0]) > 1e-300:
        raise NonZeroMean(f"vorticity mean {c[0, 0].real:.3e} is not zero")
    return ScalarField2D.from_spectrum(omega.grid, inverse_neg_laplacian_coeffs(omega.grid, c))


def biot_savart(omega: ScalarField2D) -> VectorField2D:
    """u = -grad_perp psi = (d2 psi, -d1 psi)."""
    psi = poisson_inverse(omega)
    return VectorField2D(derivative(psi, (0, 1)), -derivative(psi, (1, 0)))


def evaluate(field: ScalarField2D, points: np.ndarray) -> np.ndarray:
    """Exact trigonometric interpolation of a sampled field at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = field.grid.k
    e1 = np.exp(1j * TWO_PI * np.outer(pts[:, 0], k))
    e2 = np.exp(1j * TWO_PI * np.outer(pts[:, 1], k))
    return np.einsum("pk,pk->p", e1 @ field.spectrum, e2).real


# ---------------------------------------------------------------------------
# Green's function of -Delta on the torus


@dataclass(frozen=True)
class GreenKernelEval:
    r_cut: float = 0.1
    truncation_terms: int = 20


def wrap(x: np.ndarray) -> np.ndarray:
    """Representative in [-1/2, 1/2)."""
    return (np.asarray(x, dtype=float) + 0.5) % 1.0 - 0.5


def green_kernel(x, spec: GreenKernelEval = GreenKernelEval()) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean periodic Green's function G and its gradient.

    Accepts a single point (shape (2,)) or an array of points (..., 2).
    """
    pts = wrap(np.asarray(x, dtype=float))
    d = np.sqrt(np.sum(pts**2, axis=-1))
    if np.any(d < 1e-8):
        raise LatticeSingularity("green_kernel evaluated within 1e-8 of a lattice point")
    z = pts[..., 0] + 1j * pts[..., 1]
    y = pts[..., 1]
    # factor 1 - e(z): use expm1 for accuracy near z = 0
    q = -np.expm1(2j * math.pi * z)
    logh = np.log(np.abs(q))
    eq = np.exp(2j * math.pi * z)
    dlog = -2j * math.pi * eq / q
    for n in range(1, spec.truncation_terms + 1):
        for sgn in (1.0, -1.0):
            e = np.exp(2j * math.pi * (1j * n + sgn * z))
            one_minus = 1.0 - e
            logh = logh + np.log(np.abs(one_minus))
            dlog = dlog - sgn * 2j * math.pi * e / one_minus
    G = 0.5 * y**2 - 0.5 * y + 1.0 / 12.0 - logh / TWO_PI
    gx = -dlog.real / TWO_PI
    gy = (y - 0.5) + dlog.imag / TWO_PI
    grad = np.stack([gx, gy], axis=-1)
    if np.ndim(x) == 1:
        return float(G), grad
    return G, grad


def _cutoff(r: np.ndarray, r1: float, r2: float) -> np.ndarray:
    """C-infinity step: 1 for r <= r1, 0 for r >= r2."""
    t = np.clip((r2 - r) / (r2 - r1), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def biot_savart_kernel(
    omega: ScalarField2D,
    points: np.ndarray,
    spec: GreenKernelEval = GreenKernelEval(),
    r_outer: float = 0.45,
    n_r: int = 64,
    n_theta: int = 128,
) -> np.ndarray:
    """Velocity b * omega at points by direct quadrature of the periodic kernel.

    b = -grad_perp G. A smooth cutoff splits the kernel: the part near the
    singularity is integrated in polar coordinates (the 1/r singularity is
    absorbed by the Jacobian), the rest by the periodic trapezoid rule.
    """
    g = omega.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r1 = spec.r_cut
    # polar part
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * r_outer * (xr + 1.0)
    wr = 0.5 * r_outer * wr
    th = TWO_PI * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    zp = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
    _, gz = green_kernel(zp, spec)
    b = np.stack([gz[:, 1], -gz[:, 0]], axis=-1)
    wpol = (wr[:, None] * r[:, None] * _cutoff(R, r1, r_outer)).ravel() * (TWO_PI / n_theta)
    out = np.zeros((len(pts), 2))
    for i, x in enumerate(pts):
        om = evaluate(omega, x[None, :] - zp)
        out[i] = (wpol * om) @ b
    # smooth remainder on the grid: z_j centred at the origin node
    X1, X2 = g.mesh
    zg = np.stack([X1, X2], axis=-1)
    rg = np.sqrt(X1**2 + X2**2)
    far = 1.0 - _cutoff(rg, r1, r_outer)
    mask = far > 0
    _, gg = green_kernel(zg[mask], spec)
    bg = np.zeros(zg.shape)
    bg[mask, 0] = gg[:, 1]
    bg[mask, 1] = -gg[:, 0]
    bg *= far[..., None] * g.h**2
    for i, x in enumerate(pts):
        shifted = x[None, None, :] - zg
        om = evaluate(omega, shifted.reshape(-1, 2)).reshape(g.n, g.n)
        out[i] += np.einsum("ij,ijc->c", om, bg)
    return out


# ---------------------------------------------------------------------------
# mollification and norms


@dataclass(frozen=True)
class MollifierSpec:
    beta: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")


def bump(r: np.ndarray) -> np.ndarray:
    """Unnormalized bump exp(-1/(1-(4r)^2)) supported in r < 1/4."""
    s = (4.0 * np.asarray(r, dtype=float)) ** 2
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


def mollifier_kernel(grid: GridSpec2D, spec: MollifierSpec) -> ScalarField2D:
    """phi^beta sampled on the grid, normalized to unit discrete mass."""
    if grid.h > spec.beta / 8.0:
        raise UnderResolved(f"h = {grid.h:.4g} exceeds beta/8 = {spec.beta / 8.0:.4g}")
    X1, X2 = grid.mesh
    vals = bump(np.sqrt(X1**2 + X2**2) / spec.beta)
    vals /= vals.sum() * grid.h**2
    return ScalarField2D(grid, vals)


def mollify(field: ScalarField2D, spec: MollifierSpec) -> ScalarField2D:
    """Periodic convolution phi^beta * field by spectral multiplication."""
    ker = mollifier_kernel(field.grid, spec)
    # the kernel is centred at the origin node; its coefficients already carry
    # the integral normalization, so the product gives the convolution
    return ScalarField2D.from_spectrum(field.grid, field.spectrum * ker.spectrum)


def lp_norm(field: ScalarField2D | np.ndarray, p: float) -> float:
    vals = field.values if isinstance(field, ScalarField2D) else np.asarray(field)
    if p == math.inf:
        return float(np.max(np.abs(vals)))
    if p < 1:
        raise BadExponent(f"exponent {p} < 1")
    a = np.abs(vals)
    top = a.max()
    if top == 0.0:
        return 0.0
    return float(top * np.mean((a / top) ** p) ** (1.0 / p))


YUDOVICH_P_GRID = tuple(float(2**j) for j in range(13))


def yudovich_norm(field: ScalarField2D, m: int, p_grid: Sequence[float] = YUDOVICH_P_GRID) -> float:
    from .convergence_rates import theta

    return max(lp_norm(field, p) / theta(p, m) for p in p_grid)


# ---------------------------------------------------------------------------
# file formats


def write_snapshot(path: str | Path, fields: Sequence[ScalarField2D]) -> None:
    n = fields[0].n
    with open(path, "wb") as fh:
        fh.write(F2D_MAGIC)
        fh.write(struct.pack("<II", n, len(fields)))
        for f in fields:
            if f.n != n:
                raise ValueError("all components must share n")
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path: str | Path) -> list[ScalarField2D]:
    data = Path(path).read_bytes()
    if data[:16] != F2D_MAGIC:
        raise ValueError(f"{path}: bad field snapshot magic")
    n, ncomp = struct.unpack("<II", data[16:24])
    arr = np.frombuffer(data[24:], dtype="<f8").reshape(ncomp, n, n)
    grid = GridSpec2D(n)
    return [ScalarField2D(grid, arr[i].copy()) for i in range(ncomp)]


def write_norm_table(path: str | Path, rows: Sequence[tuple[float, float, float]]) -> None:
    lines = ["beta,p,norm"]
    lines += [f"{b!r},{p!r},{v!r}" for b, p, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")
