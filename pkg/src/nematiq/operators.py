"""Linear and nonlinear spatial operators of the velocity-director system.

Each public operator takes and returns :class:`SpectralField` values.  The
``*_c`` helpers underneath act on raw coefficient arrays (with any leading
batch axes) and are what the time steppers call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fields import (
    AREA,
    Grid,
    SpectralField,
    from_physical,
    inner,
    norm2,
    quad_integral,
    to_physical,
)

# ------------------------------------------------------------ linear pieces


def grad_c(coef: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient; output axes (..., component, direction, kx, ky)."""
    return np.stack((grid.dx * coef, grid.dy * coef), axis=-3)


def div_c(coef: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.dx * coef[..., 0, :, :] + grid.dy * coef[..., 1, :, :]


def leray_c(coef: np.ndarray, grid: Grid) -> np.ndarray:
    # wavenumbers of the discrete derivative, so div(Pi u) = 0 on Nyquist modes too
    kx, ky = grid.dx.imag, grid.dy.imag
    k2 = kx**2 + ky**2
    safe = np.where(k2 == 0, 1.0, k2)
    kdotu = (kx * coef[..., 0, :, :] + ky * coef[..., 1, :, :]) / safe
    return np.stack((coef[..., 0, :, :] - kx * kdotu, coef[..., 1, :, :] - ky * kdotu), axis=-3)


def heat_factor(grid: Grid, t: float) -> np.ndarray:
    return np.exp(-t * grid.k2)


def leray_project(u: SpectralField) -> SpectralField:
    if u.components != 2:
        raise ValueError("Leray projection acts on 2-component fields")
    return SpectralField(u.grid, leray_c(u.coef, u.grid), "velocity")


def _power_multiplier(grid: Grid, power: float, coef: np.ndarray, what: str) -> np.ndarray:
    if power < 0 and np.any(np.abs(coef[..., 0, 0]) > 1e-14):
        raise ValueError(f"negative power of {what} needs a mean-free field")
    if power == 0:
        return np.ones_like(grid.k2)
    safe = np.where(grid.k2 == 0, 1.0, grid.k2)
    m = safe**power
    m[0, 0] = 0.0
    return m


def apply_stokes(v: SpectralField, power: float = 1.0) -> SpectralField:
    if not -1 <= power <= 1:
        raise ValueError("Stokes power must lie in [-1, 1]")
    return v.with_coef(v.coef * _power_multiplier(v.grid, power, v.coef, "A"))


def apply_A1(n: SpectralField, power: float = 1.0, shifted: bool = False) -> SpectralField:
    if not -2 <= power <= 2:
        raise ValueError("A1 power must lie in [-2, 2]")
    if shifted:
        m = (1.0 + n.grid.k2) ** power
    else:
        m = _power_multiplier(n.grid, power, n.coef, "A1")
    return n.with_coef(n.coef * m)


def semigroup_apply(f: SpectralField, t: float) -> SpectralField:
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    return f.with_coef(f.coef * heat_factor(f.grid, t))


# ---------------------------------------------------------- bilinear maps


def advect_c(u: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased projection of u.grad w (no Leray projection)."""
    shape = grid.quad_shape(3)
    up = to_physical(u, grid, shape)
    gp = to_physical(grad_c(w, grid), grid, shape)
    return from_physical(kernels.advect(up, gp), grid)


def m_from_tensor(th: np.ndarray, grid: Grid) -> np.ndarray:
    """Pi[d_j T_ij] from coefficients of a symmetric tensor stored as (T00, T01, T11)."""
    m = np.stack(
        (
            grid.dx * th[..., 0, :, :] + grid.dy * th[..., 1, :, :],
            grid.dx * th[..., 1, :, :] + grid.dy * th[..., 2, :, :],
        ),
        axis=-3,
    )
    return leray_c(m, grid)


def m_c(n1: np.ndarray, n2: np.ndarray, grid: Grid) -> np.ndarray:
    """Pi[ d_j (d_i n1 . d_j n2) ]_i."""
    shape = grid.quad_shape(3)
    g1 = to_physical(grad_c(n1, grid), grid, shape)
    g2 = g1 if n2 is n1 else to_physical(grad_c(n2, grid), grid, shape)
    # tensor T_ij = sum_c d_i n1_c d_j n2_c
    t = np.einsum("...cixy,...cjxy->...ijxy", g1, g2)
    th = from_physical(t, grid)
    m = np.stack(
        (
            grid.dx * th[..., 0, 0, :, :] + grid.dy * th[..., 0, 1, :, :],
            grid.dx * th[..., 1, 0, :, :] + grid.dy * th[..., 1, 1, :, :],
        ),
        axis=-3,
    )
    return leray_c(m, grid)


def gradient_tensor(gnp: np.ndarray) -> np.ndarray:
    """(T00, T01, T11) of T_ij = d_i n . d_j n from gradient samples (..., c, i, x, y)."""
    g0, g1 = gnp[..., 0, :, :], gnp[..., 1, :, :]
    return np.stack(((g0 * g0).sum(-3), (g0 * g1).sum(-3), (g1 * g1).sum(-3)), axis=-3)


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    if u.components != 2:
        raise ValueError("b(u, v, w) needs a 2-component u")
    if v.components != w.components or v.components not in (2, 3):
        raise ValueError("b(u, v, w) needs v and w with equal component counts (2 or 3)")
    grid = u.grid
    shape = grid.quad_shape(3)
    up = to_physical(u.coef, grid, shape)
    gp = to_physical(grad_c(v.coef, grid), grid, shape)
    wp = to_physical(w.coef, grid, shape)
    out = quad_integral((kernels.advect(up, gp) * wp).sum(axis=-3))
    return float(out) if np.ndim(out) == 0 else out


def apply_B(u: SpectralField, v: SpectralField) -> SpectralField:
    return SpectralField(u.grid, leray_c(advect_c(u.coef, v.coef, u.grid), u.grid), "velocity")


def apply_Btilde(v: SpectralField, n: SpectralField) -> SpectralField:
    return SpectralField(v.grid, advect_c(v.coef, n.coef, v.grid), "director")


def apply_M(n1: SpectralField, n2: SpectralField | None = None) -> SpectralField:
    n2 = n1 if n2 is None else n2
    return SpectralField(n1.grid, m_c(n1.coef, n2.coef, n1.grid), "velocity")


def md_form(n1: SpectralField, n2: SpectralField, u: SpectralField) -> float:
    """-sum_ij int d_i n1 . d_j n2 d_j u_i, by quadrature."""
    grid = n1.grid
    shape = grid.quad_shape(3)
    g1 = to_physical(grad_c(n1.coef, grid), grid, shape)
    g2 = to_physical(grad_c(n2.coef, grid), grid, shape)
    gu = to_physical(grad_c(u.coef, grid), grid, shape)
    dens = np.einsum("...cixy,...cjxy,...ijxy->...xy", g1, g2, gu)
    out = -quad_integral(dens)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------- nonlinearity f


@dataclass(frozen=True)
class PolynomialF:
    """ftilde(r) = sum_k coeffs[k] r^k; f(d) = ftilde(|d|^2) d."""

    coeffs: tuple[float, ...]
    epsilon: float | None = None

    def __post_init__(self):
        c = tuple(float(a) for a in self.coeffs)
        if len(c) < 2:
            raise ValueError("ftilde needs degree N >= 1")
        if not c[-1] < 0:
            raise ValueError(f"leading coefficient a_N={c[-1]} must be negative")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def gl(cls, eps: float) -> "PolynomialF":
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        a = 1.0 / eps**2
        return cls((a, -a), epsilon=eps)

    @property
    def N(self) -> int:
        return len(self.coeffs) - 1

    @property
    def a_top_F(self) -> float:
        """Leading coefficient a_{N+1} of Ftilde."""
        return self.coeffs[-1] / (self.N + 1)

    @property
    def F_coeffs(self) -> tuple[float, ...]:
        return (0.0,) + tuple(a / (k + 1) for k, a in enumerate(self.coeffs))

    def deriv_coeffs(self, order: int = 1) -> tuple[float, ...]:
        c = np.polynomial.polynomial.polyder(np.array(self.coeffs), order)
        return tuple(c) if len(c) else (0.0,)

    def ftilde(self, r):
        return kernels.poly_eval(np.asarray(r, dtype=float), self.coeffs)

    @property
    def quad_degree(self) -> int:
        """Degree needed to project f exactly and to integrate F exactly."""
        return 2 * self.N + 2


def f_physical(n: np.ndarray, grid: Grid, poly: PolynomialF, shape=None) -> tuple[np.ndarray, tuple]:
    shape = shape or grid.quad_shape(poly.quad_degree)
    npx = to_physical(n, grid, shape)
    return kernels.poly_f(npx, poly.coeffs), shape


def f_c(n: np.ndarray, grid: Grid, poly: PolynomialF) -> np.ndarray:
    fp, _ = f_physical(n, grid, poly)
    return from_physical(fp, grid)


def F_integral_c(n: np.ndarray, grid: Grid, poly: PolynomialF) -> np.ndarray:
    npx = to_physical(n, grid, grid.quad_shape(poly.quad_degree))
    r = (npx * npx).sum(axis=-3)
    return 0.5 * quad_integral(kernels.poly_eval(r, poly.F_coeffs))


def eval_f(n: SpectralField, poly: PolynomialF) -> SpectralField:
    return n.with_coef(f_c(n.coef, n.grid, poly))


def eval_F_potential(n: SpectralField, poly: PolynomialF):
    out = F_integral_c(n.coef, n.grid, poly)
    return float(out) if np.ndim(out) == 0 else out


def f_prime_apply(npx: np.ndarray, gpx: np.ndarray, poly: PolynomialF) -> np.ndarray:
    """f'(n)[g] = phi g + 2 phi' (n.g) n, pointwise on samples."""
    r = (npx * npx).sum(axis=-3)
    phi = kernels.poly_eval(r, poly.coeffs)
    dphi = kernels.poly_eval(r, poly.deriv_coeffs(1))
    ng = (npx * gpx).sum(axis=-3)
    return phi[..., None, :, :] * gpx + (2.0 * dphi * ng)[..., None, :, :] * npx


def f_second_apply(npx: np.ndarray, gpx: np.ndarray, poly: PolynomialF) -> np.ndarray:
    """f''(n)[g, g] = 4 phi'(n.g) g + 2 phi' |g|^2 n + 4 phi'' (n.g)^2 n."""
    r = (npx * npx).sum(axis=-3)
    dphi = kernels.poly_eval(r, poly.deriv_coeffs(1))
    d2phi = kernels.poly_eval(r, poly.deriv_coeffs(2))
    ng = (npx * gpx).sum(axis=-3)
    gg = (gpx * gpx).sum(axis=-3)
    return (4.0 * dphi * ng)[..., None, :, :] * gpx + (2.0 * dphi * gg + 4.0 * d2phi * ng**2)[
        ..., None, :, :
    ] * npx


# ------------------------------------------------------------ noise maps


def default_h_samples(grid: Grid) -> np.ndarray:
    x, y = grid.points()
    return np.stack((np.zeros_like(x), 0.5 * np.sin(x), np.ones_like(x)))


@dataclass(frozen=True, eq=False)
class DirectorNoise:
    """G(n) = n x (amplitude h)."""

    h: SpectralField
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "_cache", {})
        if self.h.tag != "director":
            raise ValueError("h must be a director (3-component) field")
        if not np.isfinite(self.h.coef).all():
            raise ValueError("h must be finite")

    @classmethod
    def default(cls, grid: Grid, amplitude: float = 1.0) -> "DirectorNoise":
        return cls(SpectralField.from_samples(grid, default_h_samples(grid), "director"), amplitude)

    @property
    def grid(self) -> Grid:
        return self.h.grid

    @property
    def h_coef(self) -> np.ndarray:
        return self.amplitude * self.h.coef

    def h_physical(self, shape) -> np.ndarray:
        key = tuple(shape)
        if key not in self._cache:
            self._cache[key] = to_physical(self.h_coef, self.grid, key)
        return self._cache[key]


def g_c(n: np.ndarray, dnoise: DirectorNoise) -> np.ndarray:
    grid = dnoise.grid
    shape = grid.quad_shape(3)
    return from_physical(kernels.cross(to_physical(n, grid, shape), dnoise.h_physical(shape)), grid)


def apply_G(n: SpectralField, dnoise: DirectorNoise, order: int = 1) -> SpectralField:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    out = g_c(n.coef, dnoise)
    if order == 2:
        out = g_c(out, dnoise)
    return n.with_coef(out)


def _solenoidal_modes(count: int) -> list[tuple[int, int, str]]:
    """Wavevectors in the upper half plane ordered by |k|, each with cos and sin."""
    ks = []
    r = 1
    while len(ks) < count:
        cand = [
            (a, b)
            for a in range(-r, r + 1)
            for b in range(0, r + 1)
            if (b > 0 or a > 0) and r - 1 < math.hypot(a, b) <= r
        ]
        cand.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[1], k[0]))
        for k in cand:
            ks.extend([(k[0], k[1], "cos"), (k[0], k[1], "sin")])
        r += 1
    return ks[:count]


def solenoidal_basis(grid: Grid, count: int) -> np.ndarray:
    """Divergence-free fields (k_perp/|k|) trig(k.x), L2-normalised."""
    x, y = grid.points()
    out = []
    for a, b, kind in _solenoidal_modes(count):
        phase = a * x + b * y
        trig = np.cos(phase) if kind == "cos" else np.sin(phase)
        norm = math.hypot(a, b)
        samples = np.stack((b / norm * trig, -a / norm * trig)) / math.sqrt(AREA / 2)
        out.append(from_physical(samples, grid))
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class VelocityNoise:
    """Coefficient S of the velocity noise on J retained modes."""

    mode: str
    sigmas: tuple[float, ...]
    grid: Grid
    s: float = 1.0
    basis: np.ndarray | None = None
    ell5: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(x) for x in self.sigmas))
        sig2 = np.array(self.sigmas) ** 2
        if self.mode == "smoothed_multiplicative":
            if self.s < 0.5:
                raise ValueError("smoothing order must be >= 1/2")
            ell5 = float(sig2.sum())
        elif self.mode == "additive":
            basis = self.basis if self.basis is not None else solenoidal_basis(self.grid, self.J)
            if basis.shape[0] != self.J:
                raise ValueError("additive noise needs one basis field per sigma")
            object.__setattr__(self, "basis", basis)
            h1 = norm2(basis, self.grid, 1.0 + self.grid.k2)
            ell5 = float((sig2 * h1).sum())
        else:
            raise ValueError(f"unknown velocity noise mode {self.mode!r}")
        object.__setattr__(self, "ell5", ell5)

    @classmethod
    def smoothed(cls, grid: Grid, s: float = 1.0, sigma0: float = 0.1, J: int = 8) -> "VelocityNoise":
        return cls("smoothed_multiplicative", tuple(sigma0 / j for j in range(1, J + 1)), grid, s)

    @classmethod
    def additive(cls, grid: Grid, sigma0: float = 0.1, J: int = 8) -> "VelocityNoise":
        return cls("additive", tuple(sigma0 / j for j in range(1, J + 1)), grid)

    @property
    def J(self) -> int:
        return len(self.sigmas)

    def smoother(self) -> np.ndarray:
        return (1.0 + self.grid.k2) ** (-self.s)

    def mode_c(self, v: np.ndarray, j: int) -> np.ndarray:
        """S(v) e_j for a 0-based mode index."""
        if self.mode == "additive":
            return np.broadcast_to(self.sigmas[j] * self.basis[j], v.shape).copy()
        return self.sigmas[j] * self.smoother() * v

    def noise_sum(self, v: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """sum_j S(v) e_j dW_j with dw[..., j] batched like v."""
        # explicit reductions instead of BLAS so a seed's result never depends
        # on the other seeds in its batch
        w = dw * np.array(self.sigmas)
        if self.mode == "additive":
            return (w[..., :, None, None, None] * self.basis).sum(axis=-4)
        w = w.sum(axis=-1)
        return w[..., None, None, None] * self.smoother() * v

    def hs_norm2(self, v: np.ndarray, multiplier=None) -> np.ndarray:
        """sum_j ||S(v) e_j||^2 under the given spectral multiplier (L2 if None)."""
        sig2 = np.array(self.sigmas) ** 2
        if self.mode == "additive":
            per = norm2(self.basis, self.grid, multiplier)
            return np.full(v.shape[:-3], float((sig2 * per).sum()))
        m = self.smoother() ** 2
        if multiplier is not None:
            m = m * multiplier
        return sig2.sum() * norm2(v, self.grid, m)


def apply_S(v: SpectralField, vnoise: VelocityNoise, j: int) -> SpectralField:
    if not 1 <= j <= vnoise.J:
        raise IndexError(f"noise mode {j} outside 1..{vnoise.J}")
    return SpectralField(v.grid, vnoise.mode_c(v.coef, j - 1), "velocity")


__all__ = [
    "DirectorNoise",
    "PolynomialF",
    "VelocityNoise",
    "apply_A1",
    "apply_B",
    "apply_Btilde",
    "apply_G",
    "apply_M",
    "apply_S",
    "apply_stokes",
    "eval_F_potential",
    "eval_f",
    "inner",
    "leray_project",
    "md_form",
    "semigroup_apply",
    "trilinear_b",
]
