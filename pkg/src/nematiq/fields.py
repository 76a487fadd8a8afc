"""Spectral fields on the periodic square torus [0, 2pi)^2.

Coefficients are stored as ``rfft2`` half spectra normalised so that the
stored value at wavevector k is the true Fourier coefficient of the field:
``u(x) = sum_k u_k exp(i k.x)``.  Arrays carry optional leading batch axes,
then a component axis, then the two spectral axes ``(nx, ny//2 + 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi
AREA = TWO_PI**2

TAG_COMPONENTS = {"scalar": 1, "velocity": 2, "director": 3}


class SizingError(ValueError):
    """Rejected grid resolution or dealias fraction."""


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1000)
    return Fraction(value)


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 8 or n % 2:
                raise SizingError(f"{name}={n}: resolution must be an even integer >= 8")
        frac = _as_fraction(self.dealias_fraction)
        if not 0 < frac <= 1:
            raise SizingError(f"dealias_fraction={frac} must lie in (0, 1]")
        object.__setattr__(self, "dealias_fraction", frac)

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny // 2 + 1)

    @property
    def has_mask(self) -> bool:
        return self.dealias_fraction < 1

    @cached_property
    def kx(self) -> np.ndarray:
        k = np.fft.fftfreq(self.nx, 1.0 / self.nx)
        k[self.nx // 2] = self.nx // 2
        return k[:, None]

    @cached_property
    def ky(self) -> np.ndarray:
        return np.arange(self.ny // 2 + 1, dtype=float)[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def dx(self) -> np.ndarray:
        """Multiplier of d/dx; zero on the Nyquist row."""
        d = 1j * self.kx
        d[self.nx // 2] = 0.0
        return d

    @cached_property
    def dy(self) -> np.ndarray:
        d = 1j * self.ky
        d[0, -1] = 0.0
        return d

    @cached_property
    def kmax(self) -> tuple[int, int]:
        """Largest retained |kx|, |ky|."""
        f = self.dealias_fraction
        return (
            math.floor(f * self.nx / 2),
            math.floor(f * self.ny / 2),
        )

    @cached_property
    def mask(self) -> np.ndarray:
        kxm, kym = self.kmax
        return (np.abs(self.kx) <= kxm) & (self.ky <= kym)

    @cached_property
    def weights(self) -> np.ndarray:
        """Hermitian multiplicity of each stored half-spectrum column."""
        w = np.full((1, self.ny // 2 + 1), 2.0)
        w[0, 0] = 1.0
        w[0, -1] = 1.0
        return w

    def quad_shape(self, degree: int) -> tuple[int, int]:
        """Physical grid on which a degree-``degree`` trigonometric product of
        retained modes integrates exactly."""
        kxm, kym = self.kmax
        return (
            max(self.nx, sfft.next_fast_len(degree * kxm + 1, real=True)),
            max(self.ny, sfft.next_fast_len(degree * kym + 1, real=True)),
        )

    def points(self, shape: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        mx, my = shape or (self.nx, self.ny)
        x = TWO_PI * np.arange(mx) / mx
        y = TWO_PI * np.arange(my) / my
        return np.meshgrid(x, y, indexing="ij")


def make_grid(nx: int, ny: int, dealias_fraction=Fraction(2, 3)) -> Grid:
    return Grid(nx, ny, _as_fraction(dealias_fraction))


# ---------------------------------------------------------------- transforms


def forward(samples: np.ndarray) -> np.ndarray:
    return sfft.rfft2(samples, norm="forward")


def backward(coef: np.ndarray, grid: Grid) -> np.ndarray:
    return sfft.irfft2(coef, s=(grid.nx, grid.ny), norm="forward")


def to_physical(coef: np.ndarray, grid: Grid, shape: tuple[int, int]) -> np.ndarray:
    """Samples of a coefficient array on an ``shape`` grid (zero padding).

    Nyquist modes are dropped when padding."""
    mx, my = shape
    if (mx, my) == (grid.nx, grid.ny):
        return backward(coef, grid)
    hx, hy = grid.nx // 2, grid.ny // 2
    pad = np.zeros(coef.shape[:-2] + (mx, my // 2 + 1), dtype=complex)
    pad[..., :hx, :hy] = coef[..., :hx, :hy]
    pad[..., mx - hx + 1 :, :hy] = coef[..., hx + 1 :, :hy]
    return sfft.irfft2(pad, s=(mx, my), norm="forward")


def from_physical(samples: np.ndarray, grid: Grid) -> np.ndarray:
    """Coefficients of samples given on any grid at least as fine as ``grid``,
    truncated to the stored modes and dealiased."""
    mx, my = samples.shape[-2:]
    full = forward(samples)
    if (mx, my) == (grid.nx, grid.ny):
        return full * grid.mask
    hx, hy = grid.nx // 2, grid.ny // 2
    out = np.zeros(samples.shape[:-2] + grid.spectral_shape, dtype=complex)
    out[..., :hx, :hy] = full[..., :hx, :hy]
    out[..., hx + 1 :, :hy] = full[..., mx - hx + 1 :, :hy]
    return out * grid.mask


def quad_integral(samples: np.ndarray) -> np.ndarray:
    """Integral over the torus of samples on a uniform grid (last two axes)."""
    return samples.mean(axis=(-2, -1)) * AREA


def inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """L2 inner product of two coefficient arrays, summed over components."""
    s = (grid.weights * (a * b.conj()).real).sum(axis=(-3, -2, -1))
    return AREA * s


def norm2(a: np.ndarray, grid: Grid, multiplier=None) -> np.ndarray:
    """Weighted squared norm ``(2pi)^2 sum m(k) |a_k|^2``."""
    p = a.real**2 + a.imag**2
    if multiplier is not None:
        p = p * multiplier
    return AREA * (grid.weights * p).sum(axis=(-3, -2, -1))


# -------------------------------------------------------------------- fields


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: Grid
    coef: np.ndarray
    tag: str = "scalar"

    def __post_init__(self):
        if self.tag not in TAG_COMPONENTS:
            raise ValueError(f"unknown tag {self.tag!r}")
        coef = np.asarray(self.coef, dtype=complex)
        if coef.ndim < 3 or coef.shape[-2:] != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {coef.shape} does not match grid {self.grid.spectral_shape}"
            )
        if coef.shape[-3] != TAG_COMPONENTS[self.tag]:
            raise ValueError(f"{self.tag} field needs {TAG_COMPONENTS[self.tag]} components")
        object.__setattr__(self, "coef", coef)

    @property
    def components(self) -> int:
        return self.coef.shape[-3]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coef.shape[:-3]

    @classmethod
    def zeros(cls, grid: Grid, tag: str, batch=()) -> "SpectralField":
        shape = tuple(batch) + (TAG_COMPONENTS[tag],) + grid.spectral_shape
        return cls(grid, np.zeros(shape, dtype=complex), tag)

    @classmethod
    def from_samples(cls, grid: Grid, samples, tag: str | None = None) -> "SpectralField":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 2:
            samples = samples[None]
        if samples.shape[-2:] != (grid.nx, grid.ny):
            raise ValueError(f"sample shape {samples.shape} does not match grid ({grid.nx}, {grid.ny})")
        if tag is None:
            tag = {1: "scalar", 2: "velocity", 3: "director"}[samples.shape[-3]]
        return cls(grid, forward(samples), tag)

    def samples(self) -> np.ndarray:
        return backward(self.coef, self.grid)

    def with_coef(self, coef: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coef, self.tag)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coef(self.coef + other.coef)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self.with_coef(self.coef - other.coef)

    def __neg__(self) -> "SpectralField":
        return self.with_coef(-self.coef)

    def __mul__(self, scalar) -> "SpectralField":
        return self.with_coef(self.coef * scalar)

    __rmul__ = __mul__

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.coef).all())


@dataclass(frozen=True)
class SystemState:
    v: SpectralField
    n: SpectralField
    t: float = 0.0

    def __post_init__(self):
        if self.v.grid != self.n.grid:
            raise ValueError("v and n live on different grids")
        if self.v.tag != "velocity" or self.n.tag != "director":
            raise ValueError("SystemState needs a velocity and a director field")

    @property
    def grid(self) -> Grid:
        return self.v.grid

    def is_finite(self) -> bool:
        return self.v.is_finite() and self.n.is_finite()


@dataclass(frozen=True)
class SobolevLevel:
    s: float
    shifted: bool = True

    def __post_init__(self):
        if not -2 <= self.s <= 4:
            raise ValueError(f"Sobolev order {self.s} outside [-2, 4]")

    def multiplier(self, grid: Grid) -> np.ndarray:
        if self.shifted:
            return (1.0 + grid.k2) ** self.s
        with np.errstate(divide="ignore"):
            m = grid.k2**self.s
        if self.s == 0:
            m = np.ones_like(grid.k2)
        elif self.s < 0:
            m[0, 0] = 0.0
        return m


def spectral_transform(data, grid: Grid, direction: str, tag: str | None = None):
    """``direction='forward'`` maps samples to a SpectralField; ``'backward'``
    maps a SpectralField (or coefficient array) to samples."""
    if direction == "forward":
        return SpectralField.from_samples(grid, data, tag)
    if direction == "backward":
        coef = data.coef if isinstance(data, SpectralField) else np.asarray(data)
        if coef.shape[-2:] != grid.spectral_shape:
            raise ValueError(f"coefficient shape {coef.shape} does not match grid")
        return backward(coef, grid)
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def sobolev_norm(f: SpectralField, level: SobolevLevel):
    if not level.shifted and level.s < 0 and np.any(np.abs(f.coef[..., 0, 0]) > 0):
        raise ValueError("negative unshifted order needs a mean-free field")
    out = np.sqrt(norm2(f.coef, f.grid, level.multiplier(f.grid)))
    return float(out) if out.ndim == 0 else out


def dealias(f: SpectralField) -> SpectralField:
    return f.with_coef(f.coef * f.grid.mask)


def hermitian_defect(f: SpectralField) -> float:
    """Largest violation of conjugate symmetry on the self-conjugate columns."""
    worst = 0.0
    for col in (0, -1):
        c = f.coef[..., col]
        mirrored = np.roll(c[..., ::-1], 1, axis=-1)
        worst = max(worst, float(np.abs(c - mirrored.conj()).max(initial=0.0)))
    return worst


# ------------------------------------------------------------- state norms


def v_norm2(v: np.ndarray, grid: Grid):
    """Squared 'V' norm of a state split: ||v||_{H1}^2."""
    return norm2(v, grid, 1.0 + grid.k2)


def state_norms2(v: np.ndarray, n: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(||y||_V^2, ||y||_E^2) with V = H1 x H2 and E = H2 x H3, shifted norms."""
    s = 1.0 + grid.k2
    vv = norm2(v, grid, s) + norm2(n, grid, s**2)
    ee = norm2(v, grid, s**2) + norm2(n, grid, s**3)
    return vv, ee


def running_xnorm(vnorm2: np.ndarray, enorm2: np.ndarray, dt: float) -> np.ndarray:
    """|y|_{X_{t_j}} for every grid index j, starting from index 0."""
    sup = np.maximum.accumulate(vnorm2, axis=0)
    integ = np.zeros_like(enorm2)
    if len(enorm2) > 1:
        integ[1:] = np.cumsum(0.5 * dt * (enorm2[1:] + enorm2[:-1]), axis=0)
    return np.sqrt(sup + integ)


@dataclass
class Trajectory:
    """Discrete sample path(s).  Per-step norm series are kept for every grid
    time; full states only at ``state_index``."""

    grid: Grid
    times: np.ndarray
    vnorm2: np.ndarray
    enorm2: np.ndarray
    v: np.ndarray | None = None
    n: np.ndarray | None = None
    state_index: np.ndarray | None = None
    noise_record: object = None
    norms: dict = field(default_factory=dict)
    blowup_index: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("trajectory step must be uniform")
        self.times = t
        if self.state_index is None and self.v is not None:
            self.state_index = np.arange(len(t))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def index_of(self, t: float) -> int:
        j = int(round((t - self.times[0]) / self.dt)) if self.dt else 0
        if not 0 <= j < len(self.times) or not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"time {t} is not on the trajectory grid")
        return j

    def state(self, j: int, batch: int | None = None) -> SystemState:
        pos = int(np.searchsorted(self.state_index, j))
        if pos >= len(self.state_index) or self.state_index[pos] != j:
            raise KeyError(f"state at index {j} was not stored")
        v, n = self.v[pos], self.n[pos]
        if batch is not None:
            v, n = v[batch], n[batch]
        return SystemState(
            SpectralField(self.grid, v, "velocity"),
            SpectralField(self.grid, n, "director"),
            float(self.times[j]),
        )

    @classmethod
    def from_states(cls, states: list[SystemState], noise_record=None) -> "Trajectory":
        grid = states[0].grid
        v = np.stack([s.v.coef for s in states])
        n = np.stack([s.n.coef for s in states])
        vv, ee = state_norms2(v, n, grid)
        return cls(grid, np.array([s.t for s in states]), vv, ee, v, n, noise_record=noise_record)


def xnorm(traj: Trajectory, a: float, b: float):
    ia, ib = traj.index_of(a), traj.index_of(b)
    if ib < ia:
        raise ValueError("xnorm needs a <= b")
    sup = traj.vnorm2[ia : ib + 1].max(axis=0)
    e = traj.enorm2[ia : ib + 1]
    integ = 0.5 * traj.dt * (e[1:] + e[:-1]).sum(axis=0) if ib > ia else 0.0 * sup
    out = np.sqrt(sup + integ)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------- snapshots


def write_snapshot(path, f: SpectralField, t: float) -> None:
    samples = np.ascontiguousarray(f.samples(), dtype="<f8")
    if samples.ndim != 3:
        raise ValueError("snapshots hold a single (unbatched) field")
    g = f.grid
    with open(Path(path), "wb") as fh:
        fh.write(f"NEMATIQ1 {g.nx} {g.ny} {f.components} {t!r}\n".encode("ascii"))
        fh.write(samples.tobytes(order="C"))


def read_snapshot(path, dealias_fraction=Fraction(2, 3)) -> tuple[SpectralField, float]:
    with open(Path(path), "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 5 or header[0] != "NEMATIQ1":
            raise ValueError(f"{path}: not a NEMATIQ1 snapshot")
        nx, ny, c = (int(x) for x in header[1:4])
        t = float(header[4])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny * c:
        raise ValueError(f"{path}: expected {nx * ny * c} samples, found {data.size}")
    grid = make_grid(nx, ny, dealias_fraction)
    return SpectralField.from_samples(grid, data.reshape(c, nx, ny)), t
