"""Euler-Maruyama time stepping of the velocity-director system in Ito form:

    dv + (A v + B(v, v) + M(n)) dt = S(v) dW1
    dn + (A1 n + Btilde(v, n) - f(n) - G^2(n)/2) dt = G(n) dW2
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
    SystemState,
    Trajectory,
    from_physical,
    to_physical,
)
from .noise import StoppingTime, WienerPath, sample_path
from .operators import (
    DirectorNoise,
    PolynomialF,
    VelocityNoise,
    f_c,
    g_c,
    grad_c,
    gradient_tensor,
    leray_c,
    m_from_tensor,
)

SCHEMES = ("semi_implicit_em", "exponential_em")


class BlowUpError(RuntimeError):
    """Raised when a step produces non-finite values and the caller asked for it."""


# ------------------------------------------------------------ initial data


def taylor_green(grid: Grid, amplitude: float = 1.0) -> SpectralField:
    x, y = grid.points()
    s = amplitude * np.stack((np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)))
    return SpectralField(grid, from_physical(s, grid), "velocity")


def smooth_director(grid: Grid, amplitude: float = 1.0, twist: float = 0.3) -> SpectralField:
    """amplitude * (cos phi, sin phi, 0) with phi = twist sin x sin y."""
    x, y = grid.points()
    phi = twist * np.sin(x) * np.sin(y)
    s = amplitude * np.stack((np.cos(phi), np.sin(phi), np.zeros_like(phi)))
    return SpectralField(grid, from_physical(s, grid), "director")


def constant_director(grid: Grid, value=(1.0, 0.0, 0.0)) -> SpectralField:
    coef = np.zeros((3,) + grid.spectral_shape, dtype=complex)
    coef[:, 0, 0] = value
    return SpectralField(grid, coef, "director")


# ---------------------------------------------------------------- config


@dataclass(frozen=True, eq=False)
class SolverConfig:
    grid: Grid
    dt: float
    T: float
    poly: PolynomialF
    initial: SystemState
    dnoise: DirectorNoise | None = None
    vnoise: VelocityNoise | None = None
    scheme: str = "semi_implicit_em"
    k_levels: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)
    path_refinement: int = 0
    k_max: float | None = None
    store_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt * (1 - 1e-9):
            raise ValueError("T must be at least dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        k = tuple(float(x) for x in self.k_levels)
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("k_levels must be strictly increasing")
        object.__setattr__(self, "k_levels", k)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.initial.grid != self.grid:
            raise ValueError("initial state lives on another grid")
        if self.store_stride < 1:
            raise ValueError("store_stride must be >= 1")

    @property
    def steps(self) -> int:
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-6 * max(1.0, m):
            raise ValueError("T must be a multiple of dt")
        return int(round(m))

    @property
    def noisy(self) -> bool:
        return self.dnoise is not None or self.vnoise is not None

    @property
    def channels(self) -> int:
        return (self.vnoise.J if self.vnoise else 0) + 1

    @property
    def blowup_level(self) -> float:
        return math.inf if self.k_max is None else float(self.k_max)


def noise_paths(cfg: SolverConfig) -> list[WienerPath]:
    """One refinement-consistent path per seed on the step of ``cfg.dt``."""
    m = 2**cfg.path_refinement
    return [
        sample_path(seed, cfg.dt / m, cfg.steps * m, cfg.channels).coarsen(m) for seed in cfg.seeds
    ]


# ---------------------------------------------------------------- stepping


class System:
    """Drift and noise of the Galerkin system on a fixed grid."""

    def __init__(self, grid: Grid, poly: PolynomialF, dnoise=None, vnoise=None):
        self.grid, self.poly, self.dnoise, self.vnoise = grid, poly, dnoise, vnoise

    def nonlinear(self, v: np.ndarray, n: np.ndarray):
        """Nonlinear drift (Nv, Nn) and G(n) (None without director noise).

        All quadratic products share one inverse and one forward transform."""
        g = self.grid
        shape = g.quad_shape(3)
        lead = v.shape[:-3]
        noisy = self.dnoise is not None
        parts = [v, grad_c(v, g).reshape(lead + (4,) + g.spectral_shape)]
        parts.append(grad_c(n, g).reshape(lead + (6,) + g.spectral_shape))
        if noisy:
            parts.append(n)
        phys = to_physical(np.concatenate(parts, axis=-3), g, shape)
        vp = phys[..., 0:2, :, :]
        gvp = phys[..., 2:6, :, :].reshape(lead + (2, 2) + shape)
        gnp = phys[..., 6:12, :, :].reshape(lead + (3, 2) + shape)
        prods = [kernels.advect(vp, gvp), kernels.advect(vp, gnp), gradient_tensor(gnp)]
        if noisy:
            prods.append(kernels.cross(phys[..., 12:15, :, :], self.dnoise.h_physical(shape)))
        out = from_physical(np.concatenate(prods, axis=-3), g)
        nv = -(leray_c(out[..., 0:2, :, :], g) + m_from_tensor(out[..., 5:8, :, :], g))
        nn = f_c(n, g, self.poly) - out[..., 2:5, :, :]
        gn = None
        if noisy:
            gn = out[..., 8:11, :, :]
            nn = nn + 0.5 * g_c(gn, self.dnoise)
        return nv, nn, gn

    def noise_terms(self, v: np.ndarray, gn, dw: np.ndarray):
        """(sum_j S(v) e_j dW1_j, G(n) dW2) for increments dw[..., channel]."""
        nv = 0.0
        if self.vnoise is not None:
            nv = self.vnoise.noise_sum(v, dw[..., : self.vnoise.J])
        nn = 0.0
        if gn is not None:
            nn = gn * dw[..., -1][..., None, None, None]
        return nv, nn


def linear_factors(grid: Grid, dt: float, scheme: str):
    if scheme == "semi_implicit_em":
        r = 1.0 / (1.0 + dt * grid.k2)
        return r, dt * r, r
    e = np.exp(-dt * grid.k2)
    safe = np.where(grid.k2 == 0, 1.0, grid.k2)
    phi1 = np.where(grid.k2 == 0, dt, (1.0 - e) / safe)
    return e, phi1, e


def step_arrays(system: System, v, n, dw, dt: float, scheme: str):
    lin, drift_w, noise_w = linear_factors(system.grid, dt, scheme)
    nv, nn, gn = system.nonlinear(v, n)
    sv, sn = system.noise_terms(v, gn, dw) if dw is not None else (0.0, 0.0)
    return lin * v + drift_w * nv + noise_w * sv, lin * n + drift_w * nn + noise_w * sn


def step(state: SystemState, dW, cfg: SolverConfig) -> SystemState:
    """One step of ``cfg.scheme``; raises BlowUpError on non-finite output."""
    system = System(cfg.grid, cfg.poly, cfg.dnoise, cfg.vnoise)
    dw = None if dW is None else np.asarray(dW, dtype=float)
    v, n = step_arrays(system, state.v.coef, state.n.coef, dw, cfg.dt, cfg.scheme)
    if not (np.isfinite(v).all() and np.isfinite(n).all()):
        raise BlowUpError(f"non-finite state at t={state.t + cfg.dt}")
    return SystemState(state.v.with_coef(v), state.n.with_coef(n), state.t + cfg.dt)


# ---------------------------------------------------------------- norms


def step_norms(v: np.ndarray, n: np.ndarray, grid: Grid) -> dict:
    k2 = grid.k2
    s = 1.0 + k2
    w = AREA * grid.weights
    pv = (v.real**2 + v.imag**2).sum(axis=-3) * w
    pn = (n.real**2 + n.imag**2).sum(axis=-3) * w
    mv = np.stack((np.ones_like(k2), k2, k2**2, s, s**2))
    mn = np.stack((s, s**2, s**3))
    a = np.einsum("...xy,mxy->m...", pv, mv)
    b = np.einsum("...xy,mxy->m...", pn, mn)
    out = {
        "v_l2sq": a[0],
        "grad_v_sq": a[1],
        "Av_sq": a[2],
        "n_h1sq": b[0],
        "n_h2sq": b[1],
        "n_h3sq": b[2],
    }
    out["vnorm2"] = a[3] + b[1]
    out["enorm2"] = a[4] + b[2]
    return out


def q_series(norms: dict, dt: float) -> np.ndarray:
    """Q(t_j) = |grad v|^2 + ||n||_2^2 + int_0^t (|A v|^2 + ||n||_3^2), trapezoid."""
    rate = norms["Av_sq"] + norms["n_h3sq"]
    integ = np.zeros_like(rate)
    if len(rate) > 1:
        integ[1:] = np.cumsum(0.5 * dt * (rate[1:] + rate[:-1]), axis=0)
    return norms["grad_v_sq"] + norms["n_h2sq"] + integ


def _first_exceed(t: np.ndarray, q: np.ndarray, level: float, kind: str) -> StoppingTime:
    hit = np.flatnonzero(q > level)
    if hit.size == 0:
        return StoppingTime.infinite(len(t), kind)
    j = int(hit[0])
    return StoppingTime(float(t[j]), j, kind)


def detect_tau(trace, k: float) -> StoppingTime:
    """First grid time with Q(t) > k^2, or +inf.  ``trace`` exposes ``t``
    and ``Q`` (1-D) or is a ``(t, Q)`` pair."""
    t, q = (trace.t, trace.Q) if hasattr(trace, "Q") else trace
    q = np.nan_to_num(np.asarray(q, dtype=float), nan=np.inf)
    return _first_exceed(np.asarray(t, dtype=float), q, float(k) ** 2, "tau_k")


# ---------------------------------------------------------------- driver


@dataclass
class RunResult:
    trajectory: Trajectory
    taus: list[list[StoppingTime]] = field(default_factory=list)
    paths: list[WienerPath] = field(default_factory=list)

    @property
    def blown_up(self) -> np.ndarray:
        return self.trajectory.blowup_index >= 0


def _batched(coef: np.ndarray, batch: int) -> np.ndarray:
    if coef.ndim == 3:
        return np.broadcast_to(coef, (batch,) + coef.shape).copy()
    if coef.shape[0] != batch:
        raise ValueError("initial batch does not match the seed count")
    return coef.copy()


def run_trajectory(cfg: SolverConfig, observer=None) -> RunResult:
    """Advance every seed of ``cfg`` to T.

    ``observer(m, v_m, n_m, v_next, n_next, dw_m)`` is called after each step
    with batched coefficient arrays.  Blown-up seeds keep their last finite
    state; their norms become NaN from the failing index on.
    """
    grid, dt, steps, batch = cfg.grid, cfg.dt, cfg.steps, len(cfg.seeds)
    system = System(grid, cfg.poly, cfg.dnoise, cfg.vnoise)
    paths = noise_paths(cfg) if cfg.noisy else []
    dw_all = np.stack([p.increments for p in paths]) if paths else None

    v = _batched(cfg.initial.v.coef, batch)
    n = _batched(cfg.initial.n.coef, batch)
    t0 = cfg.initial.t
    times = t0 + dt * np.arange(steps + 1)

    norms = {k: np.full((steps + 1, batch), np.nan) for k in step_norms(v, n, grid)}
    for k, val in step_norms(v, n, grid).items():
        norms[k][0] = val
    stored = sorted(set(range(0, steps + 1, cfg.store_stride)) | {steps})
    vs = np.empty((len(stored), batch) + v.shape[1:], dtype=complex)
    ns = np.empty((len(stored), batch) + n.shape[1:], dtype=complex)
    vs[0], ns[0] = v, n
    slot = 1
    blowup = np.full(batch, -1)
    level = cfg.blowup_level**2
    q_int = np.zeros(batch)
    q_rate_prev = norms["Av_sq"][0] + norms["n_h3sq"][0]
    q_now = norms["grad_v_sq"][0] + norms["n_h2sq"][0]
    blowup[(q_now > level) | ~np.isfinite(q_now)] = 0

    for m in range(steps):
        dw = dw_all[:, :, m] if dw_all is not None else None
        v1, n1 = step_arrays(system, v, n, dw, dt, cfg.scheme)
        alive = blowup < 0
        finite = np.isfinite(v1).all(axis=(1, 2, 3)) & np.isfinite(n1).all(axis=(1, 2, 3))
        new = step_norms(np.where(finite[:, None, None, None], v1, 0), np.where(finite[:, None, None, None], n1, 0), grid)
        rate = new["Av_sq"] + new["n_h3sq"]
        q_int_new = q_int + 0.5 * dt * (rate + q_rate_prev)
        q_new = new["grad_v_sq"] + new["n_h2sq"] + q_int_new
        bad = alive & (~finite | (q_new > level))
        blowup[bad] = m + 1
        keep = (blowup < 0)[:, None, None, None]
        if observer is not None:
            observer(m, v, n, v1, n1, dw)
        v = np.where(keep, v1, v)
        n = np.where(keep, n1, n)
        for k, val in new.items():
            norms[k][m + 1] = np.where(blowup < 0, val, np.nan)
        # first-crossing step keeps its finite norms so Q records the crossing
        for k, val in new.items():
            norms[k][m + 1] = np.where(bad & finite, val, norms[k][m + 1])
        q_int, q_rate_prev = q_int_new, rate
        if m + 1 == stored[slot]:
            vs[slot], ns[slot] = v, n
            slot += 1
        if not (blowup < 0).any():
            break

    vs[slot:], ns[slot:] = v, n
    norms["Q"] = q_series(norms, dt)
    traj = Trajectory(
        grid,
        times,
        norms["vnorm2"],
        norms["enorm2"],
        vs,
        ns,
        np.array(stored),
        paths,
        norms,
        blowup,
    )
    taus = []
    for b in range(batch):
        q = np.nan_to_num(norms["Q"][:, b], nan=np.inf)
        taus.append([_first_exceed(times, q, k**2, "tau_k") for k in cfg.k_levels])
    return RunResult(traj, taus, paths)
