"""Truncated fixed-point construction of local solutions on short windows."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .fields import Grid, Trajectory, state_norms2
from .integrator import SolverConfig, System, linear_factors, noise_paths
from .noise import StoppingTime, WienerPath


class PicardError(RuntimeError):
    pass


class WindowTooLongError(PicardError):
    def __init__(self, window: int, factors):
        self.factors = list(factors)
        super().__init__(
            f"window {window}: contraction factor >= 1 on three consecutive iterations "
            f"({', '.join(f'{f:.3g}' for f in self.factors)}); halve the window length"
        )


@dataclass(frozen=True)
class CutoffSpec:
    n: float
    lipschitz_bound: Fraction = Fraction(15, 8)

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError("truncation level must be positive")


def _smoothstep(s):
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def theta(x, spec: CutoffSpec):
    """1 on [0, n], quintic smoothstep down to 0 on (n, 2n), 0 beyond."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("theta is defined for x >= 0")
    s = np.clip((x - spec.n) / spec.n, 0.0, 1.0)
    out = 1.0 - _smoothstep(s)
    return float(out) if out.ndim == 0 else out


def theta_slope_ratio(x, y, spec: CutoffSpec):
    """|theta(x) - theta(y)| / |x - y| via the divided difference of the
    smoothstep polynomial, so close pairs do not lose digits."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    a = np.clip((x - spec.n) / spec.n, 0.0, 1.0)
    b = np.clip((y - spec.n) / spec.n, 0.0, 1.0)
    # (s(b) - s(a)) / (b - a) for s = 10 t^3 - 15 t^4 + 6 t^5
    p2 = a * a + a * b + b * b
    p3 = a**3 + a * a * b + a * b * b + b**3
    p4 = a**4 + a**3 * b + a * a * b * b + a * b**3 + b**4
    dd = 10.0 * p2 - 15.0 * p3 + 6.0 * p4
    # clipping is 1-Lipschitz; capping avoids rounding in (x - n)/n
    shrink = np.minimum(np.abs(b - a) * spec.n / np.abs(x - y), 1.0)
    return np.abs(dd) * shrink / spec.n


# ------------------------------------------------------------ trajectories


def candidate(grid: Grid, times, v: np.ndarray, n: np.ndarray) -> Trajectory:
    vv, ee = state_norms2(v, n, grid)
    return Trajectory(grid, np.asarray(times, float), vv, ee, v, n)


def x_distance(a: Trajectory, b: Trajectory) -> float:
    """|a - b|_X over the common grid: sqrt(sup V-norm^2 + int E-norm^2)."""
    vv, ee = state_norms2(a.v - b.v, a.n - b.n, a.grid)
    integ = float(np.sum(0.5 * a.dt * (ee[1:] + ee[:-1]))) if len(ee) > 1 else 0.0
    return math.sqrt(float(vv.max()) + integ)


def running_x(traj: Trajectory, prefix_sup: float = 0.0, prefix_int: float = 0.0) -> np.ndarray:
    """|u|_{X_t} at every grid time (trapezoid integral, running sup), optionally
    continuing a prefix summarised by its sup and integral."""
    sup = np.maximum.accumulate(np.maximum(traj.vnorm2, prefix_sup))
    integ = np.full_like(traj.enorm2, prefix_int)
    if len(integ) > 1:
        integ[1:] += np.cumsum(0.5 * traj.dt * (traj.enorm2[1:] + traj.enorm2[:-1]))
    return np.sqrt(sup + integ)


# ------------------------------------------------------------ the map


@dataclass
class PicardWindow:
    """Window [t_start, t_end] whose prefix [0, t_start] is frozen to ``anchor``.

    The anchor carries norm series on the whole prefix but needs to store only
    its final state.  Iterates span the window alone and start from that state;
    their prefix is the anchor by construction.
    """

    t_start: float
    t_end: float
    anchor: Trajectory
    path: WienerPath | None
    n: CutoffSpec
    system: System
    dt: float
    iterates: list = field(default_factory=list)
    index: int = 0

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("window must have positive length")
        a, dt = self.anchor, self.dt
        if len(a.times) > 1 and not math.isclose(a.dt, dt, rel_tol=1e-9):
            raise ValueError("anchor step differs from the window step")
        if not math.isclose(a.times[-1], self.t_start, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("anchor must end at t_start")
        m = (self.t_end - self.t_start) / dt
        if abs(m - round(m)) > 1e-6:
            raise ValueError("window is not aligned with the time step")
        self.start_index = len(a.times) - 1
        self.end_index = self.start_index + int(round(m))
        if self.path is not None and self.path.steps < self.end_index:
            raise ValueError("noise path shorter than the window")
        self.times = self.t_start + dt * np.arange(self.end_index - self.start_index + 1)
        last = a.state(self.start_index)
        self.v0, self.n0 = last.v.coef, last.n.coef
        self.prefix_sup = float(np.max(a.vnorm2))
        e = a.enorm2
        self.prefix_int = float(np.sum(0.5 * dt * (e[1:] + e[:-1]))) if len(e) > 1 else 0.0

    def initial_iterate(self) -> Trajectory:
        """Anchor's last state held constant across the window."""
        k = len(self.times)
        v = np.repeat(self.v0[None], k, axis=0)
        n = np.repeat(self.n0[None], k, axis=0)
        return candidate(self.system.grid, self.times, v, n)

    def xnorm(self, u: Trajectory) -> np.ndarray:
        """|u|_{X_t} for t in the window, counting the anchor prefix."""
        x = running_x(u, self.prefix_sup, 0.0)
        return np.sqrt(x**2 + self.prefix_int)


def psi_map(u: Trajectory, win: PicardWindow) -> Trajectory:
    """Exponential-integrator evaluation of the truncated mild map.

    u_out(t_{j+1}) = S(dt) u_out(t_j) + phi1 th_j F(u_j) + S(dt) th_j G(u_j) dW_j
    for t_j >= t_start, with th_j = theta(|u|_{X_{t_j}}); u_out(t_start) is the
    anchor's final state.
    """
    if len(u.times) != len(win.times):
        raise ValueError("candidate does not span the window")
    if not (np.array_equal(u.v[0], win.v0) and np.array_equal(u.n[0], win.n0)):
        raise ValueError("candidate disagrees with the anchor at t_start")
    sysm = win.system
    grid = sysm.grid
    e, phi1, _ = linear_factors(grid, win.dt, "exponential_em")
    th_c = theta(win.xnorm(u)[:-1], win.n)[:, None, None, None]
    vj, nj = u.v[:-1], u.n[:-1]
    fv, fn, gn = sysm.nonlinear(vj, nj)
    dv, dn = phi1 * (th_c * fv), phi1 * (th_c * fn)
    if win.path is not None:
        sv, sn = sysm.noise_terms(vj, gn, win.path.increments[:, win.start_index : win.end_index].T)
        dv = dv + e * (th_c * sv)
        dn = dn + e * (th_c * sn)
    v = np.empty_like(u.v)
    n = np.empty_like(u.n)
    v[0], n[0] = win.v0, win.n0
    for j in range(len(vj)):
        v[j + 1] = e * v[j] + dv[j]
        n[j + 1] = e * n[j] + dn[j]
    return candidate(grid, win.times, v, n)


@dataclass
class FixedPointReport:
    iterations: int
    distances: list
    factors: list
    converged: bool


def fixed_point(win: PicardWindow, tol: float = 1e-10, max_iter: int = 30, log=None):
    """Iterate Psi from the constant extension of the anchor.

    ``iterations`` counts map applications up to the certified iterate u,
    i.e. the one with |Psi(u) - u|_X <= tol; Psi(u) is returned.
    """
    u = win.initial_iterate()
    distances, factors = [], []
    bad = 0
    for k in range(1, max_iter + 1):
        nxt = psi_map(u, win)
        d = x_distance(nxt, u)
        distances.append(d)
        f = None
        if k > 1:
            f = d / distances[-2] if distances[-2] > 0 else 0.0
            factors.append(f)
            bad = bad + 1 if f >= 1.0 else 0
        win.iterates.append({"iter": k, "distance": d, "factor": f})
        if log is not None:
            log.write(json.dumps({"window": win.index, "iter": k, "distance": d, "factor": f}) + "\n")
        if d <= tol:
            return nxt, FixedPointReport(max(k - 1, 1), distances, factors, True)
        if bad >= 3:
            raise WindowTooLongError(win.index, factors[-3:])
        u = nxt
    return u, FixedPointReport(max_iter, distances, factors, False)


# ------------------------------------------------------------ chaining


@dataclass
class ChainResult:
    trajectory: Trajectory
    tau: StoppingTime
    reports: list

    @property
    def xnorm(self) -> np.ndarray:
        return running_x(self.trajectory)


def chain_windows(
    cfg: SolverConfig,
    n: CutoffSpec,
    window_len: float,
    tol: float = 1e-10,
    max_iter: int = 30,
    seed_index: int = 0,
    log=None,
) -> ChainResult:
    """Solve windows in order, each solution anchoring the next; glue to [0, T]."""
    steps = cfg.steps
    per = window_len / cfg.dt
    if abs(per - round(per)) > 1e-6 or steps % int(round(per)):
        raise ValueError("window_len must be a multiple of dt dividing T")
    per = int(round(per))
    sysm = System(cfg.grid, cfg.poly, cfg.dnoise, cfg.vnoise)
    path = noise_paths(cfg)[seed_index] if cfg.noisy else None
    v0, n0 = cfg.initial.v.coef, cfg.initial.n.coef
    if v0.ndim != 3:
        raise ValueError("chain_windows runs a single unbatched initial state")
    anchor = candidate(cfg.grid, [cfg.initial.t], v0[None], n0[None])
    reports = []
    segments_v, segments_n = [v0[None]], [n0[None]]
    for w in range(steps // per):
        t0 = anchor.times[-1]
        win = PicardWindow(t0, t0 + per * cfg.dt, anchor, path, n, sysm, cfg.dt, index=w)
        seg, rep = fixed_point(win, tol, max_iter, log)
        if not rep.converged:
            raise PicardError(f"window {w} did not reach tol={tol} in {max_iter} iterations")
        reports.append(rep)
        segments_v.append(seg.v[1:])
        segments_n.append(seg.n[1:])
        anchor = Trajectory(
            cfg.grid,
            np.concatenate([anchor.times, seg.times[1:]]),
            np.concatenate([anchor.vnorm2, seg.vnorm2[1:]]),
            np.concatenate([anchor.enorm2, seg.enorm2[1:]]),
            seg.v[-1:],
            seg.n[-1:],
            np.array([len(anchor.times) + per - 1]),
        )
    glued = candidate(cfg.grid, anchor.times, np.concatenate(segments_v), np.concatenate(segments_n))
    x = running_x(glued)
    hit = np.flatnonzero(x >= n.n)
    if hit.size:
        j = int(hit[0])
        tau = StoppingTime(float(glued.times[j]), j, "tau_n_truncation")
    else:
        tau = StoppingTime.infinite(len(glued.times), "tau_n_truncation")
    return ChainResult(glued, tau, reports)
