"""Energy functionals, weights, Ito-formula residuals and inequality probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fields import (
    Grid,
    SpectralField,
    SystemState,
    Trajectory,
    from_physical,
    inner,
    make_grid,
    norm2,
    quad_integral,
    running_xnorm,
    to_physical,
)
from .integrator import System, q_series, step_norms
from .operators import (
    DirectorNoise,
    PolynomialF,
    VelocityNoise,
    F_integral_c,
    advect_c,
    f_c,
    f_prime_apply,
    f_second_apply,
    g_c,
    grad_c,
    leray_c,
)

CSV_COLUMNS = ("t", "E", "D", "psi1", "psi2", "phi", "Q", "xnorm", "vL2", "nH1", "nH2")


@dataclass(frozen=True)
class DiagnosticsConfig:
    kappa: tuple[float, ...] = (1.0,) * 9
    p: float | None = None
    probes_enabled: frozenset = frozenset()

    def __post_init__(self):
        k = tuple(float(x) for x in self.kappa)
        if len(k) != 9 or any(x <= 0 for x in k):
            raise ValueError("kappa needs nine positive entries")
        object.__setattr__(self, "kappa", k)

    def moment_exponent(self, poly: PolynomialF) -> float:
        return self.p if self.p is not None else 2 * (4 * poly.N + 2)


# ------------------------------------------------------------ functionals


def _unpack(state):
    if isinstance(state, SystemState):
        return state.v.coef, state.n.coef, state.grid
    v, n, grid = state
    return v, n, grid


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def y_c(n: np.ndarray, grid: Grid, poly: PolynomialF) -> np.ndarray:
    """A1 n - f(n)."""
    return grid.k2 * n - f_c(n, grid, poly)


def energy_E(state, poly: PolynomialF):
    """1/2 (|v|^2 + |n|^2 + |grad n|^2 + int F(n))."""
    v, n, g = _unpack(state)
    e = norm2(v, g) + norm2(n, g, 1.0 + g.k2) + F_integral_c(n, g, poly)
    return _scalar(0.5 * e)


def energy_GL(state, poly: PolynomialF):
    """1/2 |v|^2 + 1/2 |n|^2 + 1/2 |grad n|^2 - int F(n); the Lyapunov variant."""
    v, n, g = _unpack(state)
    return _scalar(0.5 * (norm2(v, g) + norm2(n, g, 1.0 + g.k2)) - F_integral_c(n, g, poly))


def dissipation_D(state, poly: PolynomialF):
    """|A^{1/2} v|^2 + |A1 n - f(n)|^2."""
    v, n, g = _unpack(state)
    return _scalar(norm2(v, g, g.k2) + norm2(y_c(n, g, poly), g))


def psi_functionals(state, poly: PolynomialF):
    v, n, g = _unpack(state)
    psi1 = 0.5 * norm2(y_c(n, g, poly), g)
    psi2 = 0.5 * norm2(v, g, g.k2)
    return _scalar(psi1), _scalar(psi2), _scalar(psi1 + psi2)


def lpow_integral(n: np.ndarray, grid: Grid, power: int):
    """int |n|^power for an even power."""
    npx = to_physical(n, grid, grid.quad_shape(power))
    r = (npx * npx).sum(axis=-3)
    return quad_integral(r ** (power // 2))


def lambda_functional(n: SpectralField, poly: PolynomialF):
    """1/2 |n|^2 + |grad n|^2 + 1/2 int F(n)."""
    g = n.grid
    c = n.coef
    return _scalar(0.5 * norm2(c, g) + norm2(c, g, g.k2) + 0.5 * F_integral_c(c, g, poly))


def grad_n_cross_grad_h(n: np.ndarray, dnoise: DirectorNoise) -> np.ndarray:
    """<grad n, n x grad h>."""
    g = dnoise.grid
    shape = g.quad_shape(3)
    npx = to_physical(n, g, shape)
    gn = to_physical(grad_c(n, g), g, shape)
    gh = to_physical(grad_c(dnoise.h_coef, g), g, shape)
    tot = 0.0
    for i in range(2):
        tot = tot + (gn[..., :, i, :, :] * kernels.cross(npx, gh[:, i])).sum(axis=-3)
    return quad_integral(tot)


# ------------------------------------------------------------ traces


def log_phi_series(norms: dict, dt: float, poly: PolynomialF, cfg: DiagnosticsConfig) -> np.ndarray:
    """log Phi(t_j) = -int_0^t weight with the trapezoid rule."""
    k = cfg.kappa
    n1 = norms["n_h1sq"]
    w = (
        (k[0] + k[3]) * (1.0 + n1) * norms["n_h2sq"]
        + k[1] * (1.0 + n1 ** (2 * poly.N))
        + k[2] * norms["v_l2sq"] * norms["grad_v_sq"]
    )
    integ = np.zeros_like(w)
    if len(w) > 1:
        integ[1:] = np.cumsum(0.5 * dt * (w[1:] + w[:-1]), axis=0)
    return -integ


def phi_series(norms: dict, dt: float, poly: PolynomialF, cfg: DiagnosticsConfig) -> np.ndarray:
    """Phi = exp(log Phi); underflows to 0 for large data, so bounds are checked on the log."""
    return np.exp(log_phi_series(norms, dt, poly, cfg))


@dataclass
class EnergyTrace:
    """Rows at stored times plus per-step norm series in ``fine``."""

    t: np.ndarray
    columns: dict
    fine: dict = field(default_factory=dict)
    dt: float = 0.0
    blown_up: bool = False

    def __getattr__(self, name):
        cols = self.__dict__.get("columns", {})
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    def __len__(self) -> int:
        return len(self.t)

    def rows(self):
        for j in range(len(self.t)):
            yield tuple(float(self.t[j]) if c == "t" else float(self.columns[c][j]) for c in CSV_COLUMNS)

    def to_csv(self, fh) -> None:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows():
            fh.write(",".join(repr(x) for x in row) + "\n")


def _norms_from_states(traj: Trajectory) -> dict:
    if traj.v is None or len(traj.state_index) != len(traj.times):
        raise ValueError("trajectory carries neither norm series nor every state")
    v, n = traj.v, traj.n
    if v.ndim == 4:
        v, n = v[:, None], n[:, None]
        traj.v, traj.n = v, n
    norms = step_norms(v, n, traj.grid)
    norms["Q"] = q_series(norms, traj.dt)
    return norms


def energy_traces(traj: Trajectory, poly: PolynomialF, cfg: DiagnosticsConfig | None = None) -> list[EnergyTrace]:
    """One trace per batch member; rows at stored states up to blow-up."""
    cfg = cfg or DiagnosticsConfig()
    g, dt = traj.grid, traj.dt
    norms = traj.norms or _norms_from_states(traj)
    idx = traj.state_index
    v, n = traj.v, traj.n
    E = energy_E((v, n, g), poly)
    psi1 = 0.5 * norm2(y_c(n, g, poly), g)
    psi2 = 0.5 * norm2(v, g, g.k2)
    D = 2 * (psi1 + psi2)
    egl = energy_GL((v, n, g), poly)
    lpow = lpow_integral(n, g, 2 * poly.N + 2)
    y = y_c(n, g, poly)
    grad_y = norm2(y, g, g.k2)
    log_phi = log_phi_series(norms, dt, poly, cfg)
    phi = np.exp(log_phi)
    q = norms["Q"] if "Q" in norms else q_series(norms, dt)
    xn = running_xnorm(norms["vnorm2"], norms["enorm2"], dt)
    batch = v.shape[1]
    out = []
    blow = traj.blowup_index if traj.blowup_index is not None else np.full(batch, -1)
    for b in range(batch):
        keep = idx < blow[b] if blow[b] >= 0 else np.ones(len(idx), bool)
        rows = idx[keep]
        cols = {
            "E": E[keep, b],
            "D": D[keep, b],
            "psi1": psi1[keep, b],
            "psi2": psi2[keep, b],
            "phi": phi[rows, b],
            "Q": q[rows, b],
            "xnorm": xn[rows, b],
            "vL2": np.sqrt(norms["v_l2sq"][rows, b]),
            "nH1": np.sqrt(norms["n_h1sq"][rows, b]),
            "nH2": np.sqrt(norms["n_h2sq"][rows, b]),
            "E_GL": egl[keep, b],
            "Lpow": lpow[keep, b],
            "Av_sq": norms["Av_sq"][rows, b],
            "grad_y_sq": grad_y[keep, b],
            "log_phi": log_phi[rows, b],
        }
        fine = {k: val[:, b] for k, val in norms.items()}
        fine["phi"] = phi[:, b]
        fine["log_phi"] = log_phi[:, b]
        out.append(EnergyTrace(traj.times[rows], cols, fine, dt, bool(blow[b] >= 0)))
    return out


def phi_weight(trace: EnergyTrace, cfg: DiagnosticsConfig, poly: PolynomialF) -> np.ndarray:
    """Phi on the per-step grid of the trace."""
    return phi_series(trace.fine, trace.dt, poly, cfg)


# ------------------------------------------------------------ Ito residuals


@dataclass
class ResidualModel:
    grid: Grid
    dt: float
    poly: PolynomialF
    dnoise: DirectorNoise | None = None
    vnoise: VelocityNoise | None = None

    def energy_terms(self, v, n, dw):
        """Drift and martingale parts of dE_GL at the left endpoint."""
        g, dt, poly = self.grid, self.dt, self.poly
        y = y_c(n, g, poly)
        f = g.k2 * n - y
        drift = -(norm2(v, g, g.k2) + norm2(y, g)) + inner(n, f, g) - norm2(n, g, g.k2)
        mart = 0.0
        if self.dnoise is not None:
            gn = g_c(n, self.dnoise)
            g2n = g_c(gn, self.dnoise)
            drift = drift + 0.5 * norm2(gn, g, g.k2) + 0.5 * inner(g.k2 * n, g2n, g)
            if dw is not None:
                mart = mart + grad_n_cross_grad_h(n, self.dnoise) * dw[..., -1]
        if self.vnoise is not None:
            drift = drift + 0.5 * self.vnoise.hs_norm2(v)
            if dw is not None:
                mart = mart + inner(v, self.vnoise.noise_sum(v, dw[..., : self.vnoise.J]), g)
        return dt * drift, mart

    def energy_step(self, v0, n0, v1, n1, dw, e0=None):
        e0 = energy_GL((v0, n0, self.grid), self.poly) if e0 is None else e0
        e1 = energy_GL((v1, n1, self.grid), self.poly)
        drift, mart = self.energy_terms(v0, n0, dw)
        return e1 - e0 - drift - mart, e1

    def _psi1_parts(self, n, npx):
        g, poly = self.grid, self.poly
        shape = npx.shape[-2:]
        y = y_c(n, g, poly)
        ypx = to_physical(y, g, shape)
        fy = f_prime_apply(npx, ypx, poly)
        return y, ypx, fy

    def psi1_terms(self, v, n, dw):
        g, dt, poly = self.grid, self.dt, self.poly
        shape = g.quad_shape(poly.quad_degree)
        npx = to_physical(n, g, shape)
        y, ypx, fy = self._psi1_parts(n, npx)
        ay = g.k2 * y

        def dpsi(gc):
            """Psi1'(n)[g] = <A1 y, g> - <f'(n) y, g>."""
            return inner(ay, gc, g) - quad_integral((fy * to_physical(gc, g, shape)).sum(axis=-3))

        drift = -norm2(y, g, g.k2) + quad_integral((ypx * fy).sum(axis=-3)) - dpsi(advect_c(v, n, g))
        mart = 0.0
        if self.dnoise is not None:
            gn = g_c(n, self.dnoise)
            g2n = g_c(gn, self.dnoise)
            gpx = to_physical(gn, g, shape)
            lin = g.k2 * gn - from_physical(f_prime_apply(npx, gpx, poly), g)
            second = norm2(lin, g) - quad_integral((ypx * f_second_apply(npx, gpx, poly)).sum(axis=-3))
            drift = drift + 0.5 * dpsi(g2n) + 0.5 * second
            if dw is not None:
                mart = dpsi(gn) * dw[..., -1]
        return dt * drift, mart

    def psi1_step(self, v0, n0, v1, n1, dw):
        p0 = 0.5 * norm2(y_c(n0, self.grid, self.poly), self.grid)
        p1 = 0.5 * norm2(y_c(n1, self.grid, self.poly), self.grid)
        drift, mart = self.psi1_terms(v0, n0, dw)
        return p1 - p0 - drift - mart


def _increments(traj: Trajectory, path):
    if path is None:
        return None
    paths = path if isinstance(path, (list, tuple)) else [path]
    return np.stack([p.increments for p in paths])


def _require_states(traj: Trajectory):
    if traj.v is None or len(traj.state_index) != len(traj.times):
        raise ValueError("residuals need every state stored (store_stride = 1)")


def ito_residual_energy(traj: Trajectory, poly, dnoise=None, vnoise=None, path=None) -> np.ndarray:
    """Per-step residual of the Ito energy identity, shape (steps, batch)."""
    _require_states(traj)
    noisy = dnoise is not None or vnoise is not None
    dw_all = _increments(traj, path)
    if noisy and dw_all is None:
        raise ValueError("noise increments unavailable")
    model = ResidualModel(traj.grid, traj.dt, poly, dnoise, vnoise)
    steps = len(traj.times) - 1
    out = np.zeros((steps,) + traj.v.shape[1:-3])
    e0 = None
    for m in range(steps):
        dw = dw_all[:, :, m] if dw_all is not None else None
        out[m], e0 = model.energy_step(traj.v[m], traj.n[m], traj.v[m + 1], traj.n[m + 1], dw, e0)
    return out


def ito_residual_psi1(traj: Trajectory, poly, dnoise=None, path=None) -> np.ndarray:
    _require_states(traj)
    dw_all = _increments(traj, path)
    if dnoise is not None and dw_all is None:
        raise ValueError("noise increments unavailable")
    model = ResidualModel(traj.grid, traj.dt, poly, dnoise)
    steps = len(traj.times) - 1
    out = np.zeros((steps,) + traj.v.shape[1:-3])
    for m in range(steps):
        dw = dw_all[:, :, m] if dw_all is not None else None
        out[m] = model.psi1_step(traj.v[m], traj.n[m], traj.v[m + 1], traj.n[m + 1], dw)
    return out


class EnergyResidualSum:
    """Observer for ``run_trajectory`` accumulating sum_m R_m per seed."""

    def __init__(self, model: ResidualModel):
        self.model = model
        self.total = None
        self._e = None

    def __call__(self, m, v0, n0, v1, n1, dw):
        r, self._e = self.model.energy_step(v0, n0, v1, n1, dw, self._e)
        self.total = r if self.total is None else self.total + r


# ------------------------------------------------------------ probes


def random_field(grid: Grid, tag: str, rng: np.random.Generator, amplitude: float = 1.0, decay: float = 0.15, batch=()):
    """Band-limited Gaussian field with spectrum exp(-decay |k|^2), L2 norm ~ amplitude."""
    comps = {"scalar": 1, "velocity": 2, "director": 3}[tag]
    shape = tuple(batch) + (comps, grid.nx, grid.ny)
    raw = rng.standard_normal(shape)
    coef = from_physical(raw, grid) * np.exp(-decay * grid.k2)
    if tag == "velocity":
        coef = leray_c(coef, grid)
    scale = np.sqrt(norm2(coef, grid))
    coef = coef * (amplitude / np.where(scale == 0, 1.0, scale))[..., None, None, None]
    return SpectralField(grid, coef, tag)


def _hs(c, grid, s):
    return np.sqrt(norm2(c, grid, (1.0 + grid.k2) ** s))


def _safe_ratio(lhs, rhs):
    lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
    return np.where(lhs == 0, 0.0, lhs / np.where(rhs == 0, np.inf, rhs))


def _nonlinearity(v, n, grid, poly):
    """(B(v,v) + M(n), Btilde(v,n) - f(n))."""
    sysm = System(grid, poly)
    nv, nn, _ = sysm.nonlinear(v, n)
    return -nv, -nn


PROBE_KINDS = (
    "gag_l4",
    "est_g1",
    "lip_f2",
    "lip_f3",
    "lip_f4",
    "slc_st",
    "ito_strato",
    "bigdanh2",
    "f_lower",
)


def probe_ratios(kind: str, sample_count: int, rng: np.random.Generator, grid: Grid, poly: PolynomialF, dnoise=None, identical=False):
    """LHS/RHS per sample with every constant set to 1."""
    batch = (sample_count,)
    amp = rng.uniform(0.2, 2.0, size=batch)

    def rnd(tag):
        f = random_field(grid, tag, rng, batch=batch).coef
        return f * amp[:, None, None, None]

    a = 0.5
    if kind == "gag_l4":
        u = rnd("velocity")
        up = to_physical(u, grid, grid.quad_shape(4))
        l4 = quad_integral(((up * up).sum(axis=-3)) ** 2) ** 0.25
        rhs = np.sqrt(norm2(u, grid)) ** (1 - a) * _hs(u, grid, 1) ** a
        return _safe_ratio(l4, rhs)
    if kind == "est_g1":
        v, n = rnd("velocity"), rnd("director")
        lhs = np.sqrt(norm2(advect_c(v, n, grid), grid))
        rhs = (
            np.sqrt(norm2(v, grid)) ** (1 - a)
            * np.sqrt(norm2(v, grid, grid.k2)) ** a
            * _hs(n, grid, 1) ** (1 - a)
            * _hs(n, grid, 2) ** a
        )
        return _safe_ratio(lhs, rhs)
    if kind in ("lip_f2", "lip_f3", "lip_f4", "slc_st"):
        v1, n1 = rnd("velocity"), rnd("director")
        v2, n2 = (v1, n1) if identical else (rnd("velocity"), rnd("director"))
        dn, dv = n1 - n2, v1 - v2
        if kind == "lip_f2":
            from .operators import m_c

            lhs = np.sqrt(norm2(m_c(n1, n1, grid) - m_c(n2, n2, grid), grid))
            rhs = _hs(dn, grid, 2) * _hs(n1, grid, 2) ** (1 - a) * _hs(n1, grid, 3) ** a + _hs(
                dn, grid, 2
            ) ** (1 - a) * _hs(dn, grid, 3) ** a * _hs(n2, grid, 2)
        elif kind == "lip_f3":
            lhs = _hs(advect_c(v1, n1, grid) - advect_c(v2, n2, grid), grid, 1)
            rhs = np.sqrt(norm2(dv, grid, grid.k2)) * _hs(n1, grid, 2) ** (1 - a) * _hs(n1, grid, 3) ** a + _hs(
                dn, grid, 2
            ) ** (1 - a) * _hs(dn, grid, 3) ** a * np.sqrt(norm2(v2, grid, grid.k2))
        elif kind == "lip_f4":
            lhs = _hs(f_c(n1, grid, poly) - f_c(n2, grid, poly), grid, 1)
            N = poly.N
            rhs = (1 + _hs(n1, grid, 2) ** (2 * N) + _hs(n2, grid, 2) ** (2 * N)) * _hs(dn, grid, 2)
        else:
            fv1, fn1 = _nonlinearity(v1, n1, grid, poly)
            fv2, fn2 = _nonlinearity(v2, n2, grid, poly)
            lhs = np.sqrt(norm2(fv1 - fv2, grid) + norm2(fn1 - fn2, grid, 1.0 + grid.k2))

            def vn(vc, nc):
                return np.sqrt(_hs(vc, grid, 1) ** 2 + _hs(nc, grid, 2) ** 2)

            def en(vc, nc):
                return np.sqrt(_hs(vc, grid, 2) ** 2 + _hs(nc, grid, 3) ** 2)

            d_v, d_e = vn(dv, dn), en(dv, dn)
            y1v, y1e, y2v = vn(v1, n1), en(v1, n1), vn(v2, n2)
            N = poly.N
            rhs = d_v ** (1 - a) * (d_v**a * y1v ** (1 - a) * y1e**a + d_e**a * y2v) + d_v * (
                1 + y1v ** (2 * N) + y2v ** (2 * N)
            )
        return _safe_ratio(lhs, rhs)
    if kind == "ito_strato":
        if dnoise is None:
            dnoise = DirectorNoise.default(grid)
        d = rnd("director")
        gd = g_c(d, dnoise)
        g2d = g_c(gd, dnoise)
        lhs = norm2(gd, grid, grid.k2) + inner(grid.k2 * d, g2d, grid)
        return _safe_ratio(np.abs(lhs), _hs(d, grid, 1) ** 2)
    if kind == "bigdanh2":
        n = rnd("director")
        q = 4 * poly.N + 2
        rhs = norm2(y_c(n, grid, poly), grid) + lpow_integral(n, grid, q) + 1.0
        return _safe_ratio(_hs(n, grid, 2) ** 2, rhs)
    if kind == "f_lower":
        n = rnd("director")
        lower = -0.5 * poly.a_top_F * lpow_integral(n, grid, 2 * poly.N + 2)
        minus_fn = -inner(f_c(n, grid, poly), n, grid)
        return np.maximum(0.0, (lower - minus_fn) / norm2(n, grid))
    raise ValueError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")


def inequality_probe(kind: str, sample_count: int, rng, grid: Grid | None = None, poly: PolynomialF | None = None, **kw) -> dict:
    grid = grid or make_grid(32, 32)
    poly = poly or PolynomialF.gl(1.0)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    chunks, left = [], sample_count
    while left > 0:
        take = min(left, 100)
        chunks.append(probe_ratios(kind, take, rng, grid, poly, **kw))
        left -= take
    r = np.concatenate(chunks)
    return {"kind": kind, "max_ratio": float(r.max()), "mean_ratio": float(r.mean()), "count": int(r.size)}


# ------------------------------------------------------------ ensembles


def phi_in_unit_interval(trace: EnergyTrace) -> bool:
    """0 < Phi <= 1, read off log Phi so that underflow is not mistaken for 0."""
    lp = trace.fine["log_phi"]
    lp = lp[~np.isnan(lp)]
    return bool(np.isfinite(lp).all() and (lp <= 0).all())


def phi_nonincreasing(trace: EnergyTrace) -> bool:
    lp = trace.fine["log_phi"]
    lp = lp[~np.isnan(lp)]
    return bool((np.diff(lp) <= 0).all())


def _trapz(y, t):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t))) if len(t) > 1 else 0.0


def ensemble_moments(traces: list[EnergyTrace], p: float, a_top: float, min_seeds: int = 30) -> dict:
    """Monte Carlo means and standard errors of the four moment functionals."""
    if len(traces) < min_seeds:
        raise ValueError(f"ensemble_moments needs >= {min_seeds} traces, got {len(traces)}")
    sup_e, diss, sup_phi, grad_int, min_integrand = [], [], [], [], []
    for tr in traces:
        integrand = tr.D - 0.5 * a_top * tr.Lpow
        min_integrand.append(float(integrand.min()))
        sup_e.append(float(np.max(np.abs(tr.E) ** p)))
        diss.append(_trapz(integrand, tr.t))
        sup_phi.append(float(np.max(tr.phi * (tr.psi1 + tr.psi2))))
        grad_int.append(_trapz(tr.phi * (tr.Av_sq + tr.grad_y_sq), tr.t))
    report = {}
    for name, vals in (
        ("sup_energy_p", sup_e),
        ("dissipation_integral", diss),
        ("sup_phi_psi", sup_phi),
        ("phi_strong_integral", grad_int),
    ):
        arr = np.array(vals)
        report[name] = {
            "mean": float(arr.mean()),
            "stderr": float(arr.std(ddof=1) / math.sqrt(len(arr))),
            "finite": bool(np.isfinite(arr).all()),
        }
    report["min_dissipation_integrand"] = float(min(min_integrand))
    report["phi_in_unit_interval"] = all(phi_in_unit_interval(tr) for tr in traces)
    report["phi_nonincreasing"] = all(phi_nonincreasing(tr) for tr in traces)
    report["seeds"] = len(traces)
    return report
