"""Named pass/fail checks shared by the ``verify`` command and the test suites."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diagnostics import (
    DiagnosticsConfig,
    energy_traces,
    grad_n_cross_grad_h,
    inequality_probe,
    ito_residual_energy,
    ito_residual_psi1,
    lambda_functional,
    phi_in_unit_interval,
    phi_nonincreasing,
    random_field,
)
from .fields import Grid, SpectralField, SystemState, inner, norm2, quad_integral, to_physical
from .integrator import SolverConfig, constant_director, run_trajectory, smooth_director, taylor_green
from .noise import StoppingTime, sample_path, stochastic_convolution, stopped_convolution
from . import kernels
from .operators import (
    DirectorNoise,
    F_integral_c,
    VelocityNoise,
    PolynomialF,
    advect_c,
    apply_G,
    div_c,
    f_physical,
    grad_c,
    leray_c,
    m_c,
    md_form,
    trilinear_b,
)
from .picard import CutoffSpec, theta, theta_slope_ratio


@dataclass
class CheckResult:
    check: str
    statistic: str
    value: float
    stderr: float | None
    passed: bool

    def record(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _max_abs(x) -> float:
    return float(np.max(np.abs(x)))


def _fields(grid, rng, count, *tags):
    return [random_field(grid, t, rng, batch=(count,)) for t in tags]


# ------------------------------------------------------------ identities


def identity_checks(grid: Grid, poly: PolynomialF, rng, count: int = 100, tol: float = 1e-8) -> list[CheckResult]:
    u, v2, w2 = _fields(grid, rng, count, "velocity", "velocity", "velocity")
    n1, n2 = _fields(grid, rng, count, "director", "director")
    out = []

    def add(name, stat, value, bound):
        out.append(CheckResult(name, stat, value, None, bool(value <= bound)))

    b2 = max(
        _max_abs(trilinear_b(u, v2, w2) + trilinear_b(u, w2, v2)),
        _max_abs(trilinear_b(u, n1, n2) + trilinear_b(u, n2, n1)),
    )
    add("b_skew", "max |b(u,v,w) + b(u,w,v)|", b2, tol)
    b3 = max(_max_abs(trilinear_b(u, v2, v2)), _max_abs(trilinear_b(u, n1, n1)))
    add("b_vanishes", "max |b(u,v,v)|", b3, tol)
    bt = inner(advect_c(u.coef, n1.coef, grid), n1.coef, grid)
    add("btilde_orthogonal", "max |<Btilde(v,n), n>|", _max_abs(bt), tol)
    g1 = inner(advect_c(u.coef, n1.coef, grid), grid.k2 * n1.coef, grid) + inner(m_c(n1.coef, n1.coef, grid), u.coef, grid)
    add("coupling_cancellation", "max |<Btilde(v,n), A1 n> + <M(n), v>|", _max_abs(g1), tol)
    md = inner(m_c(n1.coef, n2.coef, grid), u.coef, grid) - md_form(n1, n2, u)
    add("m_duality", "max |<M(n1,n2), u> - m(n1,n2,u)|", _max_abs(md), tol)
    add("advection_f_orthogonal", "max |<v.grad n, f(n)>|", _max_abs(advection_f_pairing(u.coef, n1.coef, grid, poly)), tol)
    raw = random_field(grid, "scalar", rng, batch=(count,)).coef
    w = np.concatenate([raw, random_field(grid, "scalar", rng, batch=(count,)).coef], axis=-3)
    p1 = leray_c(w, grid)
    add("leray_idempotent", "max |P P w - P w|", _max_abs(leray_c(p1, grid) - p1), 1e-10)
    add("leray_divergence_free", "max |div P w|", _max_abs(div_c(p1, grid)), 1e-10)
    return out


def advection_f_pairing(v: np.ndarray, n: np.ndarray, grid: Grid, poly: PolynomialF):
    """int (v.grad n) . f(n) by quadrature exact for the integrand's degree."""

    shape = grid.quad_shape(poly.quad_degree + 1)
    fp, _ = f_physical(n, grid, poly, shape)
    adv = kernels.advect(to_physical(v, grid, shape), to_physical(grad_c(n, grid), grid, shape))
    return quad_integral((adv * fp).sum(axis=-3))


# ------------------------------------------------------------ cutoff


def theta_checks(levels=(1.0, 4.0, 10.0), samples: int = 20000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    worst_exact, worst_lip = 0.0, 0.0
    for lvl in levels:
        spec = CutoffSpec(lvl)
        lo = rng.uniform(0, lvl, samples)
        hi = rng.uniform(2 * lvl, 10 * lvl, samples)
        exact = max(_max_abs(theta(lo, spec) - 1.0), _max_abs(theta(hi, spec)), abs(theta(lvl, spec) - 1), abs(theta(2 * lvl, spec)))
        worst_exact = max(worst_exact, exact)
        x = rng.uniform(0, 3 * lvl, samples)
        y = x + rng.normal(0, lvl * 10.0 ** rng.uniform(-6, 0, samples))
        y = np.abs(y)
        keep = x != y
        ratio = theta_slope_ratio(x[keep], y[keep], spec)
        # the steepest slope sits at the midpoint
        mid = 1.5 * lvl
        ratio = np.append(ratio, theta_slope_ratio(mid + 1e-7 * lvl, mid - 1e-7 * lvl, spec))
        worst_lip = max(worst_lip, float(ratio.max()) - float(spec.lipschitz_bound) / lvl)
    out.append(CheckResult("theta_exact_regions", "max deviation on [0,n] and [2n,inf)", worst_exact, None, worst_exact == 0.0))
    out.append(CheckResult("theta_lipschitz", "max ratio - (15/8)/n", worst_lip, None, worst_lip <= 1e-12))
    return out


# ------------------------------------------------------------ convolutions


def convolution_checks(pairs: int = 100, seed: int = 0, tol: float = 1e-12) -> list[CheckResult]:
    """Discrete stopped-convolution identities over random (path, tau, t)."""
    rng = np.random.default_rng(seed)
    e4 = e5 = e6 = 0.0
    for k in range(pairs):
        steps = int(rng.integers(5, 60))
        channels = int(rng.integers(1, 4))
        dt = float(rng.choice([1e-3, 2e-3, 1e-2]))
        path = sample_path(int(rng.integers(0, 2**63)), dt, steps, channels)
        modes = int(rng.integers(1, 6))
        decay = rng.uniform(0, 20, modes)
        xi = rng.standard_normal((steps, channels, modes))
        j_tau = int(rng.integers(0, steps + 1))
        j_sig = int(rng.integers(0, j_tau + 1))
        j_t = int(rng.integers(0, steps + 1))
        tau = StoppingTime(j_tau * dt, j_tau)
        sig = StoppingTime(j_sig * dt, j_sig)
        t = j_t * dt
        t_tau = min(j_t, j_tau) * dt
        t_sig = min(j_t, j_sig) * dt
        i_stop = stochastic_convolution(xi, path, t_tau, decay)
        lhs = np.exp(-(t - t_tau) * decay) * i_stop
        scale = max(1.0, _max_abs(lhs))
        e4 = max(e4, _max_abs(lhs - stopped_convolution(xi, path, tau, t, decay)) / scale)
        e5 = max(e5, _max_abs(i_stop - stopped_convolution(xi, path, tau, t_tau, decay)) / max(1.0, _max_abs(i_stop)))
        a = stopped_convolution(xi, path, tau, t_sig, decay)
        b = stopped_convolution(xi, path, sig, t_sig, decay)
        e6 = max(e6, _max_abs(a - b) / max(1.0, _max_abs(a)))
    return [
        CheckResult("conv_semigroup_stop", "max |S(t - t^tau) I(t^tau) - I_tau(t)|", e4, None, e4 <= tol),
        CheckResult("conv_stop_agree", "max |I(t^tau) - I_tau(t^tau)|", e5, None, e5 <= tol),
        CheckResult("conv_nested_stops", "max |I_tau(t^sig) - I_sig(t^sig)|", e6, None, e6 <= tol),
    ]


# ------------------------------------------------------------ residual orders


def residual_orders(grid: Grid, poly: PolynomialF, dts=(1e-3, 5e-4, 2.5e-4), T: float = 0.05, scheme="semi_implicit_em"):
    """Max per-step residuals for the energy and Psi1 identities (noise off)."""
    init = SystemState(taylor_green(grid, 1.0), smooth_director(grid, 1.0), 0.0)
    e, p = [], []
    for dt in dts:
        r = run_trajectory(SolverConfig(grid, dt, T, poly, init, scheme=scheme))
        e.append(_max_abs(ito_residual_energy(r.trajectory, poly)))
        p.append(_max_abs(ito_residual_psi1(r.trajectory, poly)))
    return np.array(e), np.array(p)


def observed_order(errors, ratio: float = 2.0) -> float:
    """Smallest order seen across consecutive refinements."""
    errors = np.asarray(errors, float)
    return float(np.min(np.log(errors[:-1] / errors[1:]) / math.log(ratio)))


def residual_order_checks(grid: Grid, poly: PolynomialF, min_order: float = 1.9) -> list[CheckResult]:
    e, p = residual_orders(grid, poly)
    oe, op = observed_order(e), observed_order(p)
    return [
        CheckResult("energy_residual_order", "observed order of max per-step residual", oe, None, oe >= min_order),
        CheckResult("psi1_residual_order", "observed order of max per-step residual", op, None, op >= min_order),
    ]


# ------------------------------------------------------------ functionals


def lambda_checks(grid: Grid, poly: PolynomialF, h: float = 1e-5) -> list[CheckResult]:
    """Recomputation of Lambda and its derivative along G(n) by central differences."""

    n = smooth_director(grid, 1.0)
    dnoise = DirectorNoise.default(grid)
    c = n.coef
    parts = 0.5 * norm2(c, grid) + norm2(c, grid, grid.k2) + 0.5 * F_integral_c(c, grid, poly)
    cons = abs(lambda_functional(n, poly) - float(parts))
    g = apply_G(n, dnoise).coef
    fd = (lambda_functional(n.with_coef(c + h * g), poly) - lambda_functional(n.with_coef(c - h * g), poly)) / (2 * h)
    exact = 2.0 * float(grad_n_cross_grad_h(c, dnoise))
    err = abs(fd - exact) / max(1.0, abs(exact))
    return [
        CheckResult("lambda_recompute", "|Lambda - parts|", cons, None, cons <= 1e-12),
        CheckResult("lambda_derivative", "|FD Lambda'(n)[G n] - 2<grad n, n x grad h>| (rel)", err, None, err <= 1e-6),
    ]


def trajectory_checks(grid: Grid, poly: PolynomialF, T: float = 0.1, dt: float = 1e-3, seeds=(0, 1)) -> list[CheckResult]:
    """Orthogonality ledger and Phi bounds on recorded states of a noisy run."""
    init = SystemState(taylor_green(grid, 1.0), smooth_director(grid, 1.0), 0.0)

    cfg = SolverConfig(
        grid, dt, T, poly, init, DirectorNoise.default(grid, 0.5), VelocityNoise.smoothed(grid), seeds=seeds, store_stride=10
    )
    r = run_trajectory(cfg)
    v, n = r.trajectory.v, r.trajectory.n
    ortho = max(
        _max_abs(trilinear_b(SpectralField(grid, v, "velocity"), SpectralField(grid, v, "velocity"), SpectralField(grid, v, "velocity"))),
        _max_abs(inner(advect_c(v, n, grid), grid.k2 * n, grid) + inner(m_c(n, n, grid), v, grid)),
        _max_abs(advection_f_pairing(v, n, grid, poly)),
    )
    traces = energy_traces(r.trajectory, poly, DiagnosticsConfig())
    phi_ok = all(phi_in_unit_interval(t) and phi_nonincreasing(t) for t in traces)
    return [
        CheckResult("orthogonality_ledger", "max cancellation defect on recorded states", ortho, None, ortho <= 1e-8),
        CheckResult("phi_bounds", "0 < Phi <= 1 and nonincreasing", float(phi_ok), None, phi_ok),
    ]


def equilibrium_check(grid: Grid) -> CheckResult:
    poly = PolynomialF.gl(1.0)
    init = SystemState(SpectralField.zeros(grid, "velocity"), constant_director(grid), 0.0)
    r = run_trajectory(SolverConfig(grid, 1e-3, 0.05, poly, init))
    d = _max_abs(r.trajectory.n[-1, 0] - init.n.coef)
    return CheckResult("equilibrium_preserved", "max |n(T) - n(0)| at a unit constant director", d, None, d == 0.0)


def probe_checks(grid: Grid, poly: PolynomialF, samples: int = 200, seed: int = 0) -> list[CheckResult]:
    out = []
    kinds = ("gag_l4", "est_g1", "lip_f2", "lip_f3", "lip_f4", "slc_st", "ito_strato", "bigdanh2", "f_lower")
    for kind in kinds:
        a = inequality_probe(kind, samples, np.random.default_rng(seed), grid, poly)
        b = inequality_probe(kind, samples, np.random.default_rng(seed + 1), grid, poly)
        finite = math.isfinite(a["max_ratio"]) and math.isfinite(b["max_ratio"])
        out.append(CheckResult(f"probe_{kind}", "max LHS/RHS (constant 1)", a["max_ratio"], None, finite))
    return out


def verify_suite(grid: Grid, poly: PolynomialF, seed: int = 0, samples: int = 100) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = identity_checks(grid, poly, rng, samples)
    results += theta_checks(seed=seed)
    results += convolution_checks(samples, seed)
    results += lambda_checks(grid, poly)
    results.append(equilibrium_check(grid))
    results += trajectory_checks(grid, poly)
    results += residual_order_checks(grid, poly)
    results += probe_checks(grid, poly, seed=seed)
    return results
