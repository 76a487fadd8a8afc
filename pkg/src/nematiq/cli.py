"""Command-line entry point: ``nematiq simulate|ensemble|picard|verify|convolution-test``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .checks import convolution_checks, verify_suite
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .diagnostics import CSV_COLUMNS, DiagnosticsConfig, energy_traces, ensemble_moments
from .integrator import run_trajectory
from .picard import CutoffSpec, PicardError, chain_windows

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
WORKERS_ENV = "NEMATIQ_WORKERS"
# Seeds are always batched in chunks of this size, whatever the worker count,
# so floating-point results never depend on scheduling.
CHUNK = 25


def build_id() -> str:
    return f"nematiq-{__version__}+{kernels.BACKEND}"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected an integer, got {raw!r}") from None


# ------------------------------------------------------------ ensemble core


def _run_chunk(cfg: RunConfig, seeds: tuple[int, ...]):
    """Traces and stopping times for one chunk of seeds."""
    solver = cfg.solver(seeds)
    result = run_trajectory(solver)
    dcfg = DiagnosticsConfig(kappa=cfg.kappa, p=cfg.moment_p)
    traces = energy_traces(result.trajectory, solver.poly, dcfg)
    taus = [[(t.value, t.grid_index) for t in row] for row in result.taus]
    return seeds, traces, taus, result.blown_up.tolist()


def run_seeds(cfg: RunConfig, workers: int | None = None):
    seeds = cfg.seed_list
    chunks = [seeds[i : i + CHUNK] for i in range(0, len(seeds), CHUNK)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            parts = list(pool.map(_run_chunk, [cfg] * len(chunks), chunks))
    else:
        parts = [_run_chunk(cfg, c) for c in chunks]
    merged = []
    for seeds_c, traces, taus, blown in parts:
        merged.extend(zip(seeds_c, traces, taus, blown))
    return sorted(merged, key=lambda r: r[0])


# ------------------------------------------------------------ outputs


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(path: Path, trace, fmt: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "csv":
            trace.to_csv(fh)
        else:
            for row in trace.rows():
                fh.write(json.dumps(dict(zip(CSV_COLUMNS, row))) + "\n")


def write_manifest(out: Path, cfg: RunConfig, extra=None) -> None:
    record = {
        "command": cfg.command,
        "config_hash": cfg.digest(),
        "seeds": list(cfg.seed_list),
        "build": build_id(),
        "config": cfg.expanded(),
    }
    record.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_ndjson(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _tau_records(cfg: RunConfig, results):
    for seed, _, taus, blown in results:
        for k, (value, index) in zip(cfg.k_levels, taus):
            yield {"seed": seed, "k": k, "tau": value if np.isfinite(value) else None, "grid_index": index, "blown_up": blown}


def _trace_runs(cfg: RunConfig, out: Path):
    results = run_seeds(cfg)
    ext = "csv" if cfg.format == "csv" else "ndjson"
    for seed, trace, _, _ in results:
        write_trace(out / f"trace_{seed:06d}.{ext}", trace, cfg.format)
    write_ndjson(out / "stopping_times.ndjson", _tau_records(cfg, results))
    blown = [seed for seed, _, _, b in results if b]
    return results, blown


def _report_blowups(cfg: RunConfig, blown) -> int:
    if blown and cfg.blowup_fatal:
        print(f"blow-up on seeds {blown}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ------------------------------------------------------------ commands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    _, blown = _trace_runs(cfg, out)
    write_manifest(out, cfg)
    return _report_blowups(cfg, blown)


def cmd_ensemble(cfg: RunConfig, out: Path) -> int:
    results, blown = _trace_runs(cfg, out)
    poly = cfg.polynomial
    p = cfg.moment_p if cfg.moment_p is not None else DiagnosticsConfig().moment_exponent(poly)
    traces = [r[1] for r in results]
    summary = {"seeds": len(traces), "blown_up": blown, "p": p}
    status = _report_blowups(cfg, blown)
    if len(traces) >= 30:
        mom = ensemble_moments(traces, p, poly.a_top_F)
        summary["moments"] = mom
        checks = {
            "finite": all(mom[k]["finite"] for k in ("sup_energy_p", "dissipation_integral", "sup_phi_psi", "phi_strong_integral")),
            "dissipation_integrand_nonnegative": mom["min_dissipation_integrand"] >= 0,
            "phi_in_unit_interval": mom["phi_in_unit_interval"],
            "phi_nonincreasing": mom["phi_nonincreasing"],
        }
        summary["checks"] = checks
        failed = [k for k, ok in checks.items() if not ok]
        if failed and status == EXIT_OK:
            print(f"ensemble check failed: {', '.join(failed)}", file=sys.stderr)
            status = EXIT_ASSERT
    else:
        summary["moments"] = None
        summary["note"] = "moment estimates need at least 30 seeds"
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, cfg)
    return status


def cmd_picard(cfg: RunConfig, out: Path) -> int:
    solver_all = cfg.solver()
    rows, failures = [], []
    for idx, seed in enumerate(cfg.seed_list):
        chains = {}
        for level in cfg.picard_levels:
            with open(out / f"picard_{seed:06d}_n{level:g}.ndjson", "w", encoding="utf-8") as log:
                chains[level] = chain_windows(
                    solver_all, CutoffSpec(level), cfg.window_len, cfg.picard_tol, cfg.picard_max_iter, idx, log
                )
            tau = chains[level].tau
            rows.append((seed, level, tau.value, tau.grid_index))
        levels = sorted(chains)
        for a, b in zip(levels, levels[1:]):
            ta, tb = chains[a].tau, chains[b].tau
            if ta.value > tb.value:
                failures.append(f"seed {seed}: tau_{a:g} > tau_{b:g}")
            j = ta.grid_index
            gap = max(
                float(np.max(np.abs(chains[a].trajectory.v[:j] - chains[b].trajectory.v[:j]), initial=0.0)),
                float(np.max(np.abs(chains[a].trajectory.n[:j] - chains[b].trajectory.n[:j]), initial=0.0)),
            )
            if gap > 1e-8:
                failures.append(f"seed {seed}: u^{a:g} and u^{b:g} differ by {gap:.3g} before tau_{a:g}")
    with open(out / "tau_table.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("seed,n,tau,grid_index\n")
        for seed, level, value, index in rows:
            fh.write(f"{seed},{_fmt(level)},{_fmt(value)},{index}\n")
    write_manifest(out, cfg)
    for f in failures:
        print(f"picard check failed: {f}", file=sys.stderr)
    return EXIT_ASSERT if failures else EXIT_OK


def _emit_checks(out: Path, name: str, results) -> int:
    write_ndjson(out / name, (r.record() for r in results))
    failed = [r.check for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.check}  {r.value:.3e}")
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    results = verify_suite(cfg.grid, cfg.polynomial, cfg.check_seed, cfg.probe_samples)
    status = _emit_checks(out, "verify_report.ndjson", results)
    write_manifest(out, cfg)
    return status


def cmd_convolution(cfg: RunConfig, out: Path) -> int:
    status = _emit_checks(out, "convolution_report.ndjson", convolution_checks(cfg.probe_samples, cfg.check_seed))
    write_manifest(out, cfg)
    return status


COMMAND_TABLE = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "picard": cmd_picard,
    "verify": cmd_verify,
    "convolution-test": cmd_convolution,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return COMMAND_TABLE[cfg.command](cfg, out)


# ------------------------------------------------------------ argv


def _split_overrides(extra: list[str]) -> dict:
    """``--key value`` or ``--key=value`` pairs."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(None, f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(key, "flag needs a value")
            value = extra[i + 1]
            i += 1
        out[key.replace("-", "_")] = value
        i += 1
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nematiq", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value file, or a manifest.json to replay")
    parser.add_argument("--version", action="version", version=build_id())
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = load_config(args.config, _split_overrides(extra), args.command)
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PicardError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
