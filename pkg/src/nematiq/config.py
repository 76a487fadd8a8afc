"""Flat ``key = value`` run configuration with presets and line-numbered errors."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .fields import Grid, SystemState, SpectralField, make_grid
from .integrator import SCHEMES, SolverConfig, constant_director, smooth_director, taylor_green
from .operators import DirectorNoise, PolynomialF, VelocityNoise

COMMANDS = ("simulate", "ensemble", "picard", "verify", "convolution-test")


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str, line: int | None = None):
        self.key, self.line = key, line
        where = f"line {line}: " if line is not None else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")


def _call(text: str):
    """'name(a, b)' -> ('name', ['a', 'b']); bare 'name' -> ('name', [])."""
    m = re.fullmatch(r"\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*", text)
    if not m:
        raise ValueError(f"expected name or name(args), got {text!r}")
    args = [a.strip() for a in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    return m.group(1), args


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip().strip("[]")
    return tuple(float(x) for x in text.split(",") if x.strip()) if text else ()


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _positive(kind):
    def conv(text):
        x = kind(text)
        if not x > 0:
            raise ValueError("must be positive")
        return x

    return conv


def _nonneg_int(text):
    x = int(text)
    if x < 0:
        raise ValueError("must be >= 0")
    return x


def _optional_float(text):
    return None if text.strip().lower() in ("none", "inf", "") else float(text)


def _fraction(text):
    f = Fraction(text.strip())
    if not 0 < f <= 1:
        raise ValueError("must lie in (0, 1]")
    return f


def _poly(text):
    name, args = _call(text)
    if name == "gl" and len(args) == 1:
        return ("gl", float(args[0]))
    if name == "coeffs" and args:
        return ("coeffs", tuple(float(a) for a in args))
    raise ValueError("expected gl(eps) or coeffs(a0, a1, ...)")


def _dnoise(text):
    name, args = _call(text)
    if name == "none" and not args:
        return ("none",)
    if name == "default" and len(args) <= 1:
        return ("default", float(args[0]) if args else 1.0)
    raise ValueError("expected none or default(amplitude)")


def _vnoise(text):
    name, args = _call(text)
    if name == "none" and not args:
        return ("none",)
    if name == "smoothed" and len(args) == 3:
        return ("smoothed", float(args[0]), float(args[1]), int(args[2]))
    if name == "additive" and len(args) == 2:
        return ("additive", float(args[0]), int(args[1]))
    raise ValueError("expected none, smoothed(s, sigma0, J) or additive(sigma0, J)")


def _seeds(text):
    t = text.strip().strip("[]")
    if "," not in t and t.isdigit():
        return ("count", int(t))
    vals = tuple(int(x) for x in t.split(",") if x.strip())
    if not vals or any(v < 0 for v in vals):
        raise ValueError("expected a count or a list of nonnegative integers")
    return ("list", vals)


def _choice(*options):
    def conv(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return conv


def _kappa(text):
    k = _floats(text)
    if len(k) != 9 or any(x <= 0 for x in k):
        raise ValueError("expected nine positive numbers")
    return k


def _render(value) -> str:
    if isinstance(value, tuple) and value and isinstance(value[0], str):
        name, *args = value
        if name == "count":
            return str(args[0])
        if name == "list":
            return ",".join(str(a) for a in args[0])
        if name == "coeffs":
            return "coeffs(" + ", ".join(repr(a) for a in args[0]) + ")"
        return name if not args else f"{name}(" + ", ".join(repr(a) for a in args) + ")"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


# key -> (converter, default)
SCHEMA: dict = {
    "nx": (int, 32),
    "ny": (int, 32),
    "dealias": (_fraction, Fraction(2, 3)),
    "dt": (_positive(float), 1e-3),
    "T": (_positive(float), 1.0),
    "poly": (_poly, ("gl", 1.0)),
    "scheme": (_choice(*SCHEMES), "semi_implicit_em"),
    "velocity_init": (_choice("taylor_green", "zero"), "taylor_green"),
    "velocity_amplitude": (float, 1.0),
    "director_init": (_choice("smooth", "constant", "zero"), "smooth"),
    "director_amplitude": (float, 1.0),
    "director_twist": (float, 0.3),
    "dnoise": (_dnoise, ("default", 0.5)),
    "vnoise": (_vnoise, ("smoothed", 1.0, 0.5, 8)),
    "k_levels": (_floats, (10.0, 100.0, 1000.0)),
    "k_max": (_optional_float, None),
    "seeds": (_seeds, ("count", 4)),
    "path_refinement": (_nonneg_int, 0),
    "output_dir": (str, "nematiq_out"),
    "output_stride": (_positive(int), 10),
    "format": (_choice("csv", "ndjson"), "csv"),
    "blowup_fatal": (_bool, True),
    "kappa": (_kappa, (1.0,) * 9),
    "moment_p": (_optional_float, None),
    "picard_levels": (_floats, (2.0, 4.0, 8.0)),
    "window_len": (_positive(float), 1e-2),
    "picard_tol": (_positive(float), 1e-10),
    "picard_max_iter": (_positive(int), 30),
    "probe_samples": (_positive(int), 100),
    "check_seed": (_nonneg_int, 0),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)
    command: str = "simulate"

    def __getattr__(self, key):
        vals = self.__dict__.get("values", {})
        if key in vals:
            return vals[key]
        raise AttributeError(key)

    # ------------------------------------------------ derived objects

    @property
    def grid(self) -> Grid:
        return make_grid(self.nx, self.ny, self.dealias)

    @property
    def polynomial(self) -> PolynomialF:
        kind, arg = self.poly
        return PolynomialF.gl(arg) if kind == "gl" else PolynomialF(tuple(arg))

    def director_noise(self, grid: Grid):
        return None if self.dnoise[0] == "none" else DirectorNoise.default(grid, self.dnoise[1])

    def velocity_noise(self, grid: Grid):
        kind = self.vnoise[0]
        if kind == "none":
            return None
        if kind == "smoothed":
            return VelocityNoise.smoothed(grid, *self.vnoise[1:])
        return VelocityNoise.additive(grid, *self.vnoise[1:])

    def initial_state(self, grid: Grid) -> SystemState:
        if self.velocity_init == "zero":
            v = SpectralField.zeros(grid, "velocity")
        else:
            v = taylor_green(grid, self.velocity_amplitude)
        if self.director_init == "zero":
            n = SpectralField.zeros(grid, "director")
        elif self.director_init == "constant":
            n = constant_director(grid, (self.director_amplitude, 0.0, 0.0))
        else:
            n = smooth_director(grid, self.director_amplitude, self.director_twist)
        return SystemState(v, n, 0.0)

    @property
    def seed_list(self) -> tuple[int, ...]:
        kind, arg = self.seeds
        return tuple(range(arg)) if kind == "count" else tuple(arg)

    def solver(self, seeds=None, store_stride=None) -> SolverConfig:
        grid = self.grid
        try:
            return SolverConfig(
                grid,
                self.dt,
                self.T,
                self.polynomial,
                self.initial_state(grid),
                self.director_noise(grid),
                self.velocity_noise(grid),
                self.scheme,
                self.k_levels,
                tuple(self.seed_list if seeds is None else seeds),
                self.path_refinement,
                self.k_max,
                store_stride or self.output_stride,
            )
        except ValueError as exc:
            raise ConfigError(None, str(exc)) from exc

    # ------------------------------------------------ serialisation

    def expanded(self) -> dict:
        return {k: _render(self.values[k]) for k in SCHEMA}

    def text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.expanded().items())

    def digest(self) -> str:
        """Hash of everything that affects the numbers; the output location does not."""
        body = "".join(f"{k} = {v}\n" for k, v in self.expanded().items() if k != "output_dir")
        return hashlib.sha256(f"command = {self.command}\n{body}".encode()).hexdigest()


def _validate(values: dict, lines: dict, command: str) -> None:
    def fail(key, msg):
        raise ConfigError(key, msg, lines.get(key))

    for key in ("nx", "ny"):
        n = values[key]
        if n < 8 or n % 2:
            fail(key, "must be an even integer >= 8")
    k = values["k_levels"]
    if any(b <= a for a, b in zip(k, k[1:])):
        fail("k_levels", "must be strictly increasing")
    if values["T"] < values["dt"] * (1 - 1e-9):
        fail("T", "must be at least dt")
    m = values["T"] / values["dt"]
    if abs(m - round(m)) > 1e-6 * max(1.0, m):
        fail("T", "must be a multiple of dt")
    w = values["window_len"] / values["dt"]
    if command == "picard" and (abs(w - round(w)) > 1e-6 or round(w) < 1 or round(m) % round(w)):
        fail("window_len", "must be a multiple of dt that divides T")
    if values["poly"][0] == "gl" and not values["poly"][1] > 0:
        fail("poly", "gl(eps) needs eps > 0")
    if values["poly"][0] == "coeffs":
        c = values["poly"][1]
        if len(c) < 2 or not c[-1] < 0:
            fail("poly", "leading coefficient must be negative")
    if values["moment_p"] is not None and not values["moment_p"] > 0:
        fail("moment_p", "must be positive")
    if not values["picard_levels"] or any(x <= 0 for x in values["picard_levels"]):
        fail("picard_levels", "need positive levels")
    if values["k_max"] is not None and not values["k_max"] > 0:
        fail("k_max", "must be positive")
    vn = values["vnoise"]
    if vn[0] == "smoothed" and vn[1] < 0.5:
        fail("vnoise", "smoothing order s must be >= 1/2")
    if vn[0] != "none" and (vn[-1] < 1 or vn[-2] < 0):
        fail("vnoise", "need sigma0 >= 0 and J >= 1")
    if values["dnoise"][0] == "default" and values["dnoise"][1] < 0:
        fail("dnoise", "amplitude must be nonnegative")


def parse_config(text: str = "", overrides=None, command: str = "simulate") -> RunConfig:
    """Parse flat ``key = value`` lines; ``overrides`` (key -> text) win over the file."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}")
    raw, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(None, f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key", lineno)
        if key in raw:
            raise ConfigError(key, f"duplicate key (first set on line {lines[key]})", lineno)
        raw[key], lines[key] = value, lineno
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key (command-line flag)")
        raw[key] = value
        lines.pop(key, None)
    values = {}
    for key, (conv, default) in SCHEMA.items():
        if key not in raw:
            values[key] = default
            continue
        try:
            values[key] = conv(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"invalid value {raw[key]!r} ({exc})", lines.get(key)) from None
    _validate(values, lines, command)
    return RunConfig(values, command)


def load_config(path, overrides=None, command: str = "simulate") -> RunConfig:
    """Read a config file, or a run manifest (JSON) whose ``config`` block is replayed."""
    text = Path(path).read_text(encoding="utf-8") if path else ""
    if text.lstrip().startswith("{"):
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(None, f"unreadable manifest: {exc}") from None
        text = "".join(f"{k} = {v}\n" for k, v in manifest.get("config", {}).items())
    return parse_config(text, overrides, command)
