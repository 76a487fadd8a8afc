"""Wiener paths and discrete stochastic convolutions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Increments of independent scalar Brownian channels on a uniform grid.

    ``increments`` has shape ``(channels, steps)``.
    """

    seed: int
    dt_fine: float
    steps: int
    channels: int
    increments: np.ndarray

    @property
    def dt(self) -> float:
        return self.dt_fine

    @property
    def times(self) -> np.ndarray:
        return self.dt_fine * np.arange(self.steps + 1)

    def values(self) -> np.ndarray:
        """W at every grid time, shape (channels, steps + 1)."""
        w = np.zeros((self.channels, self.steps + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w

    def coarsen(self, m: int) -> "WienerPath":
        """Path on the grid of step m * dt_fine; increments are sums of fine ones."""
        if m < 1 or self.steps % m:
            raise ValueError(f"coarsening factor {m} must divide {self.steps} steps")
        inc = self.increments.reshape(self.channels, self.steps // m, m).sum(axis=2)
        return WienerPath(self.seed, self.dt_fine * m, self.steps // m, self.channels, inc)

    def index_of(self, t: float) -> int:
        j = int(round(t / self.dt_fine))
        if not 0 <= j <= self.steps or not math.isclose(j * self.dt_fine, t, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"time {t} is not on the path grid")
        return j

    def dump_ndjson(self, fh) -> None:
        for c in range(self.channels):
            for s in range(self.steps):
                fh.write(json.dumps({"channel": c, "step": s, "increment": float(self.increments[c, s])}))
                fh.write("\n")


def _stream(seed: int, channel: int) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a nonnegative 64-bit integer")
    return np.random.Generator(np.random.Philox(key=np.array([seed, channel], dtype=np.uint64)))


def sample_path(seed: int, dt_fine: float, steps: int, channels: int) -> WienerPath:
    """Each channel draws from its own counter-based Philox stream keyed by
    (seed, channel), so paths do not depend on scheduling."""
    if not dt_fine > 0:
        raise ValueError("dt_fine must be positive")
    inc = np.empty((channels, steps))
    scale = math.sqrt(dt_fine)
    for c in range(channels):
        inc[c] = scale * _stream(seed, c).standard_normal(steps)
    return WienerPath(int(seed), float(dt_fine), int(steps), int(channels), inc)


@dataclass(frozen=True)
class StoppingTime:
    value: float
    grid_index: int
    kind: str = "synthetic"

    def __post_init__(self):
        if self.kind not in ("tau_k", "tau_n_truncation", "synthetic"):
            raise ValueError(f"unknown stopping time kind {self.kind!r}")

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    @classmethod
    def infinite(cls, n_times: int, kind: str = "synthetic") -> "StoppingTime":
        return cls(math.inf, n_times, kind)


def hitting_time(path: WienerPath, channel: int, level: float) -> StoppingTime:
    """First grid time with |W_channel| >= level (synthetic, path dependent)."""
    w = np.abs(path.values()[channel])
    hit = np.flatnonzero(w >= level)
    if hit.size == 0:
        return StoppingTime.infinite(path.steps + 1)
    j = int(hit[0])
    return StoppingTime(j * path.dt_fine, j)


def _semigroup(decay, lag: np.ndarray, ndim: int) -> np.ndarray:
    """exp(-lag * decay) with lag over the leading axis, shaped to broadcast
    against values of ``ndim`` trailing axes; identity if decay is None."""
    lag = lag.reshape(lag.shape + (1,) * ndim)
    if decay is None:
        return np.ones(lag.shape)
    return np.exp(-lag * np.asarray(decay))


def _weighted_increments(xi: np.ndarray, path: WienerPath, upto: int) -> np.ndarray:
    xi = np.asarray(xi)
    if xi.shape[0] < upto or xi.shape[1] != path.channels:
        raise ValueError(
            f"xi must have shape (>= {upto}, {path.channels}, ...); got {xi.shape}"
        )
    return np.einsum("mc...,cm->m...", xi[:upto], path.increments[:, :upto])


def stochastic_convolution(xi, path: WienerPath, t: float, decay=None) -> np.ndarray:
    """sum_{t_m < t} S(t - t_m) xi(t_m) dW_m with S = exp(-s * decay)."""
    m_end = path.index_of(t)
    if m_end == 0:
        return np.zeros(np.shape(xi)[2:])
    y = _weighted_increments(xi, path, m_end)
    lag = (m_end - np.arange(m_end)) * path.dt_fine
    return (_semigroup(decay, lag, y.ndim - 1) * y).sum(axis=0)


def _check_aligned(tau: StoppingTime, path: WienerPath) -> None:
    if tau.finite:
        j = path.index_of(tau.value)
        if j != tau.grid_index:
            raise ValueError("stopping time index disagrees with its value")


def stopped_convolution(xi, path: WienerPath, tau: StoppingTime, t: float, decay=None) -> np.ndarray:
    """I_tau(t) = sum_{t_m < min(t, tau)} S(t - t_m) xi(t_m) dW_m."""
    _check_aligned(tau, path)
    m_end = path.index_of(t)
    upto = min(m_end, tau.grid_index)
    if upto == 0:
        return np.zeros(np.shape(xi)[2:])
    y = _weighted_increments(xi, path, upto)
    lag = (m_end - np.arange(upto)) * path.dt_fine
    return (_semigroup(decay, lag, y.ndim - 1) * y).sum(axis=0)


def apply_semigroup(values: np.ndarray, s: float, decay=None) -> np.ndarray:
    if decay is None:
        return np.asarray(values)
    return np.exp(-s * np.asarray(decay)) * values
