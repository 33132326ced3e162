"""Synthetic outcome processes.

Every oblivious environment consumes exactly one uniform from its own
generator per round, so two learners facing the same (spec, seed, T)
see the same outcome sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .groups import SINGLETON, Context

VARIANTS = ("piecewise_bernoulli", "drifting", "ordered_grid_walsh", "adaptive")
OBLIVIOUS = ("piecewise_bernoulli", "drifting", "ordered_grid_walsh")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Variant name plus its parameters.

    piecewise_bernoulli: ``segments=[[length, q], ...]`` or ``means=[q1, ...]``
        (equal-length segments over the horizon).
    drifting: ``kind="sinusoid"`` with amplitude, period, center, or
        ``kind="random_walk"`` with step, start, clamp=[lo, hi].
    ordered_grid_walsh: ``m``.
    adaptive: ``strategy="anti_mean"``.
    """

    variant: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EnvironmentSpec":
        d = dict(d)
        variant = d.pop("variant", None)
        if variant not in VARIANTS:
            raise ValueError(f"unknown environment variant {variant!r}")
        allowed = {
            "piecewise_bernoulli": {"segments", "means"},
            "drifting": {"kind", "amplitude", "period", "center", "step", "start", "clamp"},
            "ordered_grid_walsh": {"m"},
            "adaptive": {"strategy"},
        }[variant]
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown keys for {variant}: {sorted(extra)}")
        return cls(variant, d)

    def to_dict(self) -> dict:
        return {"variant": self.variant, **self.params}

    @property
    def oblivious(self) -> bool:
        return self.variant in OBLIVIOUS


@dataclass(frozen=True)
class RoundDraw:
    context: Context
    y: float
    mu: float | None


def grid_points(m: int) -> np.ndarray:
    """x_i = 1/4 + (i - 1) / (2(m - 1)), i = 1..m."""
    if m < 2:
        raise ValueError("grid size m must be >= 2")
    i = np.arange(1, m + 1)
    return 0.25 + (i - 1) / (2.0 * (m - 1))


def equal_segments(T: int, means) -> list[tuple[int, float]]:
    J = len(means)
    if J < 1 or J > T:
        raise ValueError(f"need 1 <= J <= T, got J={J}, T={T}")
    base, extra = divmod(T, J)
    return [(base + (1 if j < extra else 0), float(q)) for j, q in enumerate(means)]


def _reflect(q: float, lo: float, hi: float) -> float:
    while q < lo or q > hi:
        q = 2 * lo - q if q < lo else 2 * hi - q
    return q


class Environment:
    def __init__(self, spec: EnvironmentSpec, T: int, seed: int):
        self.spec = spec
        self.T = T
        self.rng = np.random.default_rng(seed)
        p = spec.params
        self.mean_path: np.ndarray | None = None
        self.grid: np.ndarray | None = None
        self._contexts: list[Context] | None = None
        if spec.variant == "piecewise_bernoulli":
            if ("segments" in p) == ("means" in p):
                raise ValueError("piecewise_bernoulli needs exactly one of segments/means")
            segs = p["segments"] if "segments" in p else equal_segments(T, p["means"])
            if sum(int(n) for n, _ in segs) != T:
                raise ValueError(f"segment lengths sum to {sum(int(n) for n, _ in segs)}, expected T={T}")
            self.mean_path = np.concatenate([np.full(int(n), float(q)) for n, q in segs])
        elif spec.variant == "drifting":
            self.mean_path = self._drift_path(p, seed)
        elif spec.variant == "ordered_grid_walsh":
            m = int(p["m"])
            if m & (m - 1):
                raise ValueError(f"m must be a power of two, got {m}")
            self.grid = grid_points(m)
            self._contexts = [Context(i + 1, float(x)) for i, x in enumerate(self.grid)]
            idx = (np.arange(T)) % m
            self.mean_path = self.grid[idx]
        elif spec.variant == "adaptive":
            if p.get("strategy", "anti_mean") != "anti_mean":
                raise ValueError(f"unknown adaptive strategy {p.get('strategy')!r}")
        if self.mean_path is not None and (self.mean_path.min() < 0 or self.mean_path.max() > 1):
            raise ValueError("means must lie in [0, 1]")

    def _drift_path(self, p, seed) -> np.ndarray:
        t = np.arange(1, self.T + 1)
        kind = p.get("kind")
        if kind == "sinusoid":
            amp, period, center = float(p["amplitude"]), float(p["period"]), float(p.get("center", 0.5))
            return center + amp * np.sin(2.0 * math.pi * (t - 1) / period)
        if kind == "random_walk":
            step = float(p["step"])
            lo, hi = p.get("clamp", (0.05, 0.95))
            q = float(p.get("start", 0.5))
            # separate stream so the path does not shift the outcome draws
            walk = np.random.default_rng([seed, 1]).choice([-step, step], size=self.T)
            path = np.empty(self.T)
            for i in range(self.T):
                path[i] = q
                q = _reflect(q + walk[i], lo, hi)
            return path
        raise ValueError(f"unknown drift kind {kind!r}")

    def next_context(self, t: int) -> Context:
        if self._contexts is not None:
            return self._contexts[(t - 1) % len(self._contexts)]
        return SINGLETON

    def draw_outcome(self, t: int, ctx: Context, pi=None, mids=None) -> RoundDraw:
        """Outcome of round ``t``.  The adaptive variant sees the mixed
        forecast (``pi`` over leaves with midpoints ``mids``), never the
        realized prediction."""
        v = self.spec.variant
        if v == "adaptive":
            if pi is None or mids is None:
                raise ValueError("adaptive environment needs the mixed forecast")
            y = 1.0 if float(np.dot(pi, mids)) <= 0.5 else 0.0
            return RoundDraw(ctx, y, y)
        u = self.rng.random()
        mu = float(self.mean_path[t - 1])
        if v == "ordered_grid_walsh":
            y = mu + 0.25 if u < 0.5 else mu - 0.25
        else:
            y = 1.0 if u < mu else 0.0
        return RoundDraw(ctx, y, mu)

    def c_stat(self) -> float:
        if self.mean_path is None:
            raise ValueError("c_stat is undefined for adaptive environments")
        return c_stat(self.mean_path)


def c_stat(means) -> float:
    """min_c sum_t |q_t - c|, attained at a median."""
    q = np.asarray(means, dtype=float)
    med = float(np.median(q))
    return math.fsum(np.abs(q - med))
