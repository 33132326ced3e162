"""Weighted-feasibility forecast over the active partition.

For coefficients (a_I, b_I) the per-interval payoff against outcome y is
``c_I(y) = a_I (y - r_I) - b_I w_I``, affine in y, so a mixture is feasible
for every y in [0, 1] iff it is feasible at y = 0 and y = 1.  The solver
minimizes ``max(c_0 . pi, c_1 . pi)`` over the simplex.  With two affine
constraints an optimum is supported on at most two intervals, so singles
and crossing pairs are enumerated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9
_TIE = 1e-12
_DEGENERATE = 1e-15


class InfeasibleForecastError(RuntimeError):
    pass


@dataclass
class Forecast:
    slots: np.ndarray      # positions in the active partition
    probs: np.ndarray
    value: float           # max(c_0 . pi, c_1 . pi)
    sampled: int | None = None   # slot of the realized prediction

    def dense(self, n: int) -> np.ndarray:
        pi = np.zeros(n)
        pi[self.slots] = self.probs
        return pi

    def mean(self, mids) -> float:
        return float(self.probs @ np.asarray(mids)[self.slots])


def constraint_rows(mids, widths, a, b) -> tuple[np.ndarray, np.ndarray]:
    """Payoff vectors at y = 0 and y = 1."""
    slack = b * widths
    c0 = -a * mids - slack
    c1 = a * (1.0 - mids) - slack
    return c0, c1


def solve_forecast(mids, widths, a, b, tol: float = DEFAULT_TOL) -> Forecast:
    mids = np.asarray(mids, dtype=float)
    widths = np.asarray(widths, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = mids.size
    if not np.any(a) and not np.any(b):
        return Forecast(np.arange(n), np.full(n, 1.0 / n), 0.0)

    c0, c1 = constraint_rows(mids, widths, a, b)
    single = np.maximum(c0, c1)
    i_best = int(np.argmin(single))
    best_single = single[i_best]

    # a pair only beats its endpoints when the two rows cross between them
    up = np.flatnonzero(c0 > c1)
    down = np.flatnonzero(c0 < c1)
    if up.size and down.size:
        gi = (c0[up] - c1[up])[:, None]
        gj = (c1[down] - c0[down])[None, :]
        den = gi + gj
        ok = den > _DEGENERATE
        lam = np.where(ok, gj / np.where(ok, den, 1.0), 1.0)
        val = lam * c0[up][:, None] + (1.0 - lam) * c0[down][None, :]
        val = np.where(ok, val, np.inf)
        flat = int(np.argmin(val))
        best_pair = val.flat[flat]
        if best_pair < best_single - _TIE:
            ui, dj = np.unravel_index(flat, val.shape)
            # lowest interval index among equal-valued pairs
            ties = np.argwhere(val <= best_pair + _TIE)
            if len(ties) > 1:
                pairs = sorted(
                    (min(up[u], down[d]), max(up[u], down[d]), u, d) for u, d in ties
                )
                _, _, ui, dj = pairs[0]
            i, j = int(up[ui]), int(down[dj])
            li = float(lam[ui, dj])
            value = max(li * c0[i] + (1 - li) * c0[j], li * c1[i] + (1 - li) * c1[j])
            if value > tol:
                raise InfeasibleForecastError(f"game value {value:.3e} exceeds tol {tol:.1e}")
            if i < j:
                return Forecast(np.array([i, j]), np.array([li, 1.0 - li]), float(value))
            return Forecast(np.array([j, i]), np.array([1.0 - li, li]), float(value))

    if best_single > tol:
        raise InfeasibleForecastError(f"game value {best_single:.3e} exceeds tol {tol:.1e}")
    return Forecast(np.array([i_best]), np.array([1.0]), float(best_single))


def sample_prediction(forecast: Forecast, rng: np.random.Generator) -> int:
    """Draw the realized slot; consumes exactly one uniform from ``rng``."""
    u = rng.random()
    cdf = np.cumsum(forecast.probs)
    pos = int(np.searchsorted(cdf, u, side="right"))
    pos = min(pos, forecast.probs.size - 1)
    forecast.sampled = int(forecast.slots[pos])
    return forecast.sampled
