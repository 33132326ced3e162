"""Confidence-rated AdaNormalHedge over sleeping experts.

Potential ``Phi(R, C) = exp([R]_+^2 / (3C))`` and weight
``w(R, C) = (Phi(R+1, C+1) - Phi(R-1, C+1)) / 2``.  An awake expert gets
probability proportional to ``q_e * w(R_e, C_e)``.

The calibration wrapper keys experts by (start round, group, interval, sign)
and turns the normalized weights into per-interval coefficients ``a`` and
``b`` used by the forecast solver.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

G_BOUND = 1.5
EXP_CAP = 700.0
_LN2 = math.log(2.0)


def potential(R: float, C: float) -> float:
    if C <= 0:
        return 1.0
    expo = max(R, 0.0) ** 2 / (3.0 * C)
    if expo > EXP_CAP:
        log.warning("potential exponent %.1f capped at %.0f", expo, EXP_CAP)
        expo = EXP_CAP
    return math.exp(expo)


def raw_weight(R: float, C: float) -> float:
    return 0.5 * (potential(R + 1.0, C + 1.0) - potential(R - 1.0, C + 1.0))


def log_raw_weight(R: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Elementwise ``log w(R, C)``; ``-inf`` where the weight is zero."""
    denom = 3.0 * (C + 1.0)
    hi = np.square(np.maximum(R + 1.0, 0.0)) / denom
    lo = np.square(np.maximum(R - 1.0, 0.0)) / denom
    with np.errstate(divide="ignore"):
        return hi + np.log1p(-np.exp(lo - hi)) - _LN2


def normalized_weights(R: np.ndarray, C: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """Normalized AdaNormalHedge weights over the given (awake) experts.

    Falls back to prior-proportional weights when every raw weight is zero.
    """
    if R.size == 0:
        raise RuntimeError("no awake experts")
    z = log_raw_weight(R, C) + log_prior
    top = z.max()
    if not np.isfinite(top):
        z = log_prior
        top = z.max()
    w = np.exp(z - top)
    return w / w.sum()


class SleepingExperts:
    """AdaNormalHedge over a fixed expert universe with per-round awake sets.

    Losses live in [0, 1].  Used directly for standalone regret checks; the
    calibration wrapper below runs the same arithmetic on a growing store.
    """

    def __init__(self, priors):
        priors = np.asarray(priors, dtype=float)
        if np.any(priors <= 0):
            raise ValueError("priors must be positive")
        self.log_prior = np.log(priors)
        self.R = np.zeros(priors.size)
        self.C = np.zeros(priors.size)

    def weights(self, awake) -> np.ndarray:
        awake = np.asarray(awake, dtype=bool)
        omega = np.zeros(self.R.size)
        omega[awake] = normalized_weights(self.R[awake], self.C[awake], self.log_prior[awake])
        return omega

    def update(self, losses, awake) -> float:
        """Play one round; returns the wrapper's loss."""
        awake = np.asarray(awake, dtype=bool)
        losses = np.asarray(losses, dtype=float)
        omega = self.weights(awake)
        wrapper_loss = float(omega[awake] @ losses[awake])
        r = wrapper_loss - losses[awake]
        self.R[awake] += r
        self.C[awake] += np.abs(r)
        return wrapper_loss


@dataclass(frozen=True)
class ExpertKey:
    start: int
    group: int
    node: int
    sign: int


@dataclass
class ExpertState:
    R: float
    C: float
    prior: float


def harmonic2(T: int) -> float:
    """H_{T,2} = sum_{u=1}^T 1/u^2."""
    return math.fsum(1.0 / (u * u) for u in range(1, T + 1))


def dyadic_start(t: int, beta: int) -> bool:
    """True when ``t`` is ``beta`` or ``beta + 2**k`` for some k >= 0."""
    gap = t - beta
    return gap >= 0 and (gap & (gap - 1)) == 0


class CalibrationWrapper:
    """Sleeping experts (s, g, I, +/-) for online multicalibration.

    Experts are materialized when they first wake and dropped once their
    interval splits, since an asleep expert never receives another update.
    State is kept in flat arrays; ``slot`` indexes the current leaf order.
    """

    def __init__(self, T: int, group_count: int, universe_size: int, schedule: str = "dyadic"):
        if schedule not in ("dyadic", "full"):
            raise ValueError(f"unknown schedule {schedule!r}")
        self.T = T
        self.group_count = group_count
        self.schedule = schedule
        self.M = 2 * universe_size
        self.H_T2 = harmonic2(T)
        self._log_q0 = -math.log(group_count * self.M * self.H_T2)
        self.n_spawned = 0
        self._size = 0
        cap = 64
        self.start = np.zeros(cap, dtype=np.int64)
        self.group = np.zeros(cap, dtype=np.int64)
        self.node = np.zeros(cap, dtype=np.int64)
        self.sign = np.zeros(cap)
        self.slot = np.zeros(cap, dtype=np.int64)
        self.log_prior = np.zeros(cap)
        self.R = np.zeros(cap)
        self.C = np.zeros(cap)
        self.omega = np.zeros(0)
        self._grp_template = np.repeat(np.arange(group_count), 2)
        self._sign_template = np.tile([1.0, -1.0], group_count)

    _fields = ("start", "group", "node", "sign", "slot", "log_prior", "R", "C")

    def __len__(self):
        return self._size

    def prior(self, s: int) -> float:
        return math.exp(self._log_q0 - 2.0 * math.log(s))

    def _ensure(self, extra: int) -> None:
        need = self._size + extra
        cap = self.R.size
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        for name in self._fields:
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: self._size] = old[: self._size]
            setattr(self, name, new)

    def spawn(self, t: int, leaf_nodes, leaf_betas) -> int:
        """Create the experts that start at round ``t``; returns how many."""
        if self.schedule == "full":
            fresh = list(range(len(leaf_nodes)))
        else:
            fresh = [j for j, beta in enumerate(leaf_betas) if dyadic_start(t, beta)]
        if not fresh:
            return 0
        per = 2 * self.group_count
        n = per * len(fresh)
        self._ensure(n)
        lo, hi = self._size, self._size + n
        self.start[lo:hi] = t
        self.group[lo:hi] = np.tile(self._grp_template, len(fresh))
        self.sign[lo:hi] = np.tile(self._sign_template, len(fresh))
        self.slot[lo:hi] = np.repeat(fresh, per)
        self.node[lo:hi] = np.repeat(np.asarray(leaf_nodes)[fresh], per)
        self.log_prior[lo:hi] = self._log_q0 - 2.0 * math.log(t)
        self.R[lo:hi] = 0.0
        self.C[lo:hi] = 0.0
        self._size = hi
        self.n_spawned += n
        return n

    def repartition(self, slot_of: dict[int, int]) -> None:
        """Drop experts of retired intervals and remap the rest to new slots."""
        n = self._size
        nodes = self.node[:n]
        keep = np.fromiter((int(v) in slot_of for v in nodes), dtype=bool, count=n)
        m = int(keep.sum())
        for name in self._fields:
            arr = getattr(self, name)
            arr[:m] = arr[:n][keep]
        self._size = m
        self.slot[:m] = [slot_of[int(v)] for v in self.node[:m]]

    def coefficients(self, gvals: np.ndarray, n_leaves: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-leaf (a, b) from the current weights and group memberships."""
        n = self._size
        self.omega = normalized_weights(self.R[:n], self.C[:n], self.log_prior[:n])
        gw = gvals[self.group[:n]] * self.omega
        slot = self.slot[:n]
        a = np.bincount(slot, weights=gw * self.sign[:n], minlength=n_leaves)
        b = np.bincount(slot, weights=gw, minlength=n_leaves)
        return a, b

    def update(self, pi, y, gvals, mids, widths, a, b) -> float:
        """Feed the round's losses to every awake expert; returns phi_hat."""
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"outcome {y} outside [0, 1]")
        n = self._size
        slot = self.slot[:n]
        phi = gvals[self.group[:n]] * pi[slot] * (self.sign[:n] * (y - mids[slot]) - widths[slot])
        phi_hat = float(pi @ (a * (y - mids) - b * widths))
        # regret = wrapper loss - expert loss, with loss = (G - phi) / (2G)
        r = (phi - phi_hat) / (2.0 * G_BOUND)
        self.R[:n] += r
        self.C[:n] += np.abs(r)
        return phi_hat

    def experts(self) -> dict[ExpertKey, ExpertState]:
        """Snapshot of the live experts."""
        out = {}
        for i in range(self._size):
            key = ExpertKey(int(self.start[i]), int(self.group[i]), int(self.node[i]), int(self.sign[i]))
            out[key] = ExpertState(float(self.R[i]), float(self.C[i]), math.exp(self.log_prior[i]))
        return out
