"""Binary group families over contexts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

log = logging.getLogger(__name__)

ALL_ONES = "one"
DEFAULT_ETA = 0.25


@dataclass(frozen=True)
class Context:
    id: int
    grid_value: float | None = None
    level: int | None = None


SINGLETON = Context(0)


@dataclass(frozen=True)
class Group:
    gid: str
    predicate: Callable[[Context], int]

    def __call__(self, ctx: Context) -> int:
        return int(self.predicate(ctx))


def _one(ctx):
    return 1


class GroupFamily:
    """A finite family G plus the all-ones group when G lacks it.

    ``groups`` is G as supplied; ``extended`` is G-bar, with the all-ones
    group appended if it is not already a member.  Evaluations are cached
    per context id, so predicates must depend on the context only.
    """

    def __init__(self, name: str, groups: list[Group]):
        ids = [g.gid for g in groups]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate group ids")
        self.name = name
        self.groups = list(groups)
        self.includes_all_ones = ALL_ONES in ids
        self.extended = self.groups if self.includes_all_ones else self.groups + [Group(ALL_ONES, _one)]
        self.index = {g.gid: i for i, g in enumerate(self.extended)}
        self.member_mask = np.array([g.gid in ids for g in self.extended])
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        """|G-bar|, the size the learner works with."""
        return len(self.extended)

    @property
    def ids(self) -> list[str]:
        return [g.gid for g in self.extended]

    def evaluate(self, ctx: Context) -> np.ndarray:
        """0/1 float vector over G-bar."""
        vals = self._cache.get(ctx.id)
        if vals is None:
            vals = np.array([g(ctx) for g in self.extended], dtype=float)
            vals.setflags(write=False)
            self._cache[ctx.id] = vals
        return vals

    def __repr__(self):
        return f"GroupFamily({self.name!r}, |G|={len(self.groups)}, |Gbar|={len(self)})"


def all_ones_family() -> GroupFamily:
    return GroupFamily("all_ones", [Group(ALL_ONES, _one)])


def ordinal_strata_family(K: int) -> GroupFamily:
    """All-ones plus the cumulative indicators g_j(x) = 1{level(x) >= j}, j = 2..K."""
    if K < 2:
        raise ValueError("K must be >= 2")

    def at_least(j):
        def pred(ctx):
            if ctx.level is None:
                raise ValueError(f"context {ctx.id} has no level")
            return ctx.level >= j
        return pred

    groups = [Group(ALL_ONES, _one)] + [Group(f"g{j}", at_least(j)) for j in range(2, K + 1)]
    return GroupFamily(f"ordinal:{K}", groups)


def walsh(ell: int, i: int) -> int:
    """Walsh function psi_ell(i) = (-1)^popcount(ell & i)."""
    return -1 if bin(ell & i).count("1") % 2 else 1


def walsh_family(m: int, subsample: int | None = None, seed: int = 0) -> GroupFamily:
    """Signed Walsh groups g+/-_ell = (1 +/- psi_ell(idx - 1)) / 2 over an m-point grid.

    Context ids are the 1-based grid indices.  ``subsample=None`` keeps all
    m - 1 nonconstant features; otherwise a uniform random subset of that
    size is drawn with ``seed``.
    """
    if m < 2 or m & (m - 1):
        raise ValueError(f"m must be a power of two >= 2, got {m}")
    features = list(range(1, m))
    name = f"walsh:{m}"
    if subsample is not None:
        if not 1 <= subsample <= m - 1:
            raise ValueError(f"subsample size must be in [1, {m - 1}]")
        rng = np.random.default_rng(seed)
        features = sorted(int(v) for v in rng.choice(features, size=subsample, replace=False))
        name = f"walsh:{m}:{subsample}:{seed}"
        log.info("walsh subsample m=%d size=%d seed=%d -> %s", m, subsample, seed, features)

    def half(ell, s):
        def pred(ctx):
            if not 1 <= ctx.id <= m:
                raise ValueError(f"context id {ctx.id} is not a grid index in 1..{m}")
            return walsh(ell, ctx.id - 1) == s
        return pred

    groups = [Group(ALL_ONES, _one)]
    for ell in features:
        groups.append(Group(f"w{ell}+", half(ell, 1)))
        groups.append(Group(f"w{ell}-", half(ell, -1)))
    return GroupFamily(name, groups)


def family_from_name(name: str) -> GroupFamily:
    """Parse ``all_ones``, ``ordinal:K``, ``walsh:m`` or ``walsh:m:size[:seed]``."""
    parts = name.split(":")
    kind = parts[0]
    try:
        if kind == "all_ones" and len(parts) == 1:
            return all_ones_family()
        if kind == "ordinal" and len(parts) == 2:
            return ordinal_strata_family(int(parts[1]))
        if kind == "walsh" and 2 <= len(parts) <= 4:
            m = int(parts[1])
            size = int(parts[2]) if len(parts) > 2 else None
            seed = int(parts[3]) if len(parts) > 3 else 0
            return walsh_family(m, size, seed)
    except ValueError as exc:
        raise ValueError(f"bad family spec {name!r}: {exc}") from None
    raise ValueError(f"unknown family spec {name!r}")


@dataclass
class ThresholdCheck:
    ok: bool
    B: float
    worst_margin: float
    violation: Context | None = None


def verify_threshold_representation(
    f_values,
    r: float,
    coefficients: Mapping[str, float],
    family: GroupFamily,
    eta: float = DEFAULT_ETA,
) -> ThresholdCheck:
    """Check one threshold representation h_r = sum_g alpha_g g on realized contexts.

    ``f_values`` is an iterable of ``(context, f(context))``.  The margin of a
    context is ``h_r(x)`` when ``f(x) >= r`` and ``-h_r(x)`` otherwise; the
    representation holds when every margin is at least ``1 - eta``.
    """
    unknown = set(coefficients) - set(family.ids)
    if unknown:
        raise ValueError(f"coefficients reference groups outside the family: {sorted(unknown)}")
    B = float(sum(abs(v) for v in coefficients.values()))
    alpha = np.zeros(len(family))
    for gid, v in coefficients.items():
        alpha[family.index[gid]] = v
    worst, where = np.inf, None
    for ctx, fx in f_values:
        h = float(alpha @ family.evaluate(ctx))
        margin = h if fx >= r else -h
        if margin < worst:
            worst, where = margin, ctx
    if where is None:
        return ThresholdCheck(True, B, float("inf"))
    ok = worst >= 1.0 - eta
    return ThresholdCheck(ok, B, worst, None if ok else where)
