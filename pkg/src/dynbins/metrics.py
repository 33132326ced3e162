"""Calibration error, tree diagnostics, and complexity terms at given witnesses.

Predictions are bucketed by the identity of the interval whose midpoint was
played.  Bucket sums use ``math.fsum`` so results do not depend on summation
order and replays of a stored transcript reproduce them bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .groups import Context, GroupFamily
from .learner import Transcript


@dataclass
class CalibrationTable:
    mcerr: float
    calerr: float
    per_group: dict[str, float]      # over G-bar; mcerr maximizes over G only


def _membership(transcript: Transcript, family: GroupFamily) -> np.ndarray:
    """(T, |G-bar|) 0/1 matrix."""
    return np.stack([family.evaluate(c) for c in transcript.contexts]) if transcript.T else np.zeros((0, len(family)))


def _bucket_bias(p_node, residual, member) -> np.ndarray:
    """sum over buckets v of |sum_{t: p_t = v} g(x_t)(y_t - v)|, one entry per group column."""
    order = np.argsort(p_node, kind="stable")
    nodes = p_node[order]
    cuts = np.flatnonzero(np.diff(nodes)) + 1
    out = np.zeros(member.shape[1])
    per_group = [[] for _ in range(member.shape[1])]
    for idx in np.split(order, cuts):
        res = residual[idx]
        for j in range(member.shape[1]):
            per_group[j].append(abs(math.fsum(res * member[idx, j])))
    for j in range(member.shape[1]):
        out[j] = math.fsum(per_group[j])
    return out


def mcerr(transcript: Transcript, family: GroupFamily) -> CalibrationTable:
    """Max over the supplied family G of the group-weighted bucket bias."""
    p = transcript.p_node
    residual = transcript.y - transcript.p_values
    member = _membership(transcript, family)
    table = _bucket_bias(p, residual, member)
    per_group = {gid: float(v) for gid, v in zip(family.ids, table)}
    in_G = [float(v) for v, keep in zip(table, family.member_mask) if keep]
    return CalibrationTable(max(in_G) if in_G else 0.0, calerr(transcript), per_group)


def calerr(transcript: Transcript) -> float:
    residual = transcript.y - transcript.p_values
    return float(_bucket_bias(transcript.p_node, residual, np.ones((transcript.T, 1)))[0])


@dataclass
class DepthRow:
    depth: int
    ever_active: int
    splits: int
    max_N: float


def depth_profile(transcript: Transcript) -> list[DepthRow]:
    """m_d, |A_d| and the largest frozen play count at each depth 0..d_max."""
    rows = []
    for d in range(transcript.d_max + 1):
        nodes = [n for n in transcript.nodes if n.depth == d]
        rows.append(DepthRow(d, len(nodes), sum(n.split for n in nodes), max((n.N for n in nodes), default=0.0)))
    return rows


def _require_ledger(transcript):
    if transcript.ledger is None:
        raise ValueError("this diagnostic needs a full play ledger (record_level='full')")


def _check_block(transcript, block):
    lo, hi = block
    if not 1 <= lo <= hi <= transcript.T:
        raise ValueError(f"block {block} is not a contiguous sub-range of [1, {transcript.T}]")
    return lo, hi


def play_on_block(transcript: Transcript, block: tuple[int, int]) -> dict[int, float]:
    """N_S(I) for every node played on rounds lo..hi (inclusive)."""
    _require_ledger(transcript)
    lo, hi = _check_block(transcript, block)
    acc: dict[int, float] = {}
    for ids, probs in transcript.ledger[lo - 1:hi]:
        for v, q in zip(ids, probs):
            acc[int(v)] = acc.get(int(v), 0.0) + float(q)
    return acc


def xi_d(transcript: Transcript, block: tuple[int, int], d: int) -> float:
    """sum over depth-d intervals of min(1, N_S(I) w_d^2 / L)."""
    w2 = 4.0 ** -d
    play = play_on_block(transcript, block)
    return math.fsum(
        min(1.0, N * w2 / transcript.L) for v, N in play.items() if transcript.nodes[v].depth == d
    )


def residual(transcript: Transcript, block: tuple[int, int], d: int, f: Callable[[Context], float]) -> float:
    """Truncated residual sum_{t in S} (|mu_t - f(x_t)| - w_d)_+."""
    lo, hi = _check_block(transcript, block)
    mu = transcript.mu[lo - 1:hi]
    if np.isnan(mu).any():
        raise ValueError("true means are not available on this block")
    w = 2.0 ** -d
    fx = np.array([f(c) for c in transcript.contexts[lo - 1:hi]])
    return math.fsum(np.maximum(np.abs(mu - fx) - w, 0.0))


def interval_residual(transcript: Transcript, block, node: int, f: Callable[[Context], float]) -> float:
    """Play-weighted residual sum_t pi_{t,I} (|mu_t - f(x_t)| - w_I)_+ for one interval."""
    _require_ledger(transcript)
    lo, hi = _check_block(transcript, block)
    w = transcript.nodes[node].width
    terms = []
    for t in range(lo, hi + 1):
        ids, probs = transcript.ledger[t - 1]
        hit = np.flatnonzero(ids == node)
        if hit.size:
            mu = transcript.mu[t - 1]
            if math.isnan(mu):
                raise ValueError("true means are not available on this block")
            terms.append(float(probs[hit[0]]) * max(abs(mu - f(transcript.contexts[t - 1])) - w, 0.0))
    return math.fsum(terms)


def segmented_cost(T: int, blocks, witnesses) -> tuple[float, float]:
    """(M, A) = (1 + sum B K, sum sqrt(B K R)) for a contiguous partition of [1, T].

    ``blocks`` are inclusive (lo, hi) pairs; ``witnesses`` one (B, K, R) per block.
    """
    if len(blocks) != len(witnesses):
        raise ValueError("need one witness per block")
    pairs = sorted(zip((tuple(b) for b in blocks), witnesses))
    witnesses = [w for _, w in pairs]
    expect = 1
    for (lo, hi), _ in pairs:
        if lo != expect or hi < lo:
            raise ValueError(f"blocks do not partition [1, {T}] contiguously")
        expect = hi + 1
    if expect != T + 1:
        raise ValueError(f"blocks do not partition [1, {T}] contiguously")
    for B, K, R in witnesses:
        if min(B, K, R) < 0:
            raise ValueError("witness values must be nonnegative")
    M = 1.0 + math.fsum(B * K for B, K, _ in witnesses)
    A = math.fsum(math.sqrt(B * K * R) for B, K, R in witnesses)
    return M, A


@dataclass
class AuditResult:
    worst_ratio: float
    worst: tuple | None          # (group id, node, (lo, hi))
    blocks_checked: int


def bias_audit(transcript: Transcript, family: GroupFamily) -> AuditResult:
    """Worst normalized excess bias over dyadic time blocks.

    For each group g in G-bar, ever-active interval I and dyadic block S
    (intersected with the lifetime of I), computes
    ``(|sum g pi (y - r)| - N^g w) / (sqrt(N^g L) + L)`` and returns the max,
    floored at 0.
    """
    _require_ledger(transcript)
    T, L = transcript.T, transcript.L
    member = _membership(transcript, family)
    n_nodes = len(transcript.nodes)
    # per-node dense play series restricted to lifetimes
    series: dict[int, tuple[int, np.ndarray]] = {}
    for v, node in enumerate(transcript.nodes):
        series[v] = (node.beta, np.zeros(node.delta - node.beta + 1))
    for t, (ids, probs) in enumerate(transcript.ledger, start=1):
        for v, q in zip(ids, probs):
            beta, arr = series[int(v)]
            arr[t - beta] = q
    worst, where, checked = 0.0, None, 0
    levels = range(T.bit_length())
    for v in range(n_nodes):
        node = transcript.nodes[v]
        beta, pi = series[v]
        lo, hi = beta, node.delta
        dev = transcript.y[lo - 1:hi] - node.mid
        for j, gid in enumerate(family.ids):
            g = member[lo - 1:hi, j]
            n_cum = np.concatenate([[0.0], np.cumsum(g * pi)])
            b_cum = np.concatenate([[0.0], np.cumsum(g * pi * dev)])
            for lev in levels:
                size = 1 << lev
                first = (lo - 1) // size
                last = (hi - 1) // size
                starts = np.arange(first, last + 1) * size + 1
                s = np.clip(starts, lo, hi) - lo
                e = np.clip(starts + size - 1, lo, hi) - lo + 1
                N = n_cum[e] - n_cum[s]
                bias = np.abs(b_cum[e] - b_cum[s])
                ratio = (bias - N * node.width) / (np.sqrt(N * L) + L)
                checked += ratio.size
                k = int(np.argmax(ratio))
                if ratio[k] > worst:
                    worst = float(ratio[k])
                    where = (gid, v, (int(starts[k]), int(starts[k] + size - 1)))
    return AuditResult(worst, where, checked)


@dataclass
class InvariantReport:
    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def check_invariants(transcript: Transcript, tol: float = 1e-9) -> InvariantReport:
    """Partition, split overshoot, lifetime, ledger and feasibility checks."""
    rep = InvariantReport()
    nodes = transcript.nodes
    L = transcript.L

    part_ok, bad = True, ""
    for t, leaves in transcript.partition_history:
        ivs = sorted((nodes[v].mid - nodes[v].width / 2, nodes[v].mid + nodes[v].width / 2) for v in leaves)
        edge = 0.0
        for left, right in ivs:
            if not math.isclose(left, edge, abs_tol=1e-12):
                part_ok, bad = False, f"gap/overlap at t={t}"
                break
            edge = right
        if part_ok and not math.isclose(edge, 1.0, abs_tol=1e-12):
            part_ok, bad = False, f"cover ends at {edge} at t={t}"
        if not part_ok:
            break
    rep.checks["partition"] = part_ok
    if bad:
        rep.details["partition"] = bad

    dyadic = [n for n in nodes if n.depth >= 0]
    over = [n for n in dyadic if n.split and not (L * 4.0 ** n.depth <= n.N <= L * 4.0 ** n.depth + 1.0)]
    rep.checks["split_overshoot"] = not over
    if over:
        rep.details["split_overshoot"] = f"{len(over)} split nodes outside [L/w^2, L/w^2 + 1]"
    rep.checks["max_depth"] = all(n.depth <= transcript.d_max for n in nodes)

    # lifetime [beta, delta] must coincide with the rounds the node sits in the partition
    seen: dict[int, list[int]] = {}
    bounds = [t for t, _ in transcript.partition_history] + [transcript.T + 1]
    for (t, leaves), t_next in zip(transcript.partition_history, bounds[1:]):
        for v in leaves:
            seen.setdefault(v, []).append((t, t_next - 1))
    life_ok = True
    for v, spans in seen.items():
        merged = [spans[0]]
        for s, e in spans[1:]:
            if s == merged[-1][1] + 1:
                merged[-1] = (merged[-1][0], e)
            else:
                merged.append((s, e))
        if len(merged) != 1 or merged[0] != (nodes[v].beta, nodes[v].delta):
            life_ok = False
    children_ok = all(
        nodes[c].beta == nodes[v].delta + 1
        for v in range(len(nodes)) if nodes[v].split
        for c in range(len(nodes))
        if nodes[c].depth == nodes[v].depth + 1 and nodes[c].k // 2 == nodes[v].k and nodes[c].depth > 0
    )
    rep.checks["lifetime"] = life_ok and children_ok

    active_at = {}
    for (t, leaves), t_next in zip(transcript.partition_history, bounds[1:]):
        for s in range(t, t_next):
            active_at[s] = set(leaves)
    rep.checks["prediction_in_active_leaf"] = all(
        int(v) in active_at[t] for t, v in enumerate(transcript.p_node, start=1)
    )
    if transcript.ledger is not None:
        rep.checks["ledger_rows_sum_to_one"] = all(
            abs(float(p.sum()) - 1.0) <= 1e-12 for _, p in transcript.ledger
        )
        N = np.zeros(len(nodes))
        for ids, probs in transcript.ledger:
            for v, q in zip(ids, probs):
                N[v] += q
        rep.checks["frozen_counters"] = all(N[v] == nodes[v].N for v in range(len(nodes)))
    if transcript.phi_hat is not None:
        rep.checks["feasibility"] = bool(np.all(transcript.phi_hat <= tol))
    return rep


@dataclass
class MetricsReport:
    mcerr: float
    calerr: float
    per_group: dict[str, float]
    depth_profile: list[DepthRow]
    xi: dict[int, float] | None = None
    residuals: dict | None = None

    def to_dict(self) -> dict:
        return {
            "mcerr": self.mcerr,
            "calerr": self.calerr,
            "per_group": self.per_group,
            "depth_profile": [vars(r) for r in self.depth_profile],
            "xi": self.xi,
            "residuals": self.residuals,
        }


def report(transcript: Transcript, family: GroupFamily) -> MetricsReport:
    table = mcerr(transcript, family)
    xi = None
    if transcript.ledger is not None:
        xi = {d: xi_d(transcript, (1, transcript.T), d) for d in range(transcript.d_max + 1)}
    return MetricsReport(table.mcerr, table.calerr, table.per_group, depth_profile(transcript), xi)
