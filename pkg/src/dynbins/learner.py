"""One full run of the dynamic-bin multicalibration learner."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .bins import DynamicBinTree, FixedGrid
from .environments import Environment, EnvironmentSpec
from .experts import CalibrationWrapper
from .groups import Context, GroupFamily, family_from_name
from .solver import DEFAULT_TOL, InfeasibleForecastError, sample_prediction, solve_forecast


@dataclass(frozen=True)
class RunConfig:
    T: int
    environment: EnvironmentSpec
    family: str = "all_ones"
    schedule: str = "dyadic"
    learner_seed: int = 0
    env_seed: int = 1
    tol: float = DEFAULT_TOL
    record_level: str = "summary"
    fixed_grid: int | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.schedule not in ("dyadic", "full"):
            raise ValueError(f"schedule must be dyadic or full, got {self.schedule!r}")
        if self.record_level not in ("summary", "full"):
            raise ValueError(f"record_level must be summary or full, got {self.record_level!r}")
        if self.fixed_grid is not None and self.fixed_grid < 1:
            raise ValueError("fixed_grid must be a positive bin count")

    _keys = {"T", "environment", "family", "schedule", "seeds", "tol", "record_level", "fixed_grid"}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        extra = set(d) - cls._keys
        if extra:
            raise ValueError(f"unknown run config keys: {sorted(extra)}")
        if "T" not in d or "environment" not in d:
            raise ValueError("run config needs T and environment")
        seeds = d.get("seeds", {})
        if set(seeds) - {"learner", "env"}:
            raise ValueError(f"unknown seed keys: {sorted(set(seeds) - {'learner', 'env'})}")
        return cls(
            T=int(d["T"]),
            environment=EnvironmentSpec.from_dict(d["environment"]),
            family=d.get("family", "all_ones"),
            schedule=d.get("schedule", "dyadic"),
            learner_seed=int(seeds.get("learner", 0)),
            env_seed=int(seeds.get("env", 1)),
            tol=float(d.get("tol", DEFAULT_TOL)),
            record_level=d.get("record_level", "summary"),
            fixed_grid=d.get("fixed_grid"),
        )

    def to_dict(self) -> dict:
        out = {
            "T": self.T,
            "environment": self.environment.to_dict(),
            "family": self.family,
            "schedule": self.schedule,
            "seeds": {"learner": self.learner_seed, "env": self.env_seed},
            "tol": self.tol,
            "record_level": self.record_level,
        }
        if self.fixed_grid is not None:
            out["fixed_grid"] = self.fixed_grid
        return out


@dataclass
class NodeRecord:
    depth: int       # -1 for fixed-grid bins
    k: int
    mid: float
    width: float
    beta: int
    delta: int
    N: float
    split: bool

    @property
    def key(self) -> tuple[int, int]:
        return self.depth, self.k


@dataclass
class Transcript:
    T: int
    family: str
    group_count: int
    L: float
    d_max: int
    contexts: list[Context]
    p_node: np.ndarray
    y: np.ndarray
    mu: np.ndarray                  # nan where the mean is not exposed
    nodes: list[NodeRecord]
    partition_history: list[tuple[int, tuple[int, ...]]]
    phi_hat: np.ndarray | None = None
    ledger: list[tuple[np.ndarray, np.ndarray]] | None = None   # per round (node ids, probs)
    experts_spawned: int = 0
    config: dict | None = None

    @property
    def p_values(self) -> np.ndarray:
        mids = np.array([n.mid for n in self.nodes])
        return mids[self.p_node]

    def ever_active(self) -> int:
        return len(self.nodes)

    def max_depth_reached(self) -> int:
        return max(n.depth for n in self.nodes)

    def has_means(self) -> bool:
        return not np.isnan(self.mu).any()

    # -- JSONL ------------------------------------------------------------

    def to_jsonl(self, path) -> None:
        key = [list(n.key) for n in self.nodes]
        header = {
            "kind": "header",
            "T": self.T,
            "family": self.family,
            "group_count": self.group_count,
            "L": self.L,
            "d_max": self.d_max,
            "experts_spawned": self.experts_spawned,
            "config": self.config,
            "contexts": sorted(
                ({"id": c.id, "grid_value": c.grid_value, "level": c.level} for c in set(self.contexts)),
                key=lambda c: c["id"],
            ),
            "nodes": [[n.depth, n.k, n.mid, n.width, n.beta, n.delta, n.N, n.split] for n in self.nodes],
        }
        changes = dict(self.partition_history)
        lines = [json.dumps(header)]
        for i in range(self.T):
            t = i + 1
            row = {
                "t": t,
                "x": self.contexts[i].id,
                "partition": [key[v] for v in changes[t]] if t in changes else None,
                "forecast": None,
                "p": key[int(self.p_node[i])],
                "y": float(self.y[i]),
                "mu": None if math.isnan(self.mu[i]) else float(self.mu[i]),
            }
            if self.ledger is not None:
                ids, probs = self.ledger[i]
                row["forecast"] = [key[int(v)] + [float(q)] for v, q in zip(ids, probs)]
            if self.phi_hat is not None:
                row["phi_hat"] = float(self.phi_hat[i])
            lines.append(json.dumps(row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Transcript":
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        if header.get("kind") != "header":
            raise ValueError("transcript is missing its header line")
        nodes = [NodeRecord(int(d), int(k), m, w, int(b), int(e), N, bool(s))
                 for d, k, m, w, b, e, N, s in header["nodes"]]
        index = {n.key: i for i, n in enumerate(nodes)}
        ctx = {c["id"]: Context(c["id"], c["grid_value"], c["level"]) for c in header["contexts"]}
        T = header["T"]
        if len(rows) != T:
            raise ValueError(f"transcript has {len(rows)} rounds, header says {T}")
        history = [(r["t"], tuple(index[tuple(k)] for k in r["partition"])) for r in rows if r["partition"] is not None]
        ledger = None
        if all(r["forecast"] is not None for r in rows):
            ledger = [
                (np.array([index[(d, k)] for d, k, _ in r["forecast"]], dtype=np.int64),
                 np.array([q for _, _, q in r["forecast"]]))
                for r in rows
            ]
        phi = np.array([r["phi_hat"] for r in rows]) if rows and "phi_hat" in rows[0] else None
        return cls(
            T=T,
            family=header["family"],
            group_count=header["group_count"],
            L=header["L"],
            d_max=header["d_max"],
            contexts=[ctx[r["x"]] for r in rows],
            p_node=np.array([index[tuple(r["p"])] for r in rows], dtype=np.int64),
            y=np.array([r["y"] for r in rows], dtype=float),
            mu=np.array([np.nan if r["mu"] is None else r["mu"] for r in rows], dtype=float),
            nodes=nodes,
            partition_history=history,
            phi_hat=phi,
            ledger=ledger,
            experts_spawned=header.get("experts_spawned", 0),
            config=header.get("config"),
        )


@dataclass
class DebugRow:
    t: int
    experts: int
    max_omega: float
    phi_hat: float


def _leaf_state(part):
    ids, mids, widths = part.leaf_arrays()
    if isinstance(part, DynamicBinTree):
        betas = [part.nodes[i].beta for i in ids]
    else:
        betas = [1] * len(ids)
    return ids, mids, widths, betas


def run(config: RunConfig, family: GroupFamily | None = None, debug: list | None = None) -> Transcript:
    """Play ``config.T`` rounds and return the transcript.

    Per round: context, expert spawn, coefficients, feasible forecast,
    private sample, outcome (adaptive Nature sees only the mixed
    forecast), wrapper update, play accumulation, split pass.
    Pass a list as ``debug`` to collect one :class:`DebugRow` per round.
    """
    family = family or family_from_name(config.family)
    T, G = config.T, len(family)
    env = Environment(config.environment, T, config.env_seed)
    adaptive = not config.environment.oblivious
    rng = np.random.default_rng(config.learner_seed)
    part = FixedGrid(T, G, config.fixed_grid) if config.fixed_grid else DynamicBinTree(T, G)
    wrapper = CalibrationWrapper(T, G, part.universe_size, config.schedule)
    keep_ledger = config.record_level == "full"

    ids, mids, widths, betas = _leaf_state(part)
    history = [(1, tuple(int(v) for v in ids))]
    contexts: list[Context] = []
    p_node = np.empty(T, dtype=np.int64)
    ys = np.empty(T)
    mus = np.empty(T)
    phis = np.empty(T)
    ledger = [] if keep_ledger else None

    for t in range(1, T + 1):
        ctx = env.next_context(t)
        gvals = family.evaluate(ctx)
        wrapper.spawn(t, ids, betas)
        a, b = wrapper.coefficients(gvals, ids.size)
        try:
            fc = solve_forecast(mids, widths, a, b, config.tol)
        except InfeasibleForecastError as exc:
            raise InfeasibleForecastError(
                f"round {t}: {exc}; leaves={ids.tolist()} a={a.tolist()} b={b.tolist()}"
            ) from exc
        slot = sample_prediction(fc, rng)
        pi = fc.dense(ids.size)
        if adaptive:
            draw = env.draw_outcome(t, ctx, pi, mids)
        else:
            draw = env.draw_outcome(t, ctx)
        phi_hat = wrapper.update(pi, draw.y, gvals, mids, widths, a, b)
        played = ids[fc.slots]
        part.accumulate_play(played, fc.probs)

        contexts.append(ctx)
        p_node[t - 1] = ids[slot]
        ys[t - 1] = draw.y
        mus[t - 1] = np.nan if draw.mu is None else draw.mu
        phis[t - 1] = phi_hat
        if keep_ledger:
            ledger.append((played, fc.probs))
        if debug is not None:
            debug.append(DebugRow(t, len(wrapper), float(wrapper.omega.max()), phi_hat))

        if part.split_pass(t):
            ids, mids, widths, betas = _leaf_state(part)
            wrapper.repartition({int(v): j for j, v in enumerate(ids)})
            if t < T:
                history.append((t + 1, tuple(int(v) for v in ids)))
    part.finish(T)

    return Transcript(
        T=T,
        family=family.name,
        group_count=G,
        L=part.L,
        d_max=part.d_max,
        contexts=contexts,
        p_node=p_node,
        y=ys,
        mu=mus,
        nodes=_node_records(part, T),
        partition_history=history,
        phi_hat=phis,
        ledger=ledger,
        experts_spawned=wrapper.n_spawned,
        config=config.to_dict(),
    )


def _node_records(part, T) -> list[NodeRecord]:
    if isinstance(part, FixedGrid):
        w = 1.0 / part.n_bins
        return [NodeRecord(-1, k, (k + 0.5) * w, w, 1, T, float(part.N[k]), False) for k in range(part.n_bins)]
    out = []
    for node in part.nodes:
        if node.beta > T:
            # children of a split at round T are never played; they sit at the tail
            continue
        iv = node.interval
        out.append(NodeRecord(iv.depth, iv.k, iv.midpoint, iv.width, node.beta, node.delta, node.N,
                              node.children is not None))
    return out
