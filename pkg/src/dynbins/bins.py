"""Adaptively refined dyadic partition of the prediction axis [0, 1].

The tree starts from the single root interval [0, 1].  A leaf of width w
is split at the end of the first round in which its running total play
reaches ``L / w**2``, where ``L = ln(e * T * |G|)`` uses the natural log.
Leaves at depth ``d_max = floor(log2(T) / 2) + 1`` never split.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Interval:
    depth: int
    k: int

    def __post_init__(self):
        if self.depth < 0 or not 0 <= self.k < 2 ** self.depth:
            raise ValueError(f"invalid dyadic interval (depth={self.depth}, k={self.k})")

    @property
    def width(self) -> float:
        return 2.0 ** -self.depth

    @property
    def left(self) -> float:
        return self.k * self.width

    @property
    def right(self) -> float:
        return (self.k + 1) * self.width

    @property
    def midpoint(self) -> float:
        return self.left + self.width / 2

    @property
    def closed_right(self) -> bool:
        return self.k == 2 ** self.depth - 1

    def contains(self, value: float) -> bool:
        if self.closed_right:
            return self.left <= value <= self.right
        return self.left <= value < self.right

    def children(self) -> tuple["Interval", "Interval"]:
        return Interval(self.depth + 1, 2 * self.k), Interval(self.depth + 1, 2 * self.k + 1)

    def __repr__(self):
        close = "]" if self.closed_right else ")"
        return f"[{self.left:g},{self.right:g}{close}"


@dataclass
class BinNode:
    interval: Interval
    N: float = 0.0
    beta: int | None = None
    delta: int | None = None
    children: tuple[int, int] | None = None
    parent: int | None = None

    @property
    def is_active(self) -> bool:
        return self.beta is not None and self.delta is None


def log_factor(T: int, group_count: int) -> float:
    """L = ln(e * T * |G|)."""
    return 1.0 + math.log(T) + math.log(group_count)


def max_depth(T: int) -> int:
    # floor(log2(T)/2) computed on integers to avoid float rounding at powers of 4
    return (T.bit_length() - 1) // 2 + 1


class DynamicBinTree:
    """Node store plus the ordered list of active leaves.

    Node ids are stable integers assigned in creation order; the root is 0.
    """


    def __init__(self, T: int, group_count: int):
        if T < 1:
            raise ValueError("horizon T must be >= 1")
        if group_count < 1:
            raise ValueError("group_count must be >= 1")
        self.T = T
        self.group_count = group_count
        self.L = log_factor(T, group_count)
        self.d_max = max_depth(T)
        self.thresholds = [self.L * 4.0 ** d for d in range(self.d_max + 1)]
        self.nodes: list[BinNode] = [BinNode(Interval(0, 0), beta=1)]
        self.active: list[int] = [0]
        self._lefts: list[float] = [0.0]
        self.t = 1
        self.version = 0

    # -- queries ---------------------------------------------------------

    @property
    def universe_size(self) -> int:
        """Number of dyadic intervals at depths 0..d_max."""
        return 2 ** (self.d_max + 1) - 1

    def active_partition(self) -> list[tuple[Interval, int]]:
        return [(self.nodes[i].interval, i) for i in self.active]

    def leaf_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(node ids, midpoints, widths) of the active leaves, left to right."""
        ids = np.asarray(self.active, dtype=np.int64)
        mids = np.array([self.nodes[i].interval.midpoint for i in self.active])
        widths = np.array([self.nodes[i].interval.width for i in self.active])
        return ids, mids, widths

    def locate(self, value: float) -> int:
        """Node id of the active leaf containing ``value``."""
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"value {value} outside [0, 1]")
        pos = bisect.bisect_right(self._lefts, value) - 1
        return self.active[pos]

    def key(self, node_id: int) -> tuple[int, int]:
        iv = self.nodes[node_id].interval
        return iv.depth, iv.k

    # -- updates ---------------------------------------------------------

    def accumulate_play(self, node_ids, probs) -> None:
        probs = np.asarray(probs, dtype=float)
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"forecast probabilities sum to {probs.sum()!r}, expected 1")
        nodes = self.nodes
        for i, p in zip(node_ids, probs):
            node = nodes[int(i)]
            if not node.is_active:
                raise ValueError(f"forecast assigns mass to inactive node {int(i)}")
            node.N += float(p)

    def split_pass(self, t: int) -> list[int]:
        """Split every qualifying leaf at the end of round ``t``.

        Returns the ids of the nodes that were split.
        """
        split = []
        new_active = []
        for i in self.active:
            node = self.nodes[i]
            d = node.interval.depth
            if d < self.d_max and node.N >= self.thresholds[d]:
                node.delta = t
                kids = []
                for child in node.interval.children():
                    self.nodes.append(BinNode(child, beta=t + 1, parent=i))
                    kids.append(len(self.nodes) - 1)
                node.children = (kids[0], kids[1])
                new_active.extend(kids)
                split.append(i)
            else:
                new_active.append(i)
        if split:
            self.active = new_active
            self._lefts = [self.nodes[i].interval.left for i in new_active]
            self.version += 1
        self.t = t + 1
        return split

    def finish(self, T: int) -> None:
        """Close the lifetimes of leaves still active at the horizon."""
        for i in self.active:
            node = self.nodes[i]
            if node.delta is None and node.beta <= T:
                node.delta = T


class FixedGrid:
    """Static uniform partition of [0, 1] into ``n_bins`` leaves (baseline).

    Shares the leaf interface of :class:`DynamicBinTree` but never splits.
    Leaves are keyed ``(-1, k)`` to keep them apart from dyadic keys.
    """


    def __init__(self, T: int, group_count: int, n_bins: int):
        if T < 1 or group_count < 1:
            raise ValueError("T and group_count must be >= 1")
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        self.T = T
        self.group_count = group_count
        self.n_bins = n_bins
        self.L = log_factor(T, group_count)
        self.d_max = 0
        self.N = np.zeros(n_bins)
        self.active = list(range(n_bins))
        self.version = 0

    @property
    def universe_size(self) -> int:
        return self.n_bins

    def leaf_arrays(self):
        ids = np.arange(self.n_bins, dtype=np.int64)
        w = 1.0 / self.n_bins
        return ids, (ids + 0.5) * w, np.full(self.n_bins, w)

    def key(self, node_id: int) -> tuple[int, int]:
        return -1, int(node_id)

    def accumulate_play(self, node_ids, probs) -> None:
        self.N[np.asarray(node_ids)] += probs

    def split_pass(self, t: int) -> list[int]:
        return []

    def finish(self, T: int) -> None:
        pass


def new_tree(T: int, group_count: int) -> DynamicBinTree:
    return DynamicBinTree(T, group_count)
