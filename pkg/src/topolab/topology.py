"""Communication topologies as DAGs over a fixed canonical agent order.

Convention used throughout the package: ``adj[i, j]`` is True when agent ``i``
receives messages from agent ``j``. Only ``j < i`` entries may be set, so every
topology is acyclic by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TopologyError(ValueError):
    """Invalid topology or topology parameters."""


class CycleError(TopologyError):
    """Raised when a topological sort meets a cycle."""


@dataclass(frozen=True, eq=False)
class Topology:
    n: int
    adj: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"agent count must be >= 1, got {self.n}")
        adj = np.array(self.adj, dtype=bool, copy=True)
        if adj.shape != (self.n, self.n):
            raise TopologyError(f"adjacency shape {adj.shape} does not match n={self.n}")
        if np.triu(adj).any():
            raise TopologyError("adjacency must be strictly lower-triangular (receiver > sender)")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        """Build from ``(receiver, sender)`` pairs."""
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if not (0 <= j < i < n):
                raise TopologyError(f"edge ({i}<-{j}) is not a j<i pair for n={n}")
            adj[i, j] = True
        return cls(n, adj)

    @classmethod
    def empty(cls, n: int) -> "Topology":
        return cls(n, np.zeros((n, n), dtype=bool))

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Sorted ``(receiver, sender)`` pairs."""
        return [(int(i), int(j)) for i, j in np.argwhere(self.adj)]

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum())

    def in_neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adj[i])]

    def out_neighbors(self, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.adj[:, j])]

    def with_edge(self, i: int, j: int, present: bool = True) -> "Topology":
        adj = self.adj.copy()
        adj[i, j] = present
        return Topology(self.n, adj)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash((self.n, self.adj.tobytes()))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        try:
            n = int(data["n"])
            edges = [(int(i), int(j)) for i, j in data["edges"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"malformed topology document: {exc}") from exc
        return cls.from_edges(n, edges)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TopologyKind:
    """A named topology family plus its parameter.

    ``param`` is the layer count for ``layered``, the edge density for
    ``random`` and the branching factor for ``tree``; unused otherwise.
    """

    tag: str
    param: float | int | None = None

    TAGS = ("full", "chain", "star", "layered", "random", "tree")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise TopologyError(f"unknown topology kind {self.tag!r}; expected one of {self.TAGS}")
        if self.tag == "layered" and (self.param is None or int(self.param) < 1):
            raise TopologyError("layered topology needs a positive layer count")
        if self.tag == "random" and (self.param is None or not 0.0 <= float(self.param) <= 1.0):
            raise TopologyError(f"random density must lie in [0, 1], got {self.param}")
        if self.tag == "tree" and (self.param is None or int(self.param) < 1):
            raise TopologyError("tree topology needs branching >= 1")

    @classmethod
    def parse(cls, text: str) -> "TopologyKind":
        """Parse ``"full"``, ``"layered:3"``, ``"random:0.5"``, ``"tree:2"``."""
        tag, _, arg = text.strip().lower().partition(":")
        defaults = {"layered": 3, "random": 0.5, "tree": 2}
        if not arg:
            return cls(tag, defaults.get(tag))
        value = float(arg) if tag == "random" else int(arg)
        return cls(tag, value)

    def label(self) -> str:
        return self.tag if self.param is None else f"{self.tag}:{self.param}"


def _layer_sizes(n: int, layers: int) -> list[int]:
    base, extra = divmod(n, layers)
    return [base + (1 if k < extra else 0) for k in range(layers)]


def build_named(kind: TopologyKind, n: int, rng: np.random.Generator | None = None) -> Topology:
    """Canonical instance of a named topology family over ``n`` agents."""
    if n < 1:
        raise TopologyError(f"agent count must be >= 1, got {n}")
    adj = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    if kind.tag == "full":
        adj = np.tril(np.ones((n, n), dtype=bool), k=-1)
    elif kind.tag == "chain":
        adj[idx[1:], idx[:-1]] = True
    elif kind.tag == "star":
        adj[1:, 0] = True
    elif kind.tag == "layered":
        layers = int(kind.param)
        if layers > n:
            raise TopologyError(f"cannot split {n} agents into {layers} layers")
        bounds = np.cumsum([0] + _layer_sizes(n, layers))
        for k in range(layers - 1):
            src = slice(bounds[k], bounds[k + 1])
            dst = slice(bounds[k + 1], bounds[k + 2])
            adj[dst, src] = True
    elif kind.tag == "random":
        if rng is None:
            raise TopologyError("random topology requires an rng")
        draws = rng.random((n, n)) < float(kind.param)
        adj = np.tril(draws, k=-1)
        adj[idx[1:], idx[:-1]] = True
    elif kind.tag == "tree":
        b = int(kind.param)
        for i in range(1, n):
            adj[i, (i - 1) // b] = True
    return Topology(n, adj)


def full(n: int) -> Topology:
    return build_named(TopologyKind("full"), n)


def chain(n: int) -> Topology:
    return build_named(TopologyKind("chain"), n)


@dataclass(frozen=True)
class SweepPath:
    steps: tuple[Topology, ...]
    direction: str  # "sparsify" or "densify"

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def _non_backbone_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i - 1)]


def densify_path(n: int, rng: np.random.Generator) -> SweepPath:
    """Chain -> Full, adding one uniformly chosen absent edge per step."""
    if n < 2:
        raise TopologyError("sweep paths need n >= 2")
    pairs = _non_backbone_pairs(n)
    order = rng.permutation(len(pairs))
    current = chain(n)
    steps = [current]
    for k in order:
        current = current.with_edge(*pairs[k])
        steps.append(current)
    return SweepPath(tuple(steps), "densify")


def sparsify_path(n: int, rng: np.random.Generator) -> SweepPath:
    """Full -> Chain, removing one uniformly chosen non-backbone edge per step."""
    if n < 2:
        raise TopologyError("sweep paths need n >= 2")
    pairs = _non_backbone_pairs(n)
    order = rng.permutation(len(pairs))
    current = full(n)
    steps = [current]
    for k in order:
        current = current.with_edge(*pairs[k], present=False)
        steps.append(current)
    return SweepPath(tuple(steps), "sparsify")


def topological_sort(t: Topology) -> list[int]:
    """Kahn's algorithm, always releasing the smallest ready agent first."""
    import heapq

    indeg = t.adj.sum(axis=1).astype(int)
    ready = [i for i in range(t.n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        j = heapq.heappop(ready)
        order.append(j)
        for i in t.out_neighbors(j):
            indeg[i] -= 1
            if indeg[i] == 0:
                heapq.heappush(ready, i)
    if len(order) != t.n:
        raise CycleError(f"topology has a cycle among agents {sorted(set(range(t.n)) - set(order))}")
    return order


def is_acyclic(adj: np.ndarray) -> bool:
    """Cycle check on an arbitrary square 0/1 receive matrix."""
    a = np.asarray(adj, dtype=bool)
    indeg = a.sum(axis=1).astype(int)
    stack = list(np.flatnonzero(indeg == 0))
    seen = 0
    while stack:
        j = stack.pop()
        seen += 1
        for i in np.flatnonzero(a[:, j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                stack.append(i)
    return seen == a.shape[0]


def sparsity(t: Topology) -> float:
    """``1 - |E| / (n(n-1)/2)``: 0 for Full, 1 for the empty graph."""
    if t.n < 2:
        raise TopologyError("sparsity is undefined for a single agent")
    return 1.0 - t.num_edges / (t.n * (t.n - 1) / 2)


def degrees(t: Topology) -> np.ndarray:
    """Total (in + out) degree of every agent."""
    return t.adj.sum(axis=0) + t.adj.sum(axis=1)


def degree(t: Topology, i: int) -> int:
    if not 0 <= i < t.n:
        raise IndexError(f"agent {i} out of range for n={t.n}")
    return int(degrees(t)[i])


def template_adjacency(kind: str, n: int) -> np.ndarray:
    """Symmetric 0/1 adjacency of the full or chain template (no self loops)."""
    base = {"full": full, "chain": chain}[kind](n).adj
    return (base | base.T).astype(float)


def edge_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the ``j < i`` universe, in row-major order."""
    return np.tril_indices(n, k=-1)


def describe(t: Topology, names: Sequence[str] | None = None) -> str:
    names = names or [str(i) for i in range(t.n)]
    return ", ".join(f"{names[i]}<-{names[j]}" for i, j in t.edges) or "(no edges)"
