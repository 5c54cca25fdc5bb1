"""Graphs over a fixed labelled node set, and the datasets built from them.

Every graph in a :class:`GraphDataset` shares the same ``n`` nodes, so node
``i`` in one graph corresponds to node ``i`` in every other.  This is what
makes dirac-signal scattering and edit distance by edge symmetric difference
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IllegalCharacter,
    NodeCountMismatch,
    SequenceTooLong,
    UnbalancedBrackets,
)

Edge = tuple[int, int]

PAIRING = frozenset({("A", "U"), ("U", "A"), ("G", "C"), ("C", "G"), ("G", "U"), ("U", "G")})
MIN_HAIRPIN = 3
MAX_FOLD_LENGTH = 30


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph; edges stored canonically as ``(i, j)`` with ``i < j``."""

    n: int
    edges: frozenset[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be positive, got {self.n}")
        for e in self.edges:
            i, j = e
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge {e} is not canonical for n={self.n}")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "Graph":
        canon = set()
        for e in edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            canon.add((min(i, j), max(i, j)))
        return cls(n, frozenset(canon))

    @classmethod
    def from_adjacency(cls, a: np.ndarray) -> "Graph":
        a = np.asarray(a)
        n = a.shape[0]
        iu, ju = np.triu_indices(n, k=1)
        mask = a[iu, ju] != 0
        return cls(n, frozenset(zip(iu[mask].tolist(), ju[mask].tolist())))

    def adjacency(self, dtype=float) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=dtype)
        if self.edges:
            idx = np.array(sorted(self.edges))
            a[idx[:, 0], idx[:, 1]] = 1
            a[idx[:, 1], idx[:, 0]] = 1
        return a

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Graph with node ``v`` renamed to ``perm[v]``."""
        return Graph.from_edges(self.n, ((perm[i], perm[j]) for i, j in self.edges))

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class GraphDataset:
    n: int
    graphs: tuple[Graph, ...]
    meta: tuple[float, ...] | None = None
    meta_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if self.meta is not None:
            object.__setattr__(self, "meta", tuple(float(m) for m in self.meta))
            if len(self.meta) != len(self.graphs):
                raise ValueError(
                    f"meta has {len(self.meta)} values for {len(self.graphs)} graphs"
                )
        for k, g in enumerate(self.graphs):
            if g.n != self.n:
                raise NodeCountMismatch(f"graph {k} has {g.n} nodes, dataset has {self.n}")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, k: int) -> Graph:
        return self.graphs[k]

    def meta_array(self) -> np.ndarray | None:
        return None if self.meta is None else np.asarray(self.meta, dtype=float)

    def adjacency_stack(self) -> np.ndarray:
        """All adjacency matrices as an ``(len, n, n)`` float array."""
        out = np.zeros((len(self.graphs), self.n, self.n))
        for k, g in enumerate(self.graphs):
            if g.edges:
                idx = np.array(list(g.edges))
                out[k, idx[:, 0], idx[:, 1]] = 1.0
                out[k, idx[:, 1], idx[:, 0]] = 1.0
        return out

    def subset(self, indices: Sequence[int]) -> "GraphDataset":
        idx = list(indices)
        meta = None if self.meta is None else [self.meta[i] for i in idx]
        return GraphDataset(self.n, tuple(self.graphs[i] for i in idx), meta, self.meta_name)


def ged_fixed(g1: Graph, g2: Graph) -> int:
    """Edit distance under the shared labelling: size of the edge symmetric difference."""
    if g1.n != g2.n:
        raise NodeCountMismatch(f"cannot compare graphs on {g1.n} and {g2.n} nodes")
    return len(g1.edges ^ g2.edges)


def parse_dot_bracket(s: str) -> Graph:
    """Backbone chain ``(i, i+1)`` plus one edge per matched bracket pair."""
    stack: list[int] = []
    edges = {(i, i + 1) for i in range(len(s) - 1)}
    for i, ch in enumerate(s):
        if ch == "(":
            stack.append(i)
        elif ch == ")":
            if not stack:
                raise UnbalancedBrackets(i)
            edges.add((stack.pop(), i))
        elif ch != ".":
            raise IllegalCharacter(i, ch)
    if stack:
        raise UnbalancedBrackets(stack[-1])
    if not s:
        raise ValueError("empty dot-bracket string")
    return Graph(len(s), frozenset(edges))


def pairs_to_dot_bracket(n: int, pairs: Iterable[Edge]) -> str:
    chars = ["."] * n
    for i, j in pairs:
        chars[i] = "("
        chars[j] = ")"
    return "".join(chars)


def gen_toy_trajectory(n: int, p: float, steps: int, seed: int) -> GraphDataset:
    """Erdos-Renyi start graph followed by ``steps`` single edge flips.

    Each flip picks a node pair uniformly at random and toggles it.  Uses
    numpy's PCG64 generator seeded with ``seed``: the ER draw consumes
    ``n(n-1)/2`` uniforms in lexicographic pair order, then one integer draw
    per step.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < p < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    pairs = list(zip(iu.tolist(), ju.tolist()))
    present = rng.random(len(pairs)) < p
    flips = rng.integers(0, len(pairs), size=steps)

    current = {pairs[k] for k in np.flatnonzero(present)}
    graphs = [Graph(n, frozenset(current))]
    for k in flips:
        current ^= {pairs[k]}
        graphs.append(Graph(n, frozenset(current)))
    return GraphDataset(n, tuple(graphs), tuple(float(t) for t in range(steps + 1)), "step_index")


def validate_sequence(seq: str) -> str:
    if not seq:
        raise ValueError("empty RNA sequence")
    for i, ch in enumerate(seq):
        if ch not in "ACGU":
            raise IllegalCharacter(i, ch)
    return seq


class FoldSpace:
    """Pseudoknot-free secondary structures of one sequence, counted and unranked.

    Structures are ranked by the recursion "first base unpaired, then first
    base paired with each legal partner in ascending order", so rank ``r``
    maps to one structure deterministically and uniform sampling of ranks is
    uniform sampling of structures.
    """

    def __init__(self, seq: str):
        self.seq = validate_sequence(seq)
        n = len(seq)
        self.partners = [
            [k for k in range(i + MIN_HAIRPIN + 1, n) if (seq[i], seq[k]) in PAIRING]
            for i in range(n)
        ]
        self._count = lru_cache(maxsize=None)(self._count_uncached)

    def _count_uncached(self, i: int, j: int) -> int:
        if i >= j:
            return 1
        total = self._count(i + 1, j)
        for k in self.partners[i]:
            if k > j:
                break
            total += self._count(i + 1, k - 1) * self._count(k + 1, j)
        return total

    def count(self) -> int:
        return self._count(0, len(self.seq) - 1)

    def unrank(self, r: int) -> list[Edge]:
        out: list[Edge] = []
        self._unrank(0, len(self.seq) - 1, r, out)
        return sorted(out)

    def _unrank(self, i: int, j: int, r: int, out: list[Edge]) -> None:
        while i < j:
            skip = self._count(i + 1, j)
            if r < skip:
                i += 1
                continue
            r -= skip
            for k in self.partners[i]:
                if k > j:
                    raise IndexError("rank out of range")
                right = self._count(k + 1, j)
                block = self._count(i + 1, k - 1) * right
                if r < block:
                    out.append((i, k))
                    inner, outer = divmod(r, right)
                    self._unrank(i + 1, k - 1, inner, out)
                    i, r = k + 1, outer
                    break
                r -= block
            else:
                raise IndexError("rank out of range")
        if r != 0:
            raise IndexError("rank out of range")


def enumerate_fold_pairs(seq: str, max_structures: int, seed: int) -> list[list[Edge]]:
    """Base-pair lists of all folds, or of a uniform sample without replacement."""
    if len(seq) > MAX_FOLD_LENGTH:
        raise SequenceTooLong(f"length {len(seq)} exceeds enumeration bound {MAX_FOLD_LENGTH}")
    if max_structures < 1:
        raise ValueError("max_structures must be at least 1")
    space = FoldSpace(seq)
    total = space.count()
    if total <= max_structures:
        ranks = range(total)
    else:
        rng = np.random.default_rng(seed)
        ranks = np.sort(rng.choice(total, size=max_structures, replace=False)).tolist()
    return [space.unrank(int(r)) for r in ranks]


def enumerate_folds(seq: str, max_structures: int, seed: int) -> GraphDataset:
    """Fold ensemble as graphs with toy energy ``-(number of pairs)``."""
    validate_sequence(seq)
    folds = enumerate_fold_pairs(seq, max_structures, seed)
    n = len(seq)
    backbone = {(i, i + 1) for i in range(n - 1)}
    graphs = tuple(Graph(n, frozenset(backbone | set(pairs))) for pairs in folds)
    energies = tuple(-float(len(pairs)) for pairs in folds)
    return GraphDataset(n, graphs, energies, "energy")


def train_test_split(count: int, train_fraction: float = 0.7, seed: int = 0):
    """Seeded permutation split; returns sorted ``(train, test)`` index arrays."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(count)
    cut = int(round(train_fraction * count))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
