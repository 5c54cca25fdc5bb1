"""Embedding quality metrics and non-learned baselines.

Smoothness of a signal ``x`` over an embedding is measured on the symmetric
kNN graph of the embedded points with combinatorial Laplacian ``L = D - A``:
the dirichlet energy ``x^T L x`` and the smoothness index
``x^T L x / x^T x``.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse, stats
from scipy.spatial.distance import cdist

from .errors import KTooLarge, LengthMismatch, NodeCountMismatch, ZeroSignal
from .graphs import Graph, GraphDataset, ged_fixed


@dataclass(frozen=True)
class KnnGraph:
    k: int
    adjacency: sparse.csr_matrix

    def edges(self) -> np.ndarray:
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1)

    def laplacian(self) -> sparse.csr_matrix:
        deg = np.asarray(self.adjacency.sum(axis=1)).ravel()
        return (sparse.diags(deg) - self.adjacency).tocsr()


@dataclass(frozen=True)
class SmoothnessReport:
    k: int
    dirichlet: float
    smoothness_index: float
    signal_name: str = "signal"


def knn_indices(points: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """``(rows, k)`` nearest-neighbour indices, self excluded, ties to the lower index."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    rows = points.shape[0]
    if rows < 2:
        raise KTooLarge("need at least two points")
    if not 1 <= k < rows:
        raise KTooLarge(f"k={k} must satisfy 1 <= k < {rows}")
    out = np.empty((rows, k), dtype=int)
    for start in range(0, rows, chunk):
        stop = min(rows, start + chunk)
        d = cdist(points[start:stop], points)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def knn_graph(points: np.ndarray, k: int) -> KnnGraph:
    """Symmetric union kNN graph: ``i ~ j`` if either is among the other's k nearest."""
    nbrs = knn_indices(points, k)
    rows = nbrs.shape[0]
    r = np.repeat(np.arange(rows), k)
    c = nbrs.ravel()
    a = sparse.coo_matrix((np.ones(r.size), (r, c)), shape=(rows, rows)).tocsr()
    a = ((a + a.T) > 0).astype(float).tocsr()
    return KnnGraph(k, a)


def dirichlet_energy(graph: KnnGraph, x: np.ndarray) -> float:
    e = graph.edges()
    diff = x[e[:, 0]] - x[e[:, 1]]
    return float(np.sum(diff * diff))


def smoothness(points: np.ndarray, x: np.ndarray, k: int, signal_name: str = "signal",
               center: bool = False) -> SmoothnessReport:
    x = np.asarray(x, dtype=float).ravel()
    points = np.asarray(points, dtype=float)
    if len(x) != len(points):
        raise LengthMismatch(f"signal has {len(x)} values for {len(points)} points")
    if center:
        x = x - x.mean()
    norm = float(x @ x)
    if norm == 0:
        raise ZeroSignal("signal has zero norm")
    energy = dirichlet_energy(knn_graph(points, k), x)
    return SmoothnessReport(k, energy, energy / norm, signal_name)


def energy_mse_report(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions for {t.size} targets")
    return float(np.mean((p - t) ** 2))


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (``ddof=1``; 0 for a single value)."""
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def pca_project(points, dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Project centred data on the top ``dims`` covariance eigenvectors.

    Each component is signed so its largest-magnitude entry is positive.
    Returns ``(projection, explained_variance_ratio)``.  Wide or sparse inputs
    (more columns than rows) go through the centred Gram matrix instead of the
    covariance.
    """
    rows, cols = points.shape
    if not 1 <= dims <= min(rows, cols):
        raise ValueError(f"dims={dims} must lie in [1, {min(rows, cols)}]")
    if cols > rows or sparse.issparse(points):
        return _pca_gram(points, dims)
    x = np.asarray(points, dtype=float)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(rows - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = _fix_signs(evecs[:, order])
    total = evals.sum()
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return xc @ evecs[:, :dims], ratio[:dims]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _pca_gram(points, dims: int):
    m = sparse.csr_matrix(points, dtype=float) if sparse.issparse(points) else np.asarray(points, dtype=float)
    rows = m.shape[0]
    mean = np.asarray(m.mean(axis=0)).ravel()
    gram = m @ m.T
    gram = gram.toarray() if sparse.issparse(gram) else gram
    rs = np.asarray(m @ mean).ravel()
    gram = gram - rs[:, None] - rs[None, :] + mean @ mean
    evals, u = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    u = u[:, order[:dims]]
    sv = np.sqrt(evals[:dims])
    # covariance eigenvectors v = Xc^T u / s; u is orthogonal to the ones vector
    safe = np.where(sv > 0, sv, 1.0)
    v = np.asarray(m.T @ u) / safe - np.outer(mean, u.sum(axis=0)) / safe
    signs = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(dims)])
    signs[signs == 0] = 1.0
    total = evals.sum()
    ratio = evals[:dims] / total if total > 0 else np.zeros(dims)
    return u * sv * signs, ratio


class WLFeaturizer:
    """Weisfeiler-Lehman subtree features with a label dictionary shared across graphs.

    All nodes start with the same label.  At each iteration a node's new label
    is the compressed pair (own label, sorted multiset of neighbour labels).
    Features count every label seen at iterations ``0..h``.
    """

    def __init__(self, iterations: int):
        if iterations < 0:
            raise ValueError("iterations must be nonnegative")
        self.iterations = iterations
        self.table: dict[tuple, int] = {("init",): 0}

    def _compress(self, key: tuple) -> int:
        label = self.table.get(key)
        if label is None:
            label = self.table[key] = len(self.table)
        return label

    def features(self, g: Graph) -> Counter:
        nbrs = [[] for _ in range(g.n)]
        for i, j in g.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        labels = [0] * g.n
        counts = Counter(labels)
        for _ in range(self.iterations):
            labels = [
                self._compress((labels[v], tuple(sorted(labels[u] for u in nbrs[v]))))
                for v in range(g.n)
            ]
            counts.update(labels)
        return counts

    def matrix(self, graphs: Sequence[Graph]) -> sparse.csr_matrix:
        """Sparse count matrix, columns ordered by label id."""
        feats = [self.features(g) for g in graphs]
        r = [k for k, c in enumerate(feats) for _ in c]
        cols = [label for c in feats for label in c]
        vals = [count for c in feats for count in c.values()]
        return sparse.csr_matrix((vals, (r, cols)), shape=(len(graphs), len(self.table)), dtype=float)


def wl_features(g: Graph, iterations: int, featurizer: WLFeaturizer | None = None) -> Counter:
    featurizer = featurizer or WLFeaturizer(iterations)
    return featurizer.features(g)


def wl_embedding(graphs: Sequence[Graph], iterations: int = 3, dims: int = 25) -> np.ndarray:
    """PCA of the WL count matrix."""
    m = WLFeaturizer(iterations).matrix(graphs)
    dims = min(dims, *m.shape)
    if m.shape[1] <= m.shape[0]:
        m = m.toarray()
    return pca_project(m, dims)[0]


def ged_matrix(graphs: Sequence[Graph]) -> np.ndarray:
    """Pairwise fixed-correspondence GED via Hamming distance of upper triangles."""
    if not graphs:
        return np.zeros((0, 0))
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise NodeCountMismatch("all graphs must share the node set")
    iu = np.triu_indices(n, k=1)
    bits = np.stack([g.adjacency()[iu] for g in graphs])
    ones = bits.sum(axis=1)
    return np.rint(ones[:, None] + ones[None, :] - 2.0 * bits @ bits.T)


def classical_mds(dist: np.ndarray, dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Classical MDS; components with nonpositive eigenvalues are zero-filled.

    Returns ``(coordinates, eigenvalues sorted descending)``.
    """
    d = np.asarray(dist, dtype=float)
    m = d.shape[0]
    h = np.eye(m) - np.ones((m, m)) / m
    b = -0.5 * h @ (d * d) @ h
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    coords = np.zeros((m, dims))
    keep = min(dims, m)
    lam = np.clip(evals[:keep], 0.0, None)
    coords[:, :keep] = evecs[:, :keep] * np.sqrt(lam)
    return coords, evals


def ged_mds_embedding(dataset: GraphDataset | Sequence[Graph], dims: int) -> np.ndarray:
    if dims < 1:
        raise ValueError("dims must be at least 1")
    graphs = dataset.graphs if isinstance(dataset, GraphDataset) else list(dataset)
    dist = ged_matrix(graphs)
    if not np.any(dist):
        warnings.warn("all pairwise edit distances are zero; embedding is all zeros")
        return np.zeros((len(graphs), dims))
    return classical_mds(dist, dims)[0]


def trajectory_edit_profile(graphs: Sequence[Graph]) -> list[int]:
    if not graphs:
        raise ValueError("need at least one graph")
    last = graphs[-1]
    return [ged_fixed(g, last) for g in graphs]


def count_increases(profile: Sequence[int]) -> int:
    """Number of steps where the distance-to-final goes up."""
    return int(sum(b > a for a, b in zip(profile, profile[1:])))


def faithfulness_report(points: np.ndarray, graphs: Sequence[Graph], pairs: int = 2000,
                        seed: int = 0) -> float:
    """Spearman correlation between embedding distance and GED over random pairs."""
    rng = np.random.default_rng(seed)
    m = len(graphs)
    i = rng.integers(0, m, size=pairs)
    j = rng.integers(0, m, size=pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    emb = np.linalg.norm(np.asarray(points)[i] - np.asarray(points)[j], axis=1)
    ged = np.array([ged_fixed(graphs[a], graphs[b]) for a, b in zip(i, j)])
    return float(stats.spearmanr(emb, ged).statistic)
