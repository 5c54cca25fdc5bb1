"""Geometric scattering of dirac signals with lazy random-walk diffusion wavelets.

For a graph with adjacency ``A`` and degrees ``D`` the lazy walk is
``P = (I + A D^-1) / 2`` and the dyadic wavelets are
``Psi_j = P^(2^(j-1)) - P^(2^j)`` for ``j = 1..J``.  Each dirac ``d_i``
contributes, in this order:

* order 0: moments of ``d_i`` (always ones, kept for layout),
* order 1: moments of ``Psi_j d_i`` for ``j = 1..J``,
* order 2: moments of ``Psi_j2 |Psi_j1 d_i|`` for ``j1 < j2`` in lexicographic order,

where the ``q``-th moment of ``x`` is ``sum_v |x_v|^q`` for ``q = 1..Q``.
Per-dirac blocks are concatenated in node order.

Everything here is batched over a leading graph axis so that a dataset is
scattered with a handful of ``matmul`` calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BackwardWithoutForward, IsolatedNode, ManifestMismatch, ShapeMismatch
from .graphs import Graph, GraphDataset


@dataclass(frozen=True)
class ScatteringConfig:
    j_max: int | None = None
    q_max: int = 4
    orders: tuple[int, ...] = (0, 1, 2)
    self_loop_isolated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(sorted(set(int(o) for o in self.orders))))
        if self.j_max is not None and self.j_max < 1:
            raise ValueError("j_max must be at least 1")
        if self.q_max < 1:
            raise ValueError("q_max must be at least 1")
        if not self.orders or not set(self.orders) <= {0, 1, 2}:
            raise ValueError("orders must be a nonempty subset of {0, 1, 2}")

    def scales(self, n: int) -> int:
        return self.j_max if self.j_max is not None else default_scales(n)

    def resolved(self, n: int) -> "ScatteringConfig":
        return ScatteringConfig(self.scales(n), self.q_max, self.orders, self.self_loop_isolated)

    def blocks_per_node(self, n: int) -> int:
        J = self.scales(n)
        count = {0: 1, 1: J, 2: J * (J - 1) // 2}
        return sum(count[o] for o in self.orders)

    def feature_len(self, n: int) -> int:
        return n * self.q_max * self.blocks_per_node(n)

    def manifest(self, n: int) -> dict:
        return {
            "n": n,
            "J": self.scales(n),
            "Q": self.q_max,
            "orders": list(self.orders),
            "feature_len": self.feature_len(n),
            "self_loop_isolated": self.self_loop_isolated,
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "ScatteringConfig":
        cfg = cls(manifest["J"], manifest["Q"], tuple(manifest["orders"]),
                  bool(manifest.get("self_loop_isolated", False)))
        if cfg.feature_len(manifest["n"]) != manifest["feature_len"]:
            raise ManifestMismatch("manifest feature_len disagrees with (n, J, Q, orders)")
        return cfg


def default_scales(n: int) -> int:
    """``ceil(log2 n)`` clamped to ``[1, 8]``."""
    return int(min(8, max(1, math.ceil(math.log2(max(n, 2))))))


def moments(x: np.ndarray, q_max: int) -> np.ndarray:
    """Unnormalised absolute moments ``[sum |x|^q for q = 1..q_max]``."""
    ax = np.abs(np.asarray(x, dtype=float))
    return np.array([np.sum(ax ** q) for q in range(1, q_max + 1)])


def _column_moments(x: np.ndarray, q_max: int) -> np.ndarray:
    """Moments over the node (row) axis: ``(..., rows, cols) -> (..., cols, Q)``."""
    ax = np.abs(x)
    out = np.empty(x.shape[:-2] + (x.shape[-1], q_max))
    power = ax
    for q in range(q_max):
        if q:
            power = power * ax
        out[..., q] = power.sum(axis=-2)
    return out


def _column_moments_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backward of :func:`_column_moments` given ``g`` of shape ``(..., cols, Q)``."""
    ax = np.abs(x)
    sx = np.sign(x)
    out = g[..., None, :, 0] * sx
    power = np.ones_like(ax)
    for q in range(1, g.shape[-1]):
        power = power * ax
        out = out + g[..., None, :, q] * (q + 1) * power * sx
    return out


def lazy_walk_batch(adj: np.ndarray, self_loop_isolated: bool = False) -> np.ndarray:
    """``P = (I + A D^-1) / 2`` for a stack of adjacency matrices ``(B, n, n)``."""
    adj = np.array(adj, dtype=float)
    if adj.ndim != 3 or adj.shape[1] != adj.shape[2]:
        raise ShapeMismatch(f"expected (B, n, n) adjacency stack, got {adj.shape}")
    deg = adj.sum(axis=1)
    isolated = np.argwhere(deg == 0)
    if isolated.size:
        if not self_loop_isolated:
            b, i = isolated[0]
            raise IsolatedNode(int(i), int(b))
        adj[isolated[:, 0], isolated[:, 1], isolated[:, 1]] = 1.0
        deg = adj.sum(axis=1)
    n = adj.shape[1]
    return 0.5 * (np.eye(n) + adj / deg[:, None, :])


def wavelet_batch(p: np.ndarray, j_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Dyadic wavelets by repeated squaring.

    Returns ``(psi, low)`` with ``psi`` of shape ``(B, J, n, n)`` and
    ``low = P^(2^J)``.
    """
    if j_max < 1:
        raise ValueError("j_max must be at least 1")
    powers = [p]
    for _ in range(j_max):
        powers.append(powers[-1] @ powers[-1])
    psi = np.stack([powers[j - 1] - powers[j] for j in range(1, j_max + 1)], axis=1)
    return psi, powers[-1]


def scattering_from_wavelets(psi: np.ndarray, q_max: int, orders=(0, 1, 2)) -> np.ndarray:
    """Feature matrix ``(B, feature_len)`` from a wavelet stack ``(B, J, n, n)``."""
    B, J, n, _ = psi.shape
    blocks = []
    if 0 in orders:
        diracs = np.broadcast_to(np.eye(n), (B, n, n))
        blocks.append(_column_moments(diracs, q_max)[:, :, None, :])
    if 1 in orders:
        blocks.append(np.moveaxis(_column_moments(psi, q_max), 1, 2))
    if 2 in orders and J > 1:
        abs_psi = np.abs(psi)
        second = [
            _column_moments(psi[:, j2] @ abs_psi[:, j1], q_max)
            for j1, j2 in combinations(range(J), 2)
        ]
        blocks.append(np.stack(second, axis=2))
    if not blocks:
        return np.zeros((B, 0))
    return np.concatenate(blocks, axis=2).reshape(B, -1)


@dataclass(frozen=True)
class LazyWalk:
    p: np.ndarray


@dataclass(frozen=True)
class WaveletBank:
    j_max: int
    psi: np.ndarray
    low: np.ndarray


def build_lazy_walk(g: Graph, self_loop_isolated: bool = False) -> LazyWalk:
    return LazyWalk(lazy_walk_batch(g.adjacency()[None], self_loop_isolated)[0])


def build_wavelets(walk: LazyWalk, j_max: int) -> WaveletBank:
    psi, low = wavelet_batch(walk.p[None], j_max)
    return WaveletBank(j_max, psi[0], low[0])


def scatter_graph(g: Graph, cfg: ScatteringConfig = ScatteringConfig()) -> np.ndarray:
    J = cfg.scales(g.n)
    bank = build_wavelets(build_lazy_walk(g, cfg.self_loop_isolated), J)
    return scattering_from_wavelets(bank.psi[None], cfg.q_max, cfg.orders)[0]


def scatter_adjacency(adj: np.ndarray, cfg: ScatteringConfig, chunk: int = 1024) -> np.ndarray:
    """Scatter a ``(B, n, n)`` stack of binary adjacency matrices."""
    adj = np.asarray(adj, dtype=float)
    B, n = adj.shape[0], adj.shape[1]
    J = cfg.scales(n)
    out = np.empty((B, cfg.feature_len(n)))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        try:
            p = lazy_walk_batch(adj[start:stop], cfg.self_loop_isolated)
        except IsolatedNode as exc:
            raise IsolatedNode(exc.node, start + exc.graph_index) from None
        psi, _ = wavelet_batch(p, J)
        out[start:stop] = scattering_from_wavelets(psi, cfg.q_max, cfg.orders)
    return out


def scatter_dataset(d: GraphDataset, cfg: ScatteringConfig = ScatteringConfig()) -> np.ndarray:
    if len(d) == 0:
        return np.empty((0, cfg.feature_len(d.n)))
    return scatter_adjacency(d.adjacency_stack(), cfg)


def block_permutation(n: int, cfg: ScatteringConfig, perm) -> np.ndarray:
    """Feature index map taking per-dirac blocks of node ``v`` to node ``perm[v]``.

    For ``s = scatter_graph(g)`` and ``t = scatter_graph(g.relabel(perm))``,
    ``t[block_permutation(...)] == s`` entrywise.
    """
    width = cfg.q_max * cfg.blocks_per_node(n)
    idx = np.empty(n * width, dtype=int)
    for v in range(n):
        idx[v * width:(v + 1) * width] = np.arange(perm[v] * width, (perm[v] + 1) * width)
    return idx


class SoftScattering:
    """Scattering of a soft (weighted) adjacency stack with an exact backward pass.

    Degrees are row sums plus ``eps`` so that the walk stays defined when a
    row is nearly empty.  Call :meth:`forward` then :meth:`backward`.
    """

    def __init__(self, j_max: int, q_max: int = 4, orders=(0, 1, 2), eps: float = 1e-6):
        self.j_max = j_max
        self.q_max = q_max
        self.orders = tuple(orders)
        self.eps = eps
        self._cache = None

    def forward(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        n = a.shape[-1]
        deg = a.sum(axis=2) + self.eps
        p = 0.5 * (np.eye(n) + a / deg[:, None, :])
        powers = [p]
        for _ in range(self.j_max):
            powers.append(powers[-1] @ powers[-1])
        psi = np.stack([powers[j - 1] - powers[j] for j in range(1, self.j_max + 1)], axis=1)
        self._cache = (a, deg, powers, psi)
        return scattering_from_wavelets(psi, self.q_max, self.orders)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise BackwardWithoutForward("SoftScattering.backward called before forward")
        a, deg, powers, psi = self._cache
        B, J, n, _ = psi.shape
        Q = self.q_max
        g = grad.reshape(B, n, -1, Q)
        col = 0
        dpsi = np.zeros_like(psi)
        if 0 in self.orders:
            col += 1
        if 1 in self.orders:
            g1 = g[:, :, col:col + J, :]
            dpsi += _column_moments_grad(psi, np.moveaxis(g1, 2, 1))
            col += J
        if 2 in self.orders and J > 1:
            abs_psi = np.abs(psi)
            for k, (j1, j2) in enumerate(combinations(range(J), 2)):
                u = psi[:, j2] @ abs_psi[:, j1]
                du = _column_moments_grad(u, g[:, :, col + k, :])
                dpsi[:, j2] += du @ np.swapaxes(abs_psi[:, j1], 1, 2)
                dpsi[:, j1] += (np.swapaxes(psi[:, j2], 1, 2) @ du) * np.sign(psi[:, j1])

        dpow = [np.zeros_like(a) for _ in powers]
        for j in range(1, J + 1):
            dpow[j - 1] += dpsi[:, j - 1]
            dpow[j] -= dpsi[:, j - 1]
        for k in range(J, 0, -1):
            base = powers[k - 1]
            base_t = np.swapaxes(base, 1, 2)
            dpow[k - 1] += dpow[k] @ base_t + base_t @ dpow[k]
        dp = dpow[0]

        da = 0.5 * dp / deg[:, None, :]
        ddeg = -0.5 * np.sum(dp * a, axis=1) / deg ** 2
        da = da + ddeg[:, :, None]
        return da


__all__ = [
    "ScatteringConfig",
    "LazyWalk",
    "WaveletBank",
    "SoftScattering",
    "block_permutation",
    "build_lazy_walk",
    "build_wavelets",
    "default_scales",
    "moments",
    "scatter_adjacency",
    "scatter_dataset",
    "scatter_graph",
    "scattering_from_wavelets",
    "lazy_walk_batch",
    "wavelet_batch",
]
