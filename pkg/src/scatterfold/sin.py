"""Scattering inversion network: scattering vectors back to adjacency matrices.

Two blocks of Linear -> ReLU -> BatchNorm feed a final Linear layer whose
output is reshaped to node embeddings ``Z`` of shape ``(n, r)``.  The soft
adjacency is the inner-product decoder ``sigmoid(Z Z^T)``, symmetrised with
its diagonal zeroed.

Training runs in two phases: binary cross-entropy against the true
adjacency, then refinement through the scattering transform itself so that
``S(U(S(G)))`` matches ``S(G)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, IoFailure, ManifestMismatch, NonFiniteLoss, ShapeMismatch
from .graphs import Graph
from .gsae import CHECKPOINT_SCHEMA, GsaeModel, minibatches
from .nn import (
    Adam,
    BatchNorm,
    Linear,
    ReLU,
    Sequential,
    bce_loss,
    load_module_state,
    module_state,
    mse_loss,
    sigmoid,
)
from .scattering import ScatteringConfig, SoftScattering, scatter_adjacency

log = logging.getLogger(__name__)

# keeps decoded entries strictly inside (0, 1) under float64 rounding
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SinConfig:
    hidden_dims: tuple[int, int] = (400, 200)
    rank: int = 16
    threshold: float = 0.5
    batch_size: int = 100
    pretrain_lr: float = 1e-3
    pretrain_iterations: int = 5000
    refine_lr: float = 1e-4
    refine_iterations: int = 1000
    tol: float = 1e-4
    window: int = 500
    eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.rank < 1 or self.batch_size < 2 or self.window < 1:
            raise ConfigError("rank >= 1, batch_size >= 2 and window >= 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> "SinConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sin config keys: {sorted(unknown)}")
        return cls(**d)


class SinModel:
    def __init__(self, manifest: dict, cfg: SinConfig = SinConfig(), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.manifest = dict(manifest)
        self.n = int(manifest["n"])
        self.feature_len = int(manifest["feature_len"])
        self.scattering = ScatteringConfig.from_manifest(manifest)
        h1, h2 = cfg.hidden_dims
        self.net = Sequential(
            Linear(self.feature_len, h1, rng), ReLU(), BatchNorm(h1),
            Linear(h1, h2, rng), ReLU(), BatchNorm(h2),
            Linear(h2, self.n * cfg.rank, rng),
        )
        self.threshold = cfg.threshold
        self._cache = None
        iu = np.triu_indices(self.n, k=1)
        self._upper = iu

    def parameters(self):
        return [p for _, p, _ in self.net.named_params()]

    def gradients(self):
        return [g for _, _, g in self.net.named_params()]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None]
        if x.ndim != 2 or x.shape[1] != self.feature_len:
            raise ShapeMismatch(f"expected (*, {self.feature_len}) scattering rows, got {x.shape}")
        return x

    def forward(self, x, training: bool) -> np.ndarray:
        """Soft adjacency stack ``(B, n, n)``; caches for :meth:`backward`."""
        x = self._check(x)
        if training:
            self.net.train()
        else:
            self.net.eval()
        z = self.net.forward(x).reshape(len(x), self.n, self.cfg.rank)
        s = np.clip(sigmoid(z @ np.swapaxes(z, 1, 2)), PROB_FLOOR, 1.0 - PROB_FLOOR)
        a = 0.5 * (s + np.swapaxes(s, 1, 2))
        idx = np.arange(self.n)
        a[:, idx, idx] = 0.0
        self._cache = (z, s)
        return a

    def backward(self, da: np.ndarray) -> None:
        z, s = self._cache
        da = da.copy()
        idx = np.arange(self.n)
        da[:, idx, idx] = 0.0
        ds = 0.5 * (da + np.swapaxes(da, 1, 2))
        inside = (s > PROB_FLOOR) & (s < 1.0 - PROB_FLOOR)
        dlogits = np.where(inside, ds * s * (1.0 - s), 0.0)
        dz = (dlogits + np.swapaxes(dlogits, 1, 2)) @ z
        self.net.backward(dz.reshape(len(z), -1))

    def state_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "kind": "sin",
            "config": asdict(self.cfg),
            "manifest": self.manifest,
            "layers": self.net.spec(),
            "state": module_state(self.net),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "SinModel":
        if d.get("schema") != CHECKPOINT_SCHEMA or d.get("kind") != "sin":
            raise IoFailure("not a SIN checkpoint")
        model = cls(d["manifest"], SinConfig(**d["config"]))
        load_module_state(model.net, d["state"])
        return model


def invert(model: SinModel, x) -> np.ndarray:
    """Eval-mode soft adjacency; a single vector gives a single ``(n, n)`` matrix."""
    single = np.asarray(x).ndim == 1
    a = model.forward(x, training=False)
    return a[0] if single else a


def binarize(a: np.ndarray, tau: float = 0.5) -> Graph:
    """Edge ``(i, j)``, ``i < j``, iff ``a[i, j] >= tau``."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    return Graph.from_adjacency(np.triu(np.asarray(a) >= tau, k=1))


def _upper(a: np.ndarray, iu) -> np.ndarray:
    return a[:, iu[0], iu[1]]


def _converged(losses: list[float], window: int, tol: float) -> bool:
    if len(losses) < 2 * window:
        return False
    prev = float(np.mean(losses[-2 * window:-window]))
    cur = float(np.mean(losses[-window:]))
    if prev <= 0:
        return True
    return (prev - cur) / prev < tol


def pretrain_sin(model: SinModel, adjacency: np.ndarray, x: np.ndarray,
                 cfg: SinConfig | None = None) -> list[float]:
    """BCE between the upper triangles of the soft and true adjacency.

    Stops when the mean loss over the last ``window`` iterations improves on
    the previous window by less than ``tol`` (relative), or at
    ``pretrain_iterations``.  Returns the per-iteration loss trace.
    """
    cfg = cfg or model.cfg
    x = model._check(x)
    adjacency = np.asarray(adjacency, dtype=float)
    if adjacency.shape != (len(x), model.n, model.n):
        raise ShapeMismatch("adjacency stack and scattering rows are not aligned")
    targets = _upper(adjacency, model._upper)
    shuffle_ss, = np.random.SeedSequence([cfg.seed, 1]).spawn(1)
    batches = minibatches(len(x), min(cfg.batch_size, len(x)), np.random.default_rng(shuffle_ss))
    opt = Adam(model.parameters(), lr=cfg.pretrain_lr)
    losses: list[float] = []
    for it in range(cfg.pretrain_iterations):
        idx = next(batches)
        a = model.forward(x[idx], training=True)
        loss, grad_upper = bce_loss(_upper(a, model._upper), targets[idx])
        if not np.isfinite(loss):
            raise NonFiniteLoss(it, "pretrain_sin")
        da = np.zeros_like(a)
        da[:, model._upper[0], model._upper[1]] = grad_upper
        model.backward(da)
        opt.step(model.gradients())
        losses.append(loss)
        if it % 1000 == 0:
            log.info("stage=pretrain_sin iteration=%d bce=%.6g", it, loss)
        if _converged(losses, cfg.window, cfg.tol):
            log.info("stage=pretrain_sin converged_at=%d bce=%.6g", it, loss)
            break
    model.net.eval()
    return losses


def rescatter_loss(model: SinModel, x: np.ndarray, training: bool, backward: bool,
                   eps: float | None = None) -> float:
    """MSE between ``x`` and the scattering of the soft adjacency ``U(x)``."""
    eps = model.cfg.eps if eps is None else eps
    sc = model.scattering.resolved(model.n)
    soft = SoftScattering(sc.j_max, sc.q_max, sc.orders, eps)
    a = model.forward(x, training=training)
    s_hat = soft.forward(a)
    loss, grad = mse_loss(s_hat, x)
    if backward:
        model.backward(soft.backward(grad))
    return loss


def refine_sin(model: SinModel, x: np.ndarray, cfg: SinConfig | None = None) -> list[float]:
    """Adam on the re-scattering MSE; same convergence rule as pretraining."""
    cfg = cfg or model.cfg
    x = model._check(x)
    shuffle_ss, = np.random.SeedSequence([cfg.seed, 2]).spawn(1)
    batches = minibatches(len(x), min(cfg.batch_size, len(x)), np.random.default_rng(shuffle_ss))
    opt = Adam(model.parameters(), lr=cfg.refine_lr)
    losses: list[float] = []
    for it in range(cfg.refine_iterations):
        idx = next(batches)
        loss = rescatter_loss(model, x[idx], training=True, backward=True)
        if not np.isfinite(loss):
            raise NonFiniteLoss(it, "refine_sin")
        opt.step(model.gradients())
        losses.append(loss)
        if it % 500 == 0:
            log.info("stage=refine_sin iteration=%d mse=%.6g", it, loss)
        if _converged(losses, cfg.window, cfg.tol):
            break
    model.net.eval()
    return losses


def soft_rescatter_mse(model: SinModel, x: np.ndarray) -> float:
    """Per-sample squared-L2 re-scattering error of the soft adjacency, eval mode."""
    return rescatter_loss(model, model._check(x), training=False, backward=False)


def hard_rescatter_errors(model: SinModel, x: np.ndarray) -> np.ndarray:
    """Per-graph, per-entry MSE between ``x`` and the scattering of the binarised inversion.

    Binarised graphs may have isolated nodes, so they are always scattered
    with the self-loop policy on.
    """
    x = model._check(x)
    a = invert(model, x)
    hard = (a >= model.threshold).astype(float)
    sc = model.scattering
    if not sc.self_loop_isolated:
        sc = ScatteringConfig(sc.j_max, sc.q_max, sc.orders, True)
    s_hat = scatter_adjacency(hard, sc)
    return np.mean((s_hat - x) ** 2, axis=1)


def hard_rescatter_mse(model: SinModel, x: np.ndarray) -> float:
    return float(np.mean(hard_rescatter_errors(model, x)))


def format_error_e3(errors) -> str:
    """``mean ± std`` in units of 1e-3, sample std, three decimals."""
    e = np.asarray(errors, dtype=float) * 1e3
    sd = float(e.std(ddof=1)) if e.size > 1 else 0.0
    return f"{float(e.mean()):.3f} ± {sd:.3f}"


def edge_accuracy(model: SinModel, x: np.ndarray, adjacency: np.ndarray) -> float:
    a = invert(model, model._check(x))
    pred = _upper(a, model._upper) >= model.threshold
    true = _upper(np.asarray(adjacency), model._upper) > 0
    return float(np.mean(pred == true))


def generate_trajectory(gsae: GsaeModel, sin: SinModel, z_a, z_b, steps: int) -> list[Graph]:
    """Decode-invert-binarise evenly spaced points on the segment ``z_a -> z_b``."""
    if steps < 2:
        raise ValueError("steps must be at least 2")
    if gsae.manifest is not None and gsae.manifest != sin.manifest:
        raise ManifestMismatch("GSAE and SIN were trained on different scattering layouts")
    if gsae.feature_len != sin.feature_len:
        raise ManifestMismatch("GSAE output length differs from SIN input length")
    z_a = np.asarray(z_a, dtype=float).ravel()
    z_b = np.asarray(z_b, dtype=float).ravel()
    t = np.linspace(0.0, 1.0, steps)
    z = (1.0 - t)[:, None] * z_a + t[:, None] * z_b
    z[0], z[-1] = z_a, z_b
    adj = invert(sin, gsae.decode(z))
    return [binarize(a, sin.threshold) for a in adj]


def save_sin(model: SinModel, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(model.state_dict(), fh)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_sin(path) -> SinModel:
    try:
        with open(path, encoding="utf-8") as fh:
            return SinModel.from_state_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
