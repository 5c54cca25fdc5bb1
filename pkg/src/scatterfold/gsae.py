"""Geometric scattering autoencoder: a semi-supervised VAE over scattering vectors.

Networks:

* encoder ``E``: Linear (no bias) -> BatchNorm -> ReLU -> Linear -> ReLU, then linear
  ``mu`` and ``logvar`` heads;
* decoder ``D``: Linear -> ReLU -> Linear back to the scattering length;
* regressor ``H``: same shape as the decoder with a scalar output.

Training minimises ``recon + alpha * pred + beta * KL`` with Adam on
shuffled minibatches.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    IoFailure,
    MissingTargets,
    NonFiniteLoss,
    RegressorUntrained,
    ShapeMismatch,
)
from .nn import (
    Adam,
    BatchNorm,
    Linear,
    ReLU,
    Sequential,
    kl_gaussian,
    load_module_state,
    module_state,
    mse_loss,
)

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "scatterfold.checkpoint/v1"


@dataclass(frozen=True)
class GsaeConfig:
    latent_dim: int = 25
    alpha: float = 0.5
    beta: float = 1.0
    lr: float = 1e-4
    iterations: int = 15000
    batch_size: int = 100
    hidden_dims: tuple[int, int] = (400, 200)
    seed: int = 0
    variational: bool = True
    standardize_meta: bool = False
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be at least 1")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch norm)")
        if len(self.hidden_dims) != 2:
            raise ConfigError("hidden_dims needs exactly two widths")
        if self.iterations < 0 or self.log_every < 1:
            raise ConfigError("iterations must be >= 0 and log_every >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GsaeConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown gsae config keys: {sorted(unknown)}")
        return cls(**d)


class LossParts(NamedTuple):
    total: float
    recon: float
    pred: float
    kl: float


class GsaeModel:
    def __init__(self, feature_len: int, cfg: GsaeConfig = GsaeConfig(), manifest: dict | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        h1, h2 = cfg.hidden_dims
        self.cfg = cfg
        self.feature_len = feature_len
        self.manifest = manifest
        self.encoder = Sequential(Linear(feature_len, h1, rng, bias=False), BatchNorm(h1), ReLU(), Linear(h1, h2, rng), ReLU())
        self.mu_head = Linear(h2, cfg.latent_dim, rng)
        self.logvar_head = Linear(h2, cfg.latent_dim, rng)
        self.decoder = Sequential(Linear(cfg.latent_dim, h2, rng), ReLU(), Linear(h2, feature_len, rng))
        self.regressor = Sequential(Linear(cfg.latent_dim, h2, rng), ReLU(), Linear(h2, 1, rng))
        self.meta_shift = 0.0
        self.meta_scale = 1.0
        self.regressor_trained = False

    @property
    def networks(self):
        return {
            "encoder": self.encoder,
            "mu_head": self.mu_head,
            "logvar_head": self.logvar_head,
            "decoder": self.decoder,
            "regressor": self.regressor,
        }

    def named_params(self):
        for prefix, net in self.networks.items():
            yield from net.named_params(prefix + ".")

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p, _ in self.named_params()]

    def gradients(self) -> list[np.ndarray]:
        return [g for _, _, g in self.named_params()]

    def train(self):
        for net in self.networks.values():
            net.train()
        return self

    def eval(self):
        for net in self.networks.values():
            net.eval()
        return self

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.feature_len:
            raise ShapeMismatch(f"expected (*, {self.feature_len}) scattering rows, got {x.shape}")
        return x

    def _encode(self, x):
        h = self.encoder.forward(x)
        return self.mu_head.forward(h), self.logvar_head.forward(h)

    def encode(self, x):
        """Eval-mode ``(mu, logvar)``."""
        self.eval()
        return self._encode(self._check(x))

    def decode(self, z):
        self.eval()
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[None]
        return self.decoder.forward(z)

    def regress(self, z):
        """Regressor output in the original meta units."""
        return self.regressor.forward(np.asarray(z, dtype=float))[:, 0] * self.meta_scale + self.meta_shift

    def loss(self, x, targets, noise, backward: bool = True) -> LossParts:
        """Train-mode loss on one batch; fills gradients when ``backward``.

        ``targets`` are in the model's internal (possibly standardised) units.
        """
        cfg = self.cfg
        x = self._check(x)
        if cfg.alpha > 0 and targets is None:
            raise MissingTargets("alpha > 0 requires meta targets")
        self.train()
        h = self.encoder.forward(x)
        mu = self.mu_head.forward(h)
        logvar = self.logvar_head.forward(h)
        if noise.shape != mu.shape:
            raise ShapeMismatch(f"noise shape {noise.shape} does not match latent {mu.shape}")
        std = np.exp(0.5 * logvar)
        z = mu + std * noise

        recon, d_recon = mse_loss(self.decoder.forward(z), x)
        kl, dmu_kl, dlv_kl = kl_gaussian(mu, logvar)
        if cfg.alpha > 0:
            t = np.asarray(targets, dtype=float).reshape(-1, 1)
            pred, d_pred = mse_loss(self.regressor.forward(z), t)
        else:
            pred, d_pred = 0.0, None
        total = recon + cfg.alpha * pred + cfg.beta * kl
        if not backward:
            return LossParts(total, recon, pred, kl)

        dz = self.decoder.backward(d_recon)
        if d_pred is not None:
            dz = dz + self.regressor.backward(cfg.alpha * d_pred)
        else:
            self._zero_regressor_grads()
        dmu = dz + cfg.beta * dmu_kl
        dlv = dz * noise * 0.5 * std + cfg.beta * dlv_kl
        dh = self.mu_head.backward(dmu) + self.logvar_head.backward(dlv)
        self.encoder.backward(dh)
        return LossParts(total, recon, pred, kl)

    def _zero_regressor_grads(self):
        for m in self.regressor.modules:
            for name, p in m.params.items():
                m.grads[name] = np.zeros_like(p)

    def state_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "kind": "gsae",
            "config": asdict(self.cfg),
            "feature_len": self.feature_len,
            "manifest": self.manifest,
            "layers": {k: net.spec() for k, net in self.networks.items()},
            "state": {k: module_state(net) for k, net in self.networks.items()},
            "meta_shift": self.meta_shift,
            "meta_scale": self.meta_scale,
            "regressor_trained": self.regressor_trained,
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "GsaeModel":
        if d.get("schema") != CHECKPOINT_SCHEMA or d.get("kind") != "gsae":
            raise IoFailure("not a GSAE checkpoint")
        cfg_d = dict(d["config"])
        cfg = GsaeConfig(**cfg_d)
        model = cls(d["feature_len"], cfg, d.get("manifest"))
        for k, net in model.networks.items():
            load_module_state(net, d["state"][k])
        model.meta_shift = d["meta_shift"]
        model.meta_scale = d["meta_scale"]
        model.regressor_trained = d["regressor_trained"]
        return model


@dataclass
class History:
    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    def append(self, iteration: int, parts: LossParts):
        self.rows.append((iteration, parts.total, parts.recon, parts.pred, parts.kl))

    def column(self, name: str) -> np.ndarray:
        idx = ["iteration", "total", "recon", "pred", "kl"].index(name)
        return np.array([r[idx] for r in self.rows])


def reparameterize(mu, logvar, noise):
    mu, logvar, noise = (np.asarray(a, dtype=float) for a in (mu, logvar, noise))
    if not (mu.shape == logvar.shape == noise.shape):
        raise ShapeMismatch("mu, logvar and noise shapes must be equal")
    return mu + np.exp(0.5 * logvar) * noise


def gsae_loss(model: GsaeModel, batch, targets, noise) -> LossParts:
    return model.loss(batch, targets, noise, backward=True)


def minibatches(rows: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffled every epoch, short tail dropped."""
    if rows < batch_size:
        raise ConfigError(f"need at least batch_size={batch_size} rows, got {rows}")
    while True:
        perm = rng.permutation(rows)
        for start in range(0, rows - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def train_gsae(x: np.ndarray, meta: np.ndarray | None, cfg: GsaeConfig = GsaeConfig(),
               manifest: dict | None = None) -> tuple[GsaeModel, History]:
    """Train on scattering rows ``x`` (already the training split).

    Randomness: ``SeedSequence(cfg.seed)`` spawns three streams used for
    weight init, batch shuffling and reparameterisation noise respectively.
    """
    x = np.asarray(x, dtype=float)
    if cfg.alpha > 0 and meta is None:
        raise MissingTargets("alpha > 0 requires meta values")
    init_ss, shuffle_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    model = GsaeModel(x.shape[1], cfg, manifest, np.random.default_rng(init_ss))
    targets = None
    if meta is not None:
        meta = np.asarray(meta, dtype=float)
        if meta.shape != (x.shape[0],):
            raise ShapeMismatch(f"meta shape {meta.shape} does not match {x.shape[0]} rows")
        if cfg.standardize_meta:
            sd = float(meta.std())
            model.meta_shift = float(meta.mean())
            model.meta_scale = sd if sd > 0 else 1.0
        targets = (meta - model.meta_shift) / model.meta_scale
    model.regressor_trained = cfg.alpha > 0

    opt = Adam(model.parameters(), lr=cfg.lr)
    batches = minibatches(x.shape[0], cfg.batch_size, np.random.default_rng(shuffle_ss))
    noise_rng = np.random.default_rng(noise_ss)
    history = History()
    for it in range(cfg.iterations):
        idx = next(batches)
        if cfg.variational:
            noise = noise_rng.standard_normal((len(idx), cfg.latent_dim))
        else:
            noise = np.zeros((len(idx), cfg.latent_dim))
        parts = model.loss(x[idx], None if targets is None else targets[idx], noise)
        if not np.isfinite(parts.total):
            raise NonFiniteLoss(it, "train_gsae")
        opt.step(model.gradients())
        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            history.append(it, parts)
            if it % (cfg.log_every * 10) == 0:
                log.info("stage=train_gsae iteration=%d total=%.6g recon=%.6g pred=%.6g kl=%.6g",
                         it, *parts)
    model.optimizer = opt
    model.eval()
    return model, history


def embed(model: GsaeModel, x: np.ndarray) -> np.ndarray:
    """Noise-free embedding: the posterior mean."""
    mu, _ = model.encode(x)
    return mu


def reconstruction_mse(model: GsaeModel, x: np.ndarray) -> float:
    x = model._check(x)
    return mse_loss(model.decode(embed(model, x)), x)[0]


def predict_energy(model: GsaeModel, x: np.ndarray, allow_untrained: bool = False) -> np.ndarray:
    """Regressor prediction ``H(mu)`` per row, in meta units.

    A model trained with ``alpha = 0`` never fitted its regressor; that raises
    :class:`RegressorUntrained` unless ``allow_untrained`` (used to report the
    unsupervised baseline error).
    """
    if not model.regressor_trained and not allow_untrained:
        raise RegressorUntrained("model was trained with alpha = 0")
    model.eval()
    return model.regress(embed(model, x))


def save_gsae(model: GsaeModel, path) -> None:
    d = model.state_dict()
    opt = getattr(model, "optimizer", None)
    if opt is not None:
        d["optimizer"] = opt.state()
    try:
        Path(path).write_text(json.dumps(d), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_gsae(path) -> GsaeModel:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    return GsaeModel.from_state_dict(d)
