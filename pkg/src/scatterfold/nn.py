"""Small dense network stack with hand-written backward passes.

Only fixed-topology MLPs are needed, so there is no autodiff graph: each
module caches what its backward pass needs during ``forward`` and
``backward`` consumes the upstream gradient, stores parameter gradients in
``grads`` and returns the gradient with respect to its input.

Arrays are row-major batches of shape ``(batch, features)``.
"""

from __future__ import annotations

import numpy as np

from .errors import BackwardWithoutForward, ShapeMismatch

BCE_CLAMP = 1e-7


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.training = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def named_params(self, prefix: str = ""):
        for name, p in self.params.items():
            yield prefix + name, p, self.grads.get(name)

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffers(self, values: dict[str, np.ndarray]) -> None:
        pass

    def spec(self) -> dict:
        return {"type": type(self).__name__}


class Linear(Module):
    """``y = x w^T + b`` with ``w`` of shape ``(out, in)``.

    ``bias=False`` drops ``b``; used in front of a batch norm, whose shift
    makes a bias redundant (its gradient is identically zero there).
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.in_dim, self.out_dim, self.bias = in_dim, out_dim, bias
        self.params["w"] = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        if bias:
            self.params["b"] = rng.uniform(-bound, bound, size=out_dim)
        self._x = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"Linear expects (*, {self.in_dim}), got {x.shape}")
        self._x = x
        y = x @ self.params["w"].T
        return y + self.params["b"] if self.bias else y

    def backward(self, grad):
        if self._x is None:
            raise BackwardWithoutForward("Linear.backward before forward")
        self.grads["w"] = grad.T @ self._x
        if self.bias:
            self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["w"]

    def spec(self):
        return {"type": "Linear", "in": self.in_dim, "out": self.out_dim, "bias": self.bias}


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        if self._mask is None:
            raise BackwardWithoutForward("ReLU.backward before forward")
        return np.where(self._mask, grad, 0.0)


class Sigmoid(Module):
    def __init__(self):
        super().__init__()
        self._out = None

    def forward(self, x):
        self._out = sigmoid(x)
        return self._out

    def backward(self, grad):
        if self._out is None:
            raise BackwardWithoutForward("Sigmoid.backward before forward")
        return grad * self._out * (1.0 - self._out)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class BatchNorm(Module):
    """Per-feature batch normalisation.

    Train mode normalises with biased batch statistics and updates running
    averages (unbiased variance) with ``momentum``; eval mode uses the running
    averages.
    """

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.dim, self.eps, self.momentum = dim, eps, momentum
        self.params["gamma"] = np.ones(dim)
        self.params["beta"] = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeMismatch(f"BatchNorm expects (*, {self.dim}), got {x.shape}")
        if self.training:
            n = x.shape[0]
            if n < 2:
                raise ShapeMismatch("batch norm in train mode needs a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, self.training)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, grad):
        if self._cache is None:
            raise BackwardWithoutForward("BatchNorm.backward before forward")
        xhat, inv_std, training = self._cache
        self.grads["gamma"] = np.sum(grad * xhat, axis=0)
        self.grads["beta"] = grad.sum(axis=0)
        dxhat = grad * self.params["gamma"]
        if not training:
            return dxhat * inv_std
        n = grad.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def set_buffers(self, values):
        self.running_mean = np.array(values["running_mean"], dtype=float)
        self.running_var = np.array(values["running_var"], dtype=float)

    def spec(self):
        return {"type": "BatchNorm", "dim": self.dim, "eps": self.eps, "momentum": self.momentum}


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        self.modules = list(modules)

    def forward(self, x):
        for m in self.modules:
            x = m.forward(x)
        return x

    def backward(self, grad):
        for m in reversed(self.modules):
            grad = m.backward(grad)
        return grad

    def train(self):
        for m in self.modules:
            m.train()
        self.training = True
        return self

    def eval(self):
        for m in self.modules:
            m.eval()
        self.training = False
        return self

    def named_params(self, prefix: str = ""):
        for k, m in enumerate(self.modules):
            yield from m.named_params(f"{prefix}{k}.")

    def buffers(self):
        out = {}
        for k, m in enumerate(self.modules):
            for name, value in m.buffers().items():
                out[f"{k}.{name}"] = value
        return out

    def set_buffers(self, values):
        for k, m in enumerate(self.modules):
            own = {name.split(".", 1)[1]: v for name, v in values.items() if name.split(".", 1)[0] == str(k)}
            if own:
                m.set_buffers(own)

    def spec(self):
        return {"type": "Sequential", "modules": [m.spec() for m in self.modules]}


def mlp(dims, rng, batchnorm_after=(), final_activation=None) -> Sequential:
    """Stack ``Linear`` layers over ``dims`` with ReLU between them.

    ``batchnorm_after`` lists hidden-layer indices followed by a BatchNorm
    (placed after the ReLU).
    """
    layers: list[Module] = []
    for k in range(len(dims) - 1):
        layers.append(Linear(dims[k], dims[k + 1], rng))
        if k < len(dims) - 2:
            layers.append(ReLU())
            if k in batchnorm_after:
                layers.append(BatchNorm(dims[k + 1]))
    if final_activation is not None:
        layers.append(final_activation)
    return Sequential(*layers)


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Batch mean of the squared L2 distance, and its gradient."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    diff = pred - target
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def bce_loss(prob: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy with probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    if prob.shape != target.shape:
        raise ShapeMismatch(f"bce_loss shapes differ: {prob.shape} vs {target.shape}")
    p = np.clip(prob, BCE_CLAMP, 1.0 - BCE_CLAMP)
    size = p.size
    loss = -np.sum(target * np.log(p) + (1.0 - target) * np.log1p(-p)) / size
    inside = (prob > BCE_CLAMP) & (prob < 1.0 - BCE_CLAMP)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / size
    return float(loss), grad


def kl_gaussian(mu: np.ndarray, logvar: np.ndarray):
    """KL of ``N(mu, exp(logvar))`` from the standard normal, averaged over the batch.

    Returns ``(loss, dmu, dlogvar)``.
    """
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"kl_gaussian shapes differ: {mu.shape} vs {logvar.shape}")
    n = mu.shape[0]
    ev = np.exp(logvar)
    loss = -0.5 * np.sum(1.0 + logvar - mu * mu - ev) / n
    return float(loss), mu / n, -0.5 * (1.0 - ev) / n


class Adam:
    """Bias-corrected Adam updating the given parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch(f"gradient shape {g.shape} for parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "t": self.t, "m": [encode_array(a) for a in self.m], "v": [encode_array(a) for a in self.v],
        }

    def load_state(self, state: dict) -> None:
        self.lr, self.beta1, self.beta2, self.eps = state["lr"], state["beta1"], state["beta2"], state["eps"]
        self.t = state["t"]
        for dst, src in zip(self.m, state["m"]):
            dst[...] = decode_array(src)
        for dst, src in zip(self.v, state["v"]):
            dst[...] = decode_array(src)


def adam_step(state: Adam, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    if len(params) != len(state.params) or any(a is not b for a, b in zip(params, state.params)):
        raise ShapeMismatch("parameters do not match the optimiser state")
    state.step(grads)
    return params


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def decode_array(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def module_state(module: Module) -> dict:
    return {
        "params": {name: encode_array(p) for name, p, _ in module.named_params()},
        "buffers": {name: encode_array(b) for name, b in module.buffers().items()},
    }


def load_module_state(module: Module, state: dict) -> None:
    for name, p, _ in module.named_params():
        src = decode_array(state["params"][name])
        if src.shape != p.shape:
            raise ShapeMismatch(f"checkpoint parameter {name} has shape {src.shape}, expected {p.shape}")
        p[...] = src
    module.set_buffers({name: decode_array(v) for name, v in state["buffers"].items()})
