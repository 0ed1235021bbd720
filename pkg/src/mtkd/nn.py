"""Small numpy neural-net toolkit: layers with explicit backprop.

Models at desk scale are tiny, so layers run one example at a time on
float64 arrays; a layer caches what its backward pass needs, so call
``backward`` at most once per ``forward``. Gradients accumulate into
``grads`` until ``zero_grads`` — training loops average over a batch by
dividing the loss gradient fed into ``backward``.

Every layer's backward pass is checked against central finite
differences in the test suite.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import NonFiniteLoss
from .util import new_rng


# ----------------------------------------------------------------------
# activations / probabilities


def relu(x):
    return np.maximum(x, 0.0)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


ACTIVATIONS = {"relu": (relu, lambda x: (x > 0).astype(float)),
               "gelu": (gelu, _gelu_grad)}


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def check_finite(loss: float) -> float:
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")
    return float(loss)


# ----------------------------------------------------------------------
# losses (return loss and gradient w.r.t. logits)


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; ``logits`` is (B, C), ``labels`` (B,)."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    probs = softmax(logits, axis=1)
    picked = np.clip(probs[np.arange(len(labels)), labels], 1e-12, None)
    loss = float(-np.log(picked).mean())
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    return loss, dlogits / len(labels)


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean element-wise binary cross-entropy on sigmoid scores."""
    z, y = np.asarray(logits, float), np.asarray(targets, float)
    # log(1+e^z) computed stably
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    dz = (sigmoid(z) - y) / z.size
    return loss, dz


# ----------------------------------------------------------------------
# module base


class Module:
    """Layer base: explicit forward/backward, dict-of-array parameters."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._modules: list[tuple[str, "Module"]] = []

    def register(self, name: str, module: "Module") -> "Module":
        self._modules.append((name, module))
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, mod in self._modules:
            out.update(mod.named_parameters(f"{prefix}{name}."))
        return out

    def named_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.grads.items()}
        for name, mod in self._modules:
            out.update(mod.named_grads(f"{prefix}{name}."))
        return out

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)
        for _, mod in self._modules:
            mod.zero_grads()

    def load_parameters(self, flat: dict[str, np.ndarray]):
        """Assign values into existing arrays (shapes must match)."""
        own = self.named_parameters()
        for name, value in flat.items():
            own[name][...] = value

    def _init_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.params = {
            "w": rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out)),
            "b": np.zeros(d_out),
        }
        self._init_grads()

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.grads["w"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"].T


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.params = {"g": np.ones(d), "b": np.zeros(d)}
        self._init_grads()

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._std = np.sqrt(var + self.eps)
        self._xhat = (x - mu) / self._std
        return self.params["g"] * self._xhat + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, std = self._xhat, self._std
        self.grads["g"] += (dy * xhat).sum(axis=0)
        self.grads["b"] += dy.sum(axis=0)
        dxhat = dy * self.params["g"]
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) / std


class Dropout(Module):
    """Inverted dropout with a layer-local seeded generator."""

    def __init__(self, p: float, seed: int):
        super().__init__()
        self.p = p
        self.rng = new_rng(seed)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask


class Activation(Module):
    def __init__(self, kind: str):
        super().__init__()
        self.fn, self.grad_fn = ACTIVATIONS[kind]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return self.fn(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self.grad_fn(self._x)


class MultiHeadSelfAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d % n_heads != 0:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.h, self.dk = n_heads, d // n_heads
        self.wq = self.register("wq", Linear(d, d, rng))
        self.wk = self.register("wk", Linear(d, d, rng))
        self.wv = self.register("wv", Linear(d, d, rng))
        self.wo = self.register("wo", Linear(d, d, rng))

    def _split(self, x):  # (n, d) -> (h, n, dk)
        n = x.shape[0]
        return x.reshape(n, self.h, self.dk).transpose(1, 0, 2)

    def _merge(self, x):  # (h, n, dk) -> (n, d)
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.h * self.dk)

    def forward(self, x: np.ndarray) -> np.ndarray:
        q = self._split(self.wq.forward(x))
        k = self._split(self.wk.forward(x))
        v = self._split(self.wv.forward(x))
        s = q @ k.transpose(0, 2, 1) / np.sqrt(self.dk)
        a = softmax(s, axis=-1)
        self._q, self._k, self._v, self._a = q, k, v, a
        return self.wo.forward(self._merge(a @ v))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        q, k, v, a = self._q, self._k, self._v, self._a
        do = self._split(self.wo.backward(dy))
        da = do @ v.transpose(0, 2, 1)
        dv = a.transpose(0, 2, 1) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        dq = ds @ k / np.sqrt(self.dk)
        dk = ds.transpose(0, 2, 1) @ q / np.sqrt(self.dk)
        dx = self.wq.backward(self._merge(dq))
        dx += self.wk.backward(self._merge(dk))
        dx += self.wv.backward(self._merge(dv))
        return dx


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, activation: str, rng: np.random.Generator):
        super().__init__()
        self.lin1 = self.register("lin1", Linear(d, d_ff, rng))
        self.act = self.register("act", Activation(activation))
        self.lin2 = self.register("lin2", Linear(d_ff, d, rng))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(dy)))


class TransformerEncoderLayer(Module):
    """Post-norm encoder layer: x + dropout(attn), x + dropout(ffn)."""

    def __init__(self, d: int, n_heads: int, dropout: float, activation: str,
                 rng: np.random.Generator, seed: int, d_ff: int | None = None):
        super().__init__()
        self.attn = self.register("attn", MultiHeadSelfAttention(d, n_heads, rng))
        self.drop1 = self.register("drop1", Dropout(dropout, seed))
        self.ln1 = self.register("ln1", LayerNorm(d))
        self.ffn = self.register("ffn", FeedForward(d, d_ff or 4 * d, activation, rng))
        self.drop2 = self.register("drop2", Dropout(dropout, seed + 1))
        self.ln2 = self.register("ln2", LayerNorm(d))

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x1 = self.ln1.forward(x + self.drop1.forward(self.attn.forward(x), train))
        return self.ln2.forward(x1 + self.drop2.forward(self.ffn.forward(x1), train))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        d1 = self.ln2.backward(dy)
        dx1 = d1 + self.ffn.backward(self.drop2.backward(d1))
        d0 = self.ln1.backward(dx1)
        return d0 + self.attn.backward(self.drop1.backward(d0))


class TransformerStack(Module):
    def __init__(self, d: int, n_layers: int, n_heads: int, dropout: float,
                 activation: str, rng: np.random.Generator, seed: int):
        super().__init__()
        self.layers = [
            self.register(f"layer{i}", TransformerEncoderLayer(
                d, n_heads, dropout, activation, rng, seed + 2 * i))
            for i in range(n_layers)
        ]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Mlp(Module):
    """Dense stack: n_hidden ReLU layers of equal width plus a linear output."""

    def __init__(self, d_in: int, hidden: int, n_hidden: int, d_out: int,
                 rng: np.random.Generator, dropout: float = 0.0, seed: int = 0):
        super().__init__()
        self.blocks = []
        d = d_in
        for i in range(n_hidden):
            lin = self.register(f"lin{i}", Linear(d, hidden, rng))
            drop = self.register(f"drop{i}", Dropout(dropout, seed + i))
            self.blocks.append((lin, drop))
            d = hidden
        self.out = self.register("out", Linear(d, d_out, rng))

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._pre = []
        for lin, drop in self.blocks:
            z = lin.forward(x)
            self._pre.append(z)
            x = drop.forward(relu(z), train)
        return self.out.forward(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy = self.out.backward(dy)
        for (lin, drop), z in zip(reversed(self.blocks), reversed(self._pre)):
            dy = drop.backward(dy) * (z > 0)
            dy = lin.backward(dy)
        return dy


# ----------------------------------------------------------------------
# optimization


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, model: Module, lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.named_parameters().items()}
        self.v = {k: np.zeros_like(v) for k, v in model.named_parameters().items()}

    def step(self):
        self.t += 1
        params = self.model.named_parameters()
        grads = self.model.named_grads()
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** self.t)
            vhat = self.v[name] / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class ReduceLROnPlateau:
    """Multiply lr by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 4,
                 min_lr: float = 1e-8):
        self.opt = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.wait = 0

    def step(self, metric: float):
        if metric < self.best - 1e-12:
            self.best = metric
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.opt.lr = max(self.opt.lr * self.factor, self.min_lr)
                self.wait = 0


class EarlyStopping:
    """True once the monitored value has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.wait = 0

    def update(self, metric: float) -> bool:
        if metric < self.best - 1e-12:
            self.best = metric
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience
