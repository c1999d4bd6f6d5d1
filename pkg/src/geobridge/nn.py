"""Dense-network numerics in float64 numpy.

Layers cache what their backward pass needs during ``forward`` and accumulate
parameter gradients into ``grads`` on ``backward``.  Every layer exposes
``params`` and ``grads`` dicts keyed by block name so the optimizer and the
checkpoint writer can walk them uniformly.
"""

from __future__ import annotations

import numpy as np

TRAIN = "train"
INFER = "infer"


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class NonFiniteGradientError(FloatingPointError):
    pass


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


# --------------------------------------------------------------------------
# initialisation


def init_params(shape, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Uniform weight init for an ``(out, in)`` matrix.

    ``fan_in_relu`` draws from +-sqrt(6/fan_in), ``xavier`` from
    +-sqrt(6/(fan_in+fan_out)).
    """
    fan_out, fan_in = shape
    if fan_out <= 0 or fan_in <= 0:
        raise ShapeError(f"init_params needs positive dimensions, got {shape}")
    if scheme == "fan_in_relu":
        limit = np.sqrt(6.0 / fan_in)
    elif scheme == "xavier":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# --------------------------------------------------------------------------
# functional forms


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"input {x.shape} incompatible with weights {W.shape}")
    return x @ W.T + b


def dense_backward(grad_out: np.ndarray, cached_x: np.ndarray, W: np.ndarray):
    """Return ``(grad_x, grad_W, grad_b)`` for ``y = x W^T + b``."""
    if grad_out.shape != (cached_x.shape[0], W.shape[0]):
        raise ShapeError(
            f"grad_out {grad_out.shape} does not match forward output "
            f"{(cached_x.shape[0], W.shape[0])}"
        )
    return grad_out @ W, grad_out.T @ cached_x, grad_out.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_rows":
        return softmax_rows(x)
    raise ValueError(f"unknown activation {kind!r}")


# --------------------------------------------------------------------------
# layers


class Layer:
    """Base class: a layer owns named parameter blocks and their gradients."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        # incremented on every forward; lets callers prove a layer was skipped
        self.calls = 0

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def state(self) -> dict[str, np.ndarray]:
        """Everything that must be checkpointed (parameters and buffers)."""
        return dict(self.params)

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            if state[k].shape != self.params[k].shape:
                raise ShapeError(f"block {k}: expected {self.params[k].shape}, got {state[k].shape}")
            self.params[k] = np.array(state[k], dtype=np.float64)
        self.zero_grad()


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 init: str = "fan_in_relu"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if rng is None:
            W = np.zeros((n_out, n_in))
        else:
            W = init_params((n_out, n_in), init, rng)
        self.params = {"W": W, "b": np.zeros(n_out)}
        self.zero_grad()
        self._x = None

    def forward(self, x: np.ndarray, mode: str = INFER) -> np.ndarray:
        self.calls += 1
        y = dense_forward(x, self.params["W"], self.params["b"])
        if mode == TRAIN:
            self._x = x
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        gx, gW, gb = dense_backward(grad_out, self._x, self.params["W"])
        self.grads["W"] += gW
        self.grads["b"] += gb
        return gx


class BatchNorm(Layer):
    """Per-feature batch normalisation with running statistics.

    ``frozen=True`` in train mode normalises with the running statistics
    (and leaves them untouched) while still caching for backward.
    """

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.width = width
        self.eps = eps
        self.momentum = momentum
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.zero_grad()
        self._cache = None

    def state(self):
        s = dict(self.params)
        s["running_mean"] = self.running_mean
        s["running_var"] = self.running_var
        return s

    def load_state(self, state):
        super().load_state(state)
        self.running_mean = np.array(state["running_mean"], dtype=np.float64)
        self.running_var = np.array(state["running_var"], dtype=np.float64)

    def forward(self, x: np.ndarray, mode: str = INFER, frozen: bool = False) -> np.ndarray:
        _check_mode(mode)
        self.calls += 1
        if x.ndim != 2 or x.shape[1] != self.width:
            raise ShapeError(f"batch norm width {self.width}, input {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if mode == INFER or frozen:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            if mode == TRAIN:
                self._cache = ("frozen", xhat, inv_std)
            return gamma * xhat + beta
        n = x.shape[0]
        if n < 2:
            raise ShapeError("train-mode batch norm needs a batch of at least 2")
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc * xc).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mu
        # unbiased estimate for the running variance, as is conventional
        self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
        self._cache = ("batch", xhat, inv_std)
        return gamma * xhat + beta

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        kind, xhat, inv_std = self._cache
        self.grads["gamma"] += (grad_out * xhat).sum(axis=0)
        self.grads["beta"] += grad_out.sum(axis=0)
        gxhat = grad_out * self.params["gamma"]
        if kind == "frozen":
            return gxhat * inv_std
        n = grad_out.shape[0]
        return (inv_std / n) * (
            n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
        )


class ReLU(Layer):
    def forward(self, x, mode=INFER):
        self.calls += 1
        if mode == TRAIN:
            self._mask = x > 0
        return relu(x)

    def backward(self, grad_out):
        return grad_out * self._mask


class Sigmoid(Layer):
    def forward(self, x, mode=INFER):
        self.calls += 1
        y = sigmoid(x)
        if mode == TRAIN:
            self._y = y
        return y

    def backward(self, grad_out):
        return grad_out * self._y * (1.0 - self._y)


def dropout_forward(x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None):
    """Inverted dropout. Returns ``(y, mask)``; ``mask`` is None when inactive."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == INFER or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


class Dropout(Layer):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, mode=INFER, rng=None):
        self.calls += 1
        y, self._mask = dropout_forward(x, self.rate, mode, rng)
        return y

    def backward(self, grad_out):
        return grad_out if self._mask is None else grad_out * self._mask


class Block(Layer):
    """Dense -> BatchNorm -> ReLU -> Dropout, the repeated hidden unit."""

    def __init__(self, n_in, n_out, rng, dropout=0.5, bn_eps=1e-5, bn_momentum=0.1):
        super().__init__()
        self.dense = Dense(n_in, n_out, rng, init="fan_in_relu")
        self.bn = BatchNorm(n_out, bn_eps, bn_momentum)
        self.act = ReLU()
        self.drop = Dropout(dropout)

    def layers(self):
        return {"dense": self.dense, "bn": self.bn}

    def forward(self, x, mode=INFER, rng=None, frozen_bn=False):
        self.calls += 1
        h = self.dense.forward(x, mode)
        h = self.bn.forward(h, mode, frozen=frozen_bn)
        h = self.act.forward(h, mode)
        return self.drop.forward(h, mode, rng)

    def backward(self, grad_out):
        g = self.drop.backward(grad_out)
        g = self.act.backward(g)
        g = self.bn.backward(g)
        return self.dense.backward(g)


# --------------------------------------------------------------------------
# optimiser


class AdamW:
    """Adam with decoupled weight decay over a dict of named parameter blocks.

    The update is ``theta -= lr * (m_hat / (sqrt(v_hat) + eps)) + lr * wd * theta``,
    both terms evaluated at the pre-update ``theta``.  Arrays are updated in place.
    """

    def __init__(self, params: dict[str, np.ndarray], lr=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if g.shape != self.params[k].shape:
                raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {self.params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter block {k!r}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, g in grads.items():
            p = self.params[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / c1
            v_hat = v / c2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)) + self.lr * self.weight_decay * p


def adamw_step(params, grads, state: AdamW):
    """Functional wrapper: update ``params`` in place through ``state``."""
    state.step(grads)
    return params, state


# --------------------------------------------------------------------------
# gradient checking


def finite_difference(f, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of scalar ``f()`` wrt every entry of ``params`` (mutated and restored)."""
    out = {}
    for k, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = f()
            flat[j] = orig - h
            fm = f()
            flat[j] = orig
            gflat[j] = (fp - fm) / (2 * h)
        out[k] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-4) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries of all blocks."""
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
