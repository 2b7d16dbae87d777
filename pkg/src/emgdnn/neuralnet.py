"""Feed-forward classifier with hand-written backpropagation and Adam.

Layer stack for widths ``[27, 120, 90, 30, 5, 3]``::

    Dense(27->120) -> BatchNorm -> LeakyReLU
    Dense(120->90) -> LeakyReLU -> Dropout
    Dense(90->30)  -> BatchNorm -> LeakyReLU
    Dense(30->5)   -> ReLU
    Dense(5->3)    -> softmax

L2 penalty ``lambda * sum(W**2 + b**2)`` on dense layers 1-3 lives inside the
loss, so its gradient ``2 * lambda * param`` is part of backprop.
"""
from dataclasses import dataclass, field
import json
import struct

import numpy as np

from .errors import BadLabel, InvalidState, ModelFormatError, ShapeMismatch
from .signal_core import atomic_write

DEFAULT_WIDTHS = (27, 120, 90, 30, 5, 3)
MAGIC = b"EMGNET"
FORMAT_VERSION = 1


class Dense:
    kind = "dense"

    def __init__(self, n_in, n_out, l2_lambda=0.0):
        self.weights = np.zeros((n_out, n_in))
        self.biases = np.zeros(n_out)
        self.l2_lambda = float(l2_lambda)
        self.grads = {}
        self._x = None

    def params(self):
        return {"weights": self.weights, "biases": self.biases}

    def forward(self, x, train):
        self._x = x
        return x @ self.weights.T + self.biases

    def backward(self, dout):
        x = self._x
        self.grads = {
            "weights": dout.T @ x + 2.0 * self.l2_lambda * self.weights,
            "biases": dout.sum(axis=0) + 2.0 * self.l2_lambda * self.biases,
        }
        return dout @ self.weights

    def penalty(self):
        if self.l2_lambda == 0.0:
            return 0.0
        return self.l2_lambda * (np.sum(self.weights**2) + np.sum(self.biases**2))


class BatchNorm:
    kind = "batchnorm"

    def __init__(self, n, momentum=0.9, epsilon=1e-5):
        self.gamma = np.ones(n)
        self.beta = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = float(momentum)
        self.epsilon = float(epsilon)
        self.update_stats = True
        self.grads = {}
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x, train):
        if not train:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.epsilon)
            return self.gamma * xhat + self.beta
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std)
        if self.update_stats:
            n = x.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * unbiased
        return self.gamma * xhat + self.beta

    def backward(self, dout):
        xhat, inv_std = self._cache
        n = dout.shape[0]
        self.grads = {"gamma": np.sum(dout * xhat, axis=0), "beta": dout.sum(axis=0)}
        dxhat = dout * self.gamma
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
        )


class Dropout:
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``.

    Setting ``fixed_mask`` replays a given mask instead of sampling one.
    """

    kind = "dropout"

    def __init__(self, rate=0.5, seed=0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = np.random.default_rng(seed)
        self.fixed_mask = None
        self.grads = {}
        self._mask = None

    def params(self):
        return {}

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            mask = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._mask = mask
        return x * mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class LeakyReLU:
    kind = "leaky_relu"

    def __init__(self, slope=0.01):
        self.slope = float(slope)
        self.grads = {}

    def params(self):
        return {}

    def forward(self, x, train):
        self._pos = x > 0
        return np.where(self._pos, x, self.slope * x)

    def backward(self, dout):
        return np.where(self._pos, dout, self.slope * dout)


class ReLU:
    kind = "relu"

    def __init__(self):
        self.grads = {}

    def params(self):
        return {}

    def forward(self, x, train):
        self._pos = x > 0
        return np.where(self._pos, x, 0.0)

    def backward(self, dout):
        return np.where(self._pos, dout, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Network:
    def __init__(self, widths=DEFAULT_WIDTHS, dropout_rate=0.5, l2_lambda=1e-6,
                 leaky_slope=0.01, bn_momentum=0.9, bn_epsilon=1e-5, seed=0):
        widths = tuple(int(w) for w in widths)
        if len(widths) != 6 or min(widths) < 1:
            raise ValueError(f"widths must be 6 positive integers, got {widths}")
        self.widths = widths
        self.dropout_rate = float(dropout_rate)
        self.l2_lambda = float(l2_lambda)
        self.leaky_slope = float(leaky_slope)
        self.bn_momentum = float(bn_momentum)
        self.bn_epsilon = float(bn_epsilon)
        w = widths
        l2 = self.l2_lambda
        self.dense = [
            Dense(w[0], w[1], l2),
            Dense(w[1], w[2], l2),
            Dense(w[2], w[3], l2),
            Dense(w[3], w[4], 0.0),
            Dense(w[4], w[5], 0.0),
        ]
        self.batchnorm = [BatchNorm(w[1], bn_momentum, bn_epsilon),
                          BatchNorm(w[3], bn_momentum, bn_epsilon)]
        self.dropout = Dropout(dropout_rate, seed)
        d, bn = self.dense, self.batchnorm
        self.layers = [
            d[0], bn[0], LeakyReLU(leaky_slope),
            d[1], LeakyReLU(leaky_slope), self.dropout,
            d[2], bn[1], LeakyReLU(leaky_slope),
            d[3], ReLU(),
            d[4],
        ]
        # free-form metadata persisted alongside the parameters
        self.config = {}
        self.extras = {}
        self._cached_batch = None

    # -- parameters -------------------------------------------------------

    def parameters(self):
        """Ordered ``(name, array)`` pairs of all trainable parameters."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
        return out

    def gradients(self):
        """Gradients from the last :meth:`backward`, same order as :meth:`parameters`."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in layer.params():
                if name not in layer.grads:
                    raise InvalidState("no gradients; call backward() first")
                out.append((f"{i}.{layer.kind}.{name}", layer.grads[name]))
        return out

    def state_arrays(self):
        """Everything that defines the function computed in eval mode."""
        arrays = dict(self.parameters())
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                arrays[f"{i}.batchnorm.running_mean"] = layer.running_mean
                arrays[f"{i}.batchnorm.running_var"] = layer.running_var
        return arrays

    def load_state_arrays(self, arrays):
        own = self.state_arrays()
        if set(own) != set(arrays):
            raise ShapeMismatch("state arrays do not match this architecture")
        for i, layer in enumerate(self.layers):
            for attr in ("weights", "biases", "gamma", "beta", "running_mean", "running_var"):
                key = f"{i}.{layer.kind}.{attr}"
                if key in arrays:
                    value = np.array(arrays[key], dtype=np.float64)
                    if value.shape != getattr(layer, attr).shape:
                        raise ShapeMismatch(f"{key}: shape {value.shape}")
                    setattr(layer, attr, value)

    def snapshot(self):
        return {k: v.copy() for k, v in self.state_arrays().items()}

    # -- computation ------------------------------------------------------

    def forward(self, batch, mode="eval"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatch(
                f"batch must be n x {self.widths[0]}, got shape {x.shape}"
            )
        train = mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train)
        probs = softmax(x)
        self._cached_batch = (probs, x.shape[0]) if train else None
        return probs

    def penalty(self):
        return sum(d.penalty() for d in self.dense)

    def backward(self, labels):
        """Gradients of :func:`loss` for the batch seen by the last train-mode forward."""
        if self._cached_batch is None:
            raise InvalidState("backward() needs a preceding train-mode forward()")
        probs, n = self._cached_batch
        y = _check_labels(labels, n)
        dout = probs.copy()
        dout[np.arange(n), y] -= 1.0
        dout /= n
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        self._cached_batch = None
        return self.gradients()

    def predict(self, batch):
        """Argmax class (ties go to the lowest index) in eval mode."""
        return np.argmax(self.forward(batch, "eval"), axis=1)


def _check_labels(labels, n):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeMismatch(f"expected {n} labels, got shape {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() > 2):
        raise BadLabel("labels must be integers in {0, 1, 2}")
    return y.astype(np.int64)


def loss(probabilities, labels, net=None):
    """Mean cross-entropy plus the network's L2 penalty (if a network is given)."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = _check_labels(labels, p.shape[0])
    picked = np.maximum(p[np.arange(len(y)), y], np.finfo(float).tiny)
    value = float(-np.mean(np.log(picked)))
    if net is not None:
        value += float(net.penalty())
    return value


def init_network(seed=0, widths=DEFAULT_WIDTHS, **hyper):
    """He-uniform dense weights, zero biases, identity batch-norm."""
    seeds = np.random.SeedSequence(seed).spawn(2)
    net = Network(widths, seed=seeds[1], **hyper)
    rng = np.random.default_rng(seeds[0])
    for d in net.dense:
        fan_in = d.weights.shape[1]
        limit = np.sqrt(6.0 / fan_in)
        d.weights[...] = rng.uniform(-limit, limit, size=d.weights.shape)
    return net


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatch(f"parameter shape {np.shape(p)} != gradient shape {np.shape(g)}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.second_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
    elif len(state.first_moment) != len(params):
        raise ShapeMismatch("optimizer state was built for a different parameter list")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------------------
# model files
#
#   b"EMGNET" | uint16 version | uint32 header length | JSON header | float64 data
#
# The header lists every array (name, shape) in storage order; data is the
# concatenation of the arrays as little-endian float64.


def _to_bytes(net):
    arrays = dict(net.state_arrays())
    for key, value in net.extras.items():
        arrays[f"extra.{key}"] = np.asarray(value, dtype=np.float64)
    header = {
        "format_version": FORMAT_VERSION,
        "widths": list(net.widths),
        "hyper": {
            "dropout_rate": net.dropout_rate,
            "l2_lambda": net.l2_lambda,
            "leaky_slope": net.leaky_slope,
            "bn_momentum": net.bn_momentum,
            "bn_epsilon": net.bn_epsilon,
        },
        "config": net.config,
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(head)) + head + body


def save_model(net, path):
    atomic_write(path, _to_bytes(net))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    return model_from_bytes(raw)


def model_from_bytes(raw):
    prefix = len(MAGIC) + 6
    if len(raw) < prefix or raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, head_len = struct.unpack("<HI", raw[len(MAGIC):prefix])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if len(raw) < prefix + head_len:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(raw[prefix : prefix + head_len].decode("utf-8"))
        widths = header["widths"]
        hyper = header["hyper"]
        specs = header["arrays"]
    except (ValueError, KeyError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from None

    offset = prefix + head_len
    arrays = {}
    for spec in specs:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise ModelFormatError(f"truncated data for {spec['name']}")
        arrays[spec["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(raw):
        raise ModelFormatError(f"{len(raw) - offset} trailing bytes")

    try:
        net = Network(widths, **hyper)
        extras = {k[len("extra."):]: arrays.pop(k) for k in list(arrays) if k.startswith("extra.")}
        net.load_state_arrays(arrays)
    except (ValueError, TypeError) as exc:
        raise ModelFormatError(f"model does not match its header: {exc}") from None
    net.extras = extras
    net.config = header.get("config", {})
    return net
