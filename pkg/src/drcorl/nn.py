"""Small feedforward networks with hand-written reverse-mode gradients.

All parameters of an :class:`Mlp` live in one flat float64 vector; the
per-layer weight matrices and bias vectors are views into it. That keeps
optimizers, target-network averaging and checkpointing trivial.

Checkpoint layout (JSON)::

    {"format": "drcorl-mlp", "version": 1,
     "sizes": [in, h1, ..., out], "activation": "tanh",
     "params": [flat parameter list, layer by layer, W (in x out) then b]}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "drcorl-mlp"
CHECKPOINT_VERSION = 1


class Mlp:
    """Fully connected net, tanh hidden layers, identity output.

    ``forward`` accepts a single input vector or a batch of row vectors.
    Gradient methods take the upstream gradient dL/d(output) with the same
    leading shape as the output and return gradients summed over the batch.
    """

    activation = "tanh"

    def __init__(self, sizes, rng=None, params=None):
        sizes = tuple(int(n) for n in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least input and output widths, got {sizes}")
        self.sizes = sizes
        self.n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        if params is not None:
            params = np.array(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params
        else:
            self.params = np.empty(self.n_params)
            rng = np.random.default_rng(rng)
            offset = 0
            for i, o in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / np.sqrt(i)
                self.params[offset:offset + i * o] = rng.uniform(-bound, bound, i * o)
                self.params[offset + i * o:offset + i * o + o] = rng.uniform(-bound, bound, o)
                offset += i * o + o
        self._bind_views()

    def _bind_views(self):
        self.weights, self.biases = [], []
        offset = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(self.params[offset:offset + i * o].reshape(i, o))
            offset += i * o
            self.biases.append(self.params[offset:offset + o])
            offset += o

    @property
    def n_inputs(self):
        return self.sizes[0]

    @property
    def n_outputs(self):
        return self.sizes[-1]

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"input has shape {x.shape}, net expects width {self.n_inputs}")
        return x, single

    def _forward(self, x):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        return acts

    def forward(self, x):
        x, single = self._as_batch(x)
        out = self._forward(x)[-1]
        return out[0] if single else out

    __call__ = forward

    def backward(self, x, upstream):
        """Return (flat parameter gradient, input gradient) for ``sum(upstream * net(x))``."""
        x, single = self._as_batch(x)
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != (x.shape[0], self.n_outputs):
            raise ValueError(f"upstream has shape {g.shape}, expected {(x.shape[0], self.n_outputs)}")
        acts = self._forward(x)
        grad = np.empty(self.n_params)
        offsets = []
        offset = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            offsets.append(offset)
            offset += i * o + o
        for k in range(len(self.weights) - 1, -1, -1):
            i, o = self.sizes[k], self.sizes[k + 1]
            start = offsets[k]
            grad[start:start + i * o] = (acts[k].T @ g).ravel()
            grad[start + i * o:start + i * o + o] = g.sum(axis=0)
            g = g @ self.weights[k].T
            if k > 0:
                g = g * (1.0 - acts[k] ** 2)
        return grad, (g[0] if single else g)

    def grad_params(self, x, upstream):
        return self.backward(x, upstream)[0]

    def grad_input(self, x, upstream):
        return self.backward(x, upstream)[1]

    def copy(self):
        return Mlp(self.sizes, params=self.params.copy())

    def __deepcopy__(self, memo):
        # a plain deepcopy would detach weights/biases from params
        return self.copy()

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[:] = flat

    def soft_update(self, source, tau):
        """Polyak averaging: ``self <- tau * source + (1 - tau) * self``."""
        if not 0.0 < tau <= 1.0:
            raise ValueError(f"soft update rate must lie in (0, 1], got {tau}")
        self.params *= 1.0 - tau
        self.params += tau * source.params

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": list(self.sizes),
            "activation": self.activation,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not an MLP checkpoint: format={data.get('format')!r}")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported MLP checkpoint version {data.get('version')!r}")
        if data.get("activation", "tanh") != cls.activation:
            raise ValueError(f"unsupported activation {data.get('activation')!r}")
        return cls(data["sizes"], params=data["params"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class Adam:
    """Adam on a flat parameter vector. ``step`` descends ``grad`` in place."""

    def __init__(self, n_params, lr=6e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    def __init__(self, n_params, lr=1e-2):
        self.lr = lr

    def step(self, params, grad):
        params -= self.lr * grad


def make_optimizer(name, n_params, lr):
    if name == "adam":
        return Adam(n_params, lr=lr)
    if name == "sgd":
        return Sgd(n_params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
