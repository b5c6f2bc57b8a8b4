"""Feed-forward networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector laid out layer by layer as
``W_1 (row-major, fan_out x fan_in), b_1, W_2, b_2, ...``. Hidden layers apply
the activation; the output layer is affine.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ContractError, ShapeError

ACTIVATIONS = ("tanh", "relu", "sin")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.sin(z)


def _act_deriv(name, z):
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "relu":
        # subgradient at 0 is 0
        return (z > 0.0).astype(np.float64)
    return np.cos(z)


def param_count(layer_sizes):
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True, eq=False)
class Mlp:
    layer_sizes: tuple
    activation: str
    params: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ContractError(f"need >= 2 positive layer sizes, got {self.layer_sizes}")
        if self.activation not in _ACT_CODE:
            raise ContractError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        params = np.array(self.params, dtype=np.float64)
        if params.shape != (param_count(sizes),):
            raise ShapeError(f"expected {param_count(sizes)} params, got shape {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ContractError("params must be finite")
        params.flags.writeable = False
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)

    @property
    def n_params(self):
        return self.params.size

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def layers(self):
        """Yield ``(W, b)`` views into the flat parameter vector."""
        off = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.params[off:off + fan_in * fan_out].reshape(fan_out, fan_in)
            off += fan_in * fan_out
            b = self.params[off:off + fan_out]
            off += fan_out
            yield w, b

    def with_params(self, params):
        return Mlp(self.layer_sizes, self.activation, params)

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(doc["layer_sizes"]), doc["activation"], np.asarray(doc["params"], dtype=np.float64))


def save_checkpoint(net, path):
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return Mlp.from_dict(json.load(fh))


def mlp_init(layer_sizes, activation, seed):
    """Weights ~ Unif(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    sizes = tuple(layer_sizes)
    if len(sizes) < 2 or any(int(n) <= 0 for n in sizes):
        raise ContractError(f"need >= 2 positive layer sizes, got {layer_sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return Mlp(sizes, activation, np.concatenate(chunks))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.n_inputs:
        raise ShapeError(f"input of shape {x.shape} does not match {net.n_inputs} inputs")
    return x2, single


def _forward_cache(net, x2):
    """Pre-activations and layer outputs for a batch; ``outs[0]`` is the input."""
    pre, outs = [], [x2]
    h = x2
    layers = list(net.layers())
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == len(layers) - 1 else _act(net.activation, z)
        outs.append(h)
    return pre, outs


def forward(net, x):
    """Evaluate the network on one input ``(n_in,)`` or a batch ``(B, n_in)``."""
    x2, single = _as_batch(net, x)
    h = x2
    layers = list(net.layers())
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = _act(net.activation, h)
    return h[0] if single else h


def vjp(net, x, cotangent):
    """Backpropagate output cotangents ``(B, n_out)`` through a batch.

    Returns ``(param_grad, input_grad)``: the parameter gradient summed over
    the batch, and the per-sample input gradients ``(B, n_in)``.
    """
    x2, _ = _as_batch(net, x)
    cot = np.asarray(cotangent, dtype=np.float64).reshape(x2.shape[0], net.n_outputs)
    pre, outs = _forward_cache(net, x2)
    layers = list(net.layers())
    grads = [None] * (2 * len(layers))
    delta = cot
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[2 * i] = (delta.T @ outs[i]).ravel()
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ w
        if i > 0:
            delta = delta * _act_deriv(net.activation, pre[i - 1])
    return np.concatenate(grads), delta


def input_grad(net, x):
    """Gradient of a scalar-output network w.r.t. its inputs, per sample."""
    if net.n_outputs != 1:
        raise ContractError("input_grad needs a scalar-output network")
    x2, single = _as_batch(net, x)
    _, g = vjp(net, x2, np.ones((x2.shape[0], 1)))
    return g[0] if single else g


@_accel.njit
def _per_sample_grad_kernel(x, params, sizes, act):
    n_batch = x.shape[0]
    n_layers = sizes.shape[0] - 1
    width = 0
    n_par = 0
    for l in range(n_layers + 1):
        if sizes[l] > width:
            width = sizes[l]
    for l in range(n_layers):
        n_par += (sizes[l] + 1) * sizes[l + 1]
    offs = np.empty(n_layers, dtype=np.int64)
    o = 0
    for l in range(n_layers):
        offs[l] = o
        o += (sizes[l] + 1) * sizes[l + 1]
    # hs[l] is the input to layer l; zs[l] the pre-activation of layer l
    hs = np.zeros((n_layers + 1, width))
    zs = np.zeros((n_layers, width))
    delta = np.zeros(width)
    nxt = np.zeros(width)
    out = np.empty((n_batch, n_par))
    for n in range(n_batch):
        for j in range(sizes[0]):
            hs[0, j] = x[n, j]
        for l in range(n_layers):
            fi = sizes[l]
            fo = sizes[l + 1]
            w0 = offs[l]
            b0 = w0 + fi * fo
            for i in range(fo):
                acc = params[b0 + i]
                for j in range(fi):
                    acc += params[w0 + i * fi + j] * hs[l, j]
                zs[l, i] = acc
                if l == n_layers - 1:
                    hs[l + 1, i] = acc
                elif act == 0:
                    hs[l + 1, i] = np.tanh(acc)
                elif act == 1:
                    hs[l + 1, i] = acc if acc > 0.0 else 0.0
                else:
                    hs[l + 1, i] = np.sin(acc)
        delta[0] = 1.0
        for l in range(n_layers - 1, -1, -1):
            fi = sizes[l]
            fo = sizes[l + 1]
            w0 = offs[l]
            b0 = w0 + fi * fo
            for i in range(fo):
                d = delta[i]
                for j in range(fi):
                    out[n, w0 + i * fi + j] = d * hs[l, j]
                out[n, b0 + i] = d
            if l > 0:
                for j in range(fi):
                    acc = 0.0
                    for i in range(fo):
                        acc += params[w0 + i * fi + j] * delta[i]
                    z = zs[l - 1, j]
                    if act == 0:
                        t = np.tanh(z)
                        acc *= 1.0 - t * t
                    elif act == 1:
                        acc = acc if z > 0.0 else 0.0
                    else:
                        acc *= np.cos(z)
                    nxt[j] = acc
                for j in range(fi):
                    delta[j] = nxt[j]
    return out


def _per_sample_grad_numpy(net, x2):
    pre, outs = _forward_cache(net, x2)
    layers = list(net.layers())
    n = x2.shape[0]
    cols = [None] * (2 * len(layers))
    delta = np.ones((n, 1))
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        cols[2 * i] = (delta[:, :, None] * outs[i][:, None, :]).reshape(n, -1)
        cols[2 * i + 1] = delta
        if i > 0:
            delta = (delta @ w) * _act_deriv(net.activation, pre[i - 1])
    return np.concatenate(cols, axis=1)


def grad_per_sample(net, xs):
    """Per-sample parameter gradients of a scalar-output network.

    Returns ``phi`` of shape ``(n_params, B)`` whose column j is the gradient
    of ``net(xs[j])``.
    """
    if net.n_outputs != 1:
        raise ContractError("grad_per_sample needs a scalar-output network")
    x2, _ = _as_batch(net, xs)
    if x2.shape[0] == 0:
        raise ContractError("empty batch")
    if _accel.USE_NUMBA:
        sizes = np.asarray(net.layer_sizes, dtype=np.int64)
        g = _per_sample_grad_kernel(np.ascontiguousarray(x2), net.params, sizes, _ACT_CODE[net.activation])
    else:
        g = _per_sample_grad_numpy(net, x2)
    return g.T


def apply_param_step(net, direction, scale):
    """Copy of ``net`` with params moved by ``scale * direction``."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != net.params.shape:
        raise ShapeError(f"direction of shape {direction.shape} does not match {net.n_params} params")
    return net.with_params(net.params + scale * direction)
