"""Piecewise-linear networks: layers, forward evaluation and masked passes.

Every activation is handled as a flat float64 vector. Convolutional layers
remember the spatial shape of their input so that they can be unfolded into
patch matrices when needed.

Masks select entries of a layer's equivalent linear operator. For a
fully-connected layer a mask has the weight's shape ``(n_out, n_in)``; for a
convolution it has shape ``(c_out, c_in * k1 * k2, o2 * o3)``, one kernel copy
per output position, which avoids materialising the sparse linear matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when array shapes do not compose."""


def as_tensor(data, name="array") -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Linear:
    """Fully-connected layer ``x -> W x + b``."""

    weight: np.ndarray
    bias: np.ndarray
    kind = "linear"

    def __post_init__(self):
        w = as_tensor(self.weight, "weight")
        b = as_tensor(self.bias, "bias").reshape(-1)
        if w.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_size(self) -> int:
        return self.weight.shape[1]

    @property
    def out_size(self) -> int:
        return self.weight.shape[0]

    @property
    def mask_shape(self) -> tuple:
        return self.weight.shape

    @property
    def bias_flat(self) -> np.ndarray:
        return self.bias

    def linear(self, x):
        return self.weight @ x

    def forward(self, x):
        return self.weight @ x + self.bias

    def backward(self, y):
        return self.weight.T @ y

    # -- expanded (mask-shaped) views ------------------------------------
    def expanded_weight(self):
        return self.weight

    def gather(self, v):
        """Input values laid out in mask shape."""
        return np.broadcast_to(v, self.weight.shape)

    def spread(self, y):
        """Output values laid out so that they broadcast against mask shape."""
        return y[:, None]

    def reduce(self, a):
        """Sum a mask-shaped array over its input axis, giving an output vector."""
        return a.sum(axis=1)

    def scatter(self, a):
        """Adjoint of :meth:`gather`."""
        return a.sum(axis=0)

    def dense(self):
        return self.weight

    def absolute(self) -> "Linear":
        return Linear(np.abs(self.weight), np.zeros_like(self.bias))

    def to_dict(self):
        return {"kind": "linear", "weight": self.weight.tolist(), "bias": self.bias.tolist()}


def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def unfold(x, conv: "Conv2d") -> np.ndarray:
    """Split an image into the patches a convolution slides over.

    Returns a ``(c_in * k1 * k2, o2 * o3)`` matrix whose columns are the
    (zero-padded) input blocks, ordered channel-major then kernel row/column.
    """
    c, h, w = conv.in_shape
    x = np.asarray(x, dtype=np.float64)
    if x.size != c * h * w:
        raise ShapeError(f"input of size {x.size} does not match conv input shape {conv.in_shape}")
    x = x.reshape(c, h, w)
    p, s = conv.padding, conv.stride
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    k1, k2 = conv.kernel_size
    win = sliding_window_view(x, (k1, k2), axis=(1, 2))[:, ::s, ::s]
    o2, o3 = conv.out_shape[1:]
    win = win[:, :o2, :o3]
    # (c, o2, o3, k1, k2) -> (c, k1, k2, o2, o3)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k1 * k2, o2 * o3)


def fold(matrix, conv: "Conv2d") -> np.ndarray:
    """Sum the columns of a patch matrix back into image space (adjoint of :func:`unfold`)."""
    c, h, w = conv.in_shape
    k1, k2 = conv.kernel_size
    o2, o3 = conv.out_shape[1:]
    p, s = conv.padding, conv.stride
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (c * k1 * k2, o2 * o3):
        raise ShapeError(f"patch matrix shape {m.shape} does not match {(c * k1 * k2, o2 * o3)}")
    m = m.reshape(c, k1, k2, o2, o3)
    out = np.zeros((c, h + 2 * p, w + 2 * p))
    for i in range(k1):
        for j in range(k2):
            out[:, i:i + s * (o2 - 1) + 1:s, j:j + s * (o3 - 1) + 1:s] += m[:, i, j]
    return out[:, p:p + h, p:p + w]


@dataclass(frozen=True, eq=False)
class Conv2d:
    """2-D convolution on a ``(c_in, h, w)`` input, no dilation or groups."""

    weight: np.ndarray
    bias: np.ndarray
    in_shape: tuple
    stride: int = 1
    padding: int = 0
    kind = "conv2d"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        w = as_tensor(self.weight, "weight")
        b = as_tensor(self.bias, "bias").reshape(-1)
        if w.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
        in_shape = tuple(int(d) for d in self.in_shape)
        if len(in_shape) != 3 or in_shape[0] != w.shape[1]:
            raise ShapeError(f"input shape {in_shape} does not match {w.shape[1]} input channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "in_shape", in_shape)
        o2 = _conv_out(in_shape[1], w.shape[2], self.stride, self.padding)
        o3 = _conv_out(in_shape[2], w.shape[3], self.stride, self.padding)
        if o2 < 1 or o3 < 1:
            raise ShapeError(f"kernel {w.shape[2:]} does not fit input {in_shape} with padding {self.padding}")

    @property
    def kernel_size(self):
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def out_shape(self):
        _, h, w = self.in_shape
        k1, k2 = self.kernel_size
        return (self.weight.shape[0], _conv_out(h, k1, self.stride, self.padding),
                _conv_out(w, k2, self.stride, self.padding))

    @property
    def n_positions(self):
        return self.out_shape[1] * self.out_shape[2]

    @property
    def in_size(self):
        return int(np.prod(self.in_shape))

    @property
    def out_size(self):
        return int(np.prod(self.out_shape))

    @property
    def mask_shape(self):
        c_out, c_in, k1, k2 = self.weight.shape
        return (c_out, c_in * k1 * k2, self.n_positions)

    @property
    def weight_matrix(self):
        """Filter reshaped to ``(c_out, c_in * k1 * k2)``."""
        return self.weight.reshape(self.weight.shape[0], -1)

    @property
    def bias_flat(self):
        if "bias_flat" not in self._cache:
            bf = np.repeat(self.bias, self.n_positions)
            bf.setflags(write=False)
            self._cache["bias_flat"] = bf
        return self._cache["bias_flat"]

    def linear(self, x):
        return (self.weight_matrix @ unfold(x, self)).reshape(-1)

    def forward(self, x):
        return self.linear(x) + self.bias_flat

    def backward(self, y):
        y = np.asarray(y).reshape(self.weight.shape[0], self.n_positions)
        return fold(self.weight_matrix.T @ y, self).reshape(-1)

    def expanded_weight(self):
        return np.broadcast_to(self.weight_matrix[:, :, None], self.mask_shape)

    def gather(self, v):
        return np.broadcast_to(unfold(v, self)[None], self.mask_shape)

    def spread(self, y):
        return np.asarray(y).reshape(self.weight.shape[0], 1, self.n_positions)

    def reduce(self, a):
        return a.sum(axis=1).reshape(-1)

    def scatter(self, a):
        return fold(a.sum(axis=0), self).reshape(-1)

    def dense(self):
        """Equivalent ``(out_size, in_size)`` matrix; meant for tests and small layers."""
        if "dense" not in self._cache:
            eye = np.eye(self.in_size)
            mat = np.stack([self.linear(col) for col in eye], axis=1)
            mat.setflags(write=False)
            self._cache["dense"] = mat
        return self._cache["dense"]

    def absolute(self) -> "Conv2d":
        return Conv2d(np.abs(self.weight), np.zeros_like(self.bias), self.in_shape,
                      self.stride, self.padding)

    def to_dict(self):
        return {"kind": "conv2d", "weight": self.weight.tolist(), "bias": self.bias.tolist(),
                "stride": self.stride, "padding": self.padding}


Layer = Union[Linear, Conv2d]


def masked_forward(layer: Layer, mask: np.ndarray, a) -> np.ndarray:
    """``(W ⊙ I) a`` for the layer's equivalent linear operator; no bias."""
    _check_mask(layer, mask)
    return layer.reduce(layer.expanded_weight() * mask * layer.gather(np.asarray(a, dtype=np.float64)))


def masked_backward(layer: Layer, mask: np.ndarray, a) -> np.ndarray:
    """``(W ⊙ I)^T a``."""
    _check_mask(layer, mask)
    return layer.scatter(layer.expanded_weight() * mask * layer.spread(np.asarray(a, dtype=np.float64)))


def _check_mask(layer, mask):
    if np.shape(mask) != tuple(layer.mask_shape):
        raise ShapeError(f"mask shape {np.shape(mask)} does not match layer mask shape {layer.mask_shape}")


def dense_mask(layer: Layer, mask: np.ndarray) -> np.ndarray:
    """Scatter a mask onto the equivalent dense ``(out, in)`` matrix layout.

    Padding positions are dropped. Used by tests to build the masked linear
    operator explicitly.
    """
    if isinstance(layer, Linear):
        return np.asarray(mask, dtype=np.float64)
    c_out = layer.weight.shape[0]
    out = np.zeros((layer.out_size, layer.in_size))
    index = np.arange(layer.in_size, dtype=np.float64) + 1.0
    # unfold the index image: entry (e, p) holds 1 + flat input index, or 0 for padding
    where = unfold(index, layer).astype(np.int64) - 1
    m = np.asarray(mask, dtype=np.float64)
    for c in range(c_out):
        for e in range(where.shape[0]):
            for p in range(where.shape[1]):
                j = where[e, p]
                if j >= 0:
                    out[c * layer.n_positions + p, j] = m[c, e, p]
    return out


@dataclass(frozen=True, eq=False)
class Network:
    """Affine layers with an implicit ReLU after every layer except the last."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_size != nxt.in_size:
                raise ShapeError(f"layer output size {prev.out_size} does not match next input size {nxt.in_size}")
        object.__setattr__(self, "layers", layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_size(self) -> int:
        return self.layers[0].in_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].out_size

    @property
    def sizes(self) -> list:
        return [self.input_size] + [layer.out_size for layer in self.layers]

    def trace(self, x0):
        """Pre- and post-activations of every layer, ``[(x̂_1, x_1), ..., (x̂_n, x̂_n)]``."""
        x = np.asarray(x0, dtype=np.float64).reshape(-1)
        if x.size != self.input_size:
            raise ShapeError(f"input has {x.size} entries, network expects {self.input_size}")
        out = []
        for i, layer in enumerate(self.layers):
            pre = layer.forward(x)
            x = pre if i == len(self.layers) - 1 else np.maximum(pre, 0.0)
            out.append((pre, x))
        return out

    def with_objective(self, coeffs, offset=0.0) -> "Network":
        """Replace the output by the scalar ``coeffs @ output + offset``."""
        last = self.layers[-1]
        c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if c.size != last.out_size:
            raise ShapeError(f"objective has {c.size} entries, network has {last.out_size} outputs")
        w = (c @ last.dense())[None, :]
        b = np.array([c @ last.bias_flat + offset])
        return Network(self.layers[:-1] + (Linear(w, b),))

    def select_output(self, index: int) -> "Network":
        c = np.zeros(self.output_size)
        c[index] = 1.0
        return self.with_objective(c)

    def negated(self) -> "Network":
        return self.with_objective(-np.ones(self.output_size)) if self.output_size == 1 else \
            Network(self.layers[:-1] + (Linear(-self.layers[-1].dense(), -self.layers[-1].bias_flat),))

    def truncated(self, layer_index: int, neuron: int, sign: float = 1.0) -> "Network":
        """Sub-network whose scalar output is ``sign * x̂_k[neuron]`` (``k = layer_index``, 1-based)."""
        layer = self.layers[layer_index - 1]
        unit = np.zeros(layer.out_size)
        unit[neuron] = 1.0
        row = sign * layer.backward(unit)
        b = sign * layer.bias_flat[neuron]
        return Network(self.layers[:layer_index - 1] + (Linear(row[None, :], [b]),))

    def to_dict(self, input_shape=None):
        d = {"format_version": FORMAT_VERSION, "layers": [layer.to_dict() for layer in self.layers]}
        first_conv = next((l for l in self.layers if isinstance(l, Conv2d)), None)
        if first_conv is not None and isinstance(self.layers[0], Conv2d):
            d["input_shape"] = list(self.layers[0].in_shape)
        return d


def forward_eval(net: Network, x0) -> np.ndarray:
    """Network output ``x̂_n`` (no activation after the last layer)."""
    return net.trace(x0)[-1][0]


# -- input domains --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InputDomain:
    """Box-shaped input set; ℓ∞ balls are stored through their box."""

    lower: np.ndarray
    upper: np.ndarray
    kind: str = "box"
    center: np.ndarray = None
    radius: float = None

    def __post_init__(self):
        lo = as_tensor(self.lower, "lower").reshape(-1)
        hi = as_tensor(self.upper, "upper").reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError("lower and upper bounds differ in shape")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def box(cls, lower, upper, clamp=None):
        lo, hi = np.asarray(lower, float), np.asarray(upper, float)
        if clamp is not None:
            lo, hi = np.clip(lo, *clamp), np.clip(hi, *clamp)
        return cls(lo, hi)

    @classmethod
    def linf_ball(cls, center, radius, clamp=None):
        if radius < 0:
            raise ValueError("radius must be non-negative")
        c = np.asarray(center, dtype=np.float64).reshape(-1)
        lo, hi = c - radius, c + radius
        if clamp is not None:
            lo, hi = np.clip(lo, *clamp), np.clip(hi, *clamp)
        return cls(lo, hi, kind="linf", center=as_tensor(c), radius=float(radius))

    @property
    def dim(self):
        return self.lower.size

    @property
    def midpoint(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol=1e-12):
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def corners(self, limit=4096):
        """All vertices of the box (or ``limit`` of them for high dimensions)."""
        d = self.dim
        if 2 ** d <= limit:
            bits = ((np.arange(2 ** d)[:, None] >> np.arange(d)) & 1).astype(bool)
        else:
            bits = np.random.default_rng(0).integers(0, 2, size=(limit, d)).astype(bool)
        return np.where(bits, self.upper, self.lower)


# -- serialisation ---------------------------------------------------------

def network_from_dict(data: dict) -> Network:
    try:
        specs = data["layers"]
    except (KeyError, TypeError):
        raise ValueError("network description needs a 'layers' list") from None
    if not isinstance(specs, list) or not all(isinstance(spec, dict) for spec in specs):
        raise ValueError("'layers' must be a list of layer objects")
    shape = tuple(data["input_shape"]) if data.get("input_shape") is not None else None
    layers = []
    for spec in specs:
        kind = spec.get("kind")
        if kind == "linear":
            layer = Linear(spec["weight"], spec["bias"])
            shape = None
        elif kind == "conv2d":
            if shape is None:
                raise ShapeError("conv2d layer needs a known input shape (set 'input_shape')")
            layer = Conv2d(spec["weight"], spec["bias"], shape,
                           int(spec.get("stride", 1)), int(spec.get("padding", 0)))
            shape = layer.out_shape
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        layers.append(layer)
    return Network(tuple(layers))


def load_network(path: Union[str, Path]) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(net: Network, path: Union[str, Path]):
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh, indent=1)


def example_network() -> Network:
    """Two hidden layers of two neurons on ``[-1, 1]^2``; a small worked example used throughout the tests."""
    return Network((
        Linear([[1.0, -1.0], [1.0, -1.0]], [-1.0, 1.0]),
        Linear([[-1.0, 2.0], [-2.0, 1.0]], [-2.0, 0.0]),
        Linear([[2.0, -1.0]], [0.0]),
    ))


def random_network(rng: np.random.Generator, sizes: Sequence[int], scale=None) -> Network:
    """Fully-connected net with Gaussian weights; ``sizes`` includes input and output."""
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        s = scale if scale is not None else 1.0 / np.sqrt(n_in)
        layers.append(Linear(rng.normal(0.0, s, (n_out, n_in)), rng.normal(0.0, s, n_out)))
    return Network(tuple(layers))
