"""Small feed-forward engine: dense, conv1d and conv1d-transpose layers.

Everything is float64 numpy. Parameters for a whole network live in one flat
vector (:class:`ParamSet`) so that the optimiser, the anchor penalty and the
checkpoint writer all work on the same contiguous block.

Activations are ``(batch, channels, length)`` for conv layers and
``(batch, features)`` for dense layers. A dense layer flattens whatever it
receives; a conv layer that follows a dense layer reshapes its input to
``(batch, in_channels, -1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SLOPE = 0.01
LAYER_KINDS = ("dense", "conv1d", "conv1d-transpose")
ACTIVATIONS = ("leaky-relu", "sigmoid", "identity")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int = 1
    stride: int = 1
    activation: str = "leaky-relu"
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("in_channels", "out_channels", "kernel_size", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.in_channels, self.out_channels)
        if self.kind == "conv1d":
            return (self.out_channels, self.in_channels, self.kernel_size)
        return (self.in_channels, self.out_channels, self.kernel_size)

    @property
    def bias_shape(self) -> tuple[int, ...]:
        return (self.out_channels,)

    @property
    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_channels
        if self.kind == "conv1d":
            return self.in_channels * self.kernel_size
        # torch convention for transposed convs: weight.size(1) * kernel
        return self.out_channels * self.kernel_size

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "activation": self.activation,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass
class ParamSet:
    """All weights and biases of a network as a single flat vector.

    ``weights[i]`` and ``biases[i]`` are views into ``flat``.
    """

    specs: tuple[LayerSpec, ...]
    flat: np.ndarray
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.specs = tuple(self.specs)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (param_count(self.specs),):
            raise ValueError(
                f"flat vector has {self.flat.size} entries, specs need {param_count(self.specs)}"
            )
        self.weights, self.biases = [], []
        offset = 0
        for spec in self.specs:
            n = math.prod(spec.weight_shape)
            self.weights.append(self.flat[offset:offset + n].reshape(spec.weight_shape))
            offset += n
            self.biases.append(self.flat[offset:offset + spec.out_channels])
            offset += spec.out_channels

    @property
    def total_count(self) -> int:
        return self.flat.size

    def copy(self) -> "ParamSet":
        return ParamSet(self.specs, self.flat.copy())

    def layer_of(self, index: int) -> int:
        """Layer that owns entry ``index`` of the flat vector."""
        offset = 0
        for i, spec in enumerate(self.specs):
            offset += math.prod(spec.weight_shape) + spec.out_channels
            if index < offset:
                return i
        raise IndexError(index)


def param_count(specs) -> int:
    return sum(math.prod(s.weight_shape) + s.out_channels for s in specs)


def zeros_like(params: ParamSet) -> ParamSet:
    return ParamSet(params.specs, np.zeros_like(params.flat))


def leaky_relu_gain(slope: float) -> float:
    return math.sqrt(2.0 / (1.0 + slope**2))


def kaiming_bound(spec: LayerSpec) -> float:
    gain = leaky_relu_gain(spec.slope) if spec.activation == "leaky-relu" else 1.0
    return gain * math.sqrt(3.0 / spec.fan_in)


def kaiming_uniform_init(specs, seed: int) -> ParamSet:
    """Draw a parameter set from the Kaiming-uniform distribution.

    Weights are uniform in ``[-b, b]`` with ``b = gain * sqrt(3 / fan_in)``;
    the gain is ``sqrt(2 / (1 + slope**2))`` for leaky-ReLU layers and 1
    otherwise. Biases are uniform in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
    """
    specs = tuple(specs)
    if not specs:
        raise ValueError("spec list is empty")
    rng = np.random.default_rng(seed)
    params = ParamSet(specs, np.zeros(param_count(specs)))
    for spec, w, b in zip(specs, params.weights, params.biases):
        if spec.fan_in <= 0:
            raise ValueError(f"layer {spec} has zero fan_in")
        bound = kaiming_bound(spec)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-1.0 / math.sqrt(spec.fan_in), 1.0 / math.sqrt(spec.fan_in), size=b.shape)
    return params


# -- convolution geometry ---------------------------------------------------

def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(out_length, pad_left, pad_right) for 'same' zero padding."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


def _conv1d(x, w, b, stride):
    batch, c_in, length = x.shape
    c_out, _, k = w.shape
    out_len, left, right = same_padding(length, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
    y = np.broadcast_to(b[None, :, None], (batch, c_out, out_len)).copy()
    for j in range(k):
        # tap j of every output position
        y += np.einsum("bcl,oc->bol", xp[:, :, j:j + stride * out_len:stride], w[:, :, j])
    return y, xp.shape[2], left


def _conv1d_grad(x, w, g, stride, padded_len, left):
    batch, c_in, length = x.shape
    k = w.shape[2]
    out_len = g.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (left, padded_len - length - left)))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for j in range(k):
        sl = slice(j, j + stride * out_len, stride)
        dw[:, :, j] = np.einsum("bol,bcl->oc", g, xp[:, :, sl])
        dxp[:, :, sl] += np.einsum("bol,oc->bcl", g, w[:, :, j])
    return dw, g.sum(axis=(0, 2)), dxp[:, :, left:left + length]


def _conv1d_transpose(x, w, b, stride):
    # adjoint of a 'same' conv1d that maps length L*stride -> L
    batch, c_in, length = x.shape
    _, c_out, k = w.shape
    out_len = length * stride
    _, left, _ = same_padding(out_len, k, stride)
    full = np.zeros((batch, c_out, max((length - 1) * stride + k, left + out_len)))
    for j in range(k):
        full[:, :, j:j + stride * length:stride] += np.einsum("bcl,co->bol", x, w[:, :, j])
    y = full[:, :, left:left + out_len] + b[None, :, None]
    return y, full.shape[2], left


def _conv1d_transpose_grad(x, w, g, stride, full_len, left):
    length = x.shape[2]
    k = w.shape[2]
    gf = np.zeros((g.shape[0], g.shape[1], full_len))
    gf[:, :, left:left + g.shape[2]] = g
    dw = np.empty_like(w)
    dx = np.zeros_like(x)
    for j in range(k):
        gj = gf[:, :, j:j + stride * length:stride]
        dw[:, :, j] = np.einsum("bcl,bol->co", x, gj)
        dx += np.einsum("bol,co->bcl", gj, w[:, :, j])
    return dw, g.sum(axis=(0, 2)), dx


def _activate(z, spec):
    if spec.activation == "leaky-relu":
        return np.where(z > 0, z, spec.slope * z)
    if spec.activation == "sigmoid":
        # split by sign to stay finite for large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(z, a, spec):
    if spec.activation == "leaky-relu":
        return np.where(z > 0, 1.0, spec.slope)
    if spec.activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    params: ParamSet
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    geometry: list[tuple]
    in_shapes: list[tuple]

    @property
    def output_shape(self) -> tuple:
        return self.post[-1].shape


def _layer_input(x, spec):
    if spec.kind == "dense":
        return x.reshape(x.shape[0], -1)
    if x.ndim == 2:
        return x.reshape(x.shape[0], spec.in_channels, -1)
    return x


def forward(params: ParamSet, specs, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    specs = tuple(specs)
    if specs != params.specs:
        raise ValueError("parameter set was built for a different layer list")
    x = np.asarray(x, dtype=np.float64)
    cache = ForwardCache(params, [], [], [], [], [])
    for i, (spec, w, b) in enumerate(zip(specs, params.weights, params.biases)):
        cache.in_shapes.append(x.shape)
        h = _layer_input(x, spec)
        width = h.shape[1]
        if spec.kind == "dense" and width != spec.in_channels:
            raise ValueError(f"layer {i}: dense layer expects {spec.in_channels} inputs, got {width}")
        if spec.kind != "dense" and h.shape[1] != spec.in_channels:
            raise ValueError(f"layer {i}: expects {spec.in_channels} channels, got {h.shape[1]}")
        if spec.kind == "dense":
            z = h @ w + b
            geom = ()
        elif spec.kind == "conv1d":
            z, plen, left = _conv1d(h, w, b, spec.stride)
            geom = (plen, left)
        else:
            z, flen, left = _conv1d_transpose(h, w, b, spec.stride)
            geom = (flen, left)
        a = _activate(z, spec)
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.post.append(a)
        cache.geometry.append(geom)
        x = a
    return x, cache


def backward(cache: ForwardCache, upstream_grad: np.ndarray) -> ParamSet:
    """Gradient of a scalar loss w.r.t. every parameter, given dLoss/dOutput."""
    if not cache.post:
        raise ValueError("empty cache")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != cache.output_shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {cache.output_shape}")
    params = cache.params
    grads = zeros_like(params)
    for i in reversed(range(len(params.specs))):
        spec = params.specs[i]
        z, a, h = cache.pre[i], cache.post[i], cache.inputs[i]
        g = g * _activation_grad(z, a, spec)
        w = params.weights[i]
        if spec.kind == "dense":
            dw, db, dh = h.T @ g, g.sum(axis=0), g @ w.T
        elif spec.kind == "conv1d":
            dw, db, dh = _conv1d_grad(h, w, g, spec.stride, *cache.geometry[i])
        else:
            dw, db, dh = _conv1d_transpose_grad(h, w, g, spec.stride, *cache.geometry[i])
        grads.weights[i][...] = dw
        grads.biases[i][...] = db
        g = dh.reshape(cache.in_shapes[i])
    return grads


def input_gradient(cache: ForwardCache, upstream_grad: np.ndarray) -> np.ndarray:
    """dLoss/dInput; used only by the gradient-check tests."""
    g = np.asarray(upstream_grad, dtype=np.float64)
    params = cache.params
    for i in reversed(range(len(params.specs))):
        spec = params.specs[i]
        g = g * _activation_grad(cache.pre[i], cache.post[i], spec)
        w = params.weights[i]
        if spec.kind == "dense":
            dh = g @ w.T
        elif spec.kind == "conv1d":
            dh = _conv1d_grad(cache.inputs[i], w, g, spec.stride, *cache.geometry[i])[2]
        else:
            dh = _conv1d_transpose_grad(cache.inputs[i], w, g, spec.stride, *cache.geometry[i])[2]
        g = dh.reshape(cache.in_shapes[i])
    return g


# -- optimiser ---------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamSet, lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros(params.total_count), np.zeros(params.total_count), 0, lr)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if grads.flat.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("parameter, gradient and moment shapes disagree")
    bad = ~np.isfinite(grads.flat)
    if bad.any():
        layer = grads.layer_of(int(np.flatnonzero(bad)[0]))
        raise FloatingPointError(
            f"non-finite gradient in layer {layer} ({grads.specs[layer].kind})"
        )
    t = state.step + 1
    g = grads.flat
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return ParamSet(params.specs, flat), new_state


# -- autoencoder layout --------------------------------------------------------

@dataclass(frozen=True)
class Architecture:
    """Conv1d autoencoder over ``(in_channels, length)`` inputs.

    ``depth`` stride-2 conv layers (kernel 5, channels ``8*capacity`` doubling
    per layer) and a dense bottleneck; the decoder mirrors the encoder with
    transposed convolutions and ends in a sigmoid. Inputs are zero-padded to
    the next power of two and outputs cropped back to ``length``.
    """

    in_channels: int
    length: int
    depth: int = 1
    capacity: float = 1.0
    kernel_size: int = 5
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.in_channels < 1 or self.length < 1:
            raise ValueError("in_channels and length must be positive")
        if self.depth not in (1, 2, 3):
            raise ValueError(f"depth must be 1, 2 or 3, got {self.depth}")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")

    @property
    def padded_length(self) -> int:
        target = max(self.length, 2**self.depth)
        return 1 << (target - 1).bit_length()

    @property
    def channels(self) -> list[int]:
        return [max(1, int(round(8 * self.capacity * 2**i))) for i in range(self.depth)]

    @property
    def latent(self) -> int:
        return max(4, int(round(self.capacity * self.length / 2 ** (self.depth + 2))))

    @property
    def specs(self) -> tuple[LayerSpec, ...]:
        chans = [self.in_channels] + self.channels
        inner = chans[-1] * (self.padded_length >> self.depth)
        k, s = self.kernel_size, self.slope
        layers = [
            LayerSpec("conv1d", chans[i], chans[i + 1], k, 2, "leaky-relu", s)
            for i in range(self.depth)
        ]
        layers.append(LayerSpec("dense", inner, self.latent, activation="leaky-relu", slope=s))
        layers.append(LayerSpec("dense", self.latent, inner, activation="leaky-relu", slope=s))
        for i in reversed(range(self.depth)):
            act = "sigmoid" if i == 0 else "leaky-relu"
            layers.append(LayerSpec("conv1d-transpose", chans[i + 1], chans[i], k, 2, act, s))
        return tuple(layers)

    def pad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (self.in_channels, self.length):
            raise ValueError(
                f"expected input (batch, {self.in_channels}, {self.length}), got {x.shape}"
            )
        extra = self.padded_length - self.length
        return np.pad(x, ((0, 0), (0, 0), (0, extra))) if extra else x

    def crop_grad(self, g: np.ndarray) -> np.ndarray:
        """Lift a gradient on the cropped output back to the padded output."""
        extra = self.padded_length - self.length
        return np.pad(g, ((0, 0), (0, 0), (0, extra))) if extra else g

    def reconstruct(self, params: ParamSet, x: np.ndarray) -> np.ndarray:
        y, _ = forward(params, self.specs, self.pad(x))
        return y[:, :, : self.length]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "length": self.length,
            "depth": self.depth,
            "capacity": self.capacity,
            "kernel_size": self.kernel_size,
            "slope": self.slope,
        }
