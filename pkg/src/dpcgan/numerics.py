"""Small dense-network engine with explicit backprop and per-example gradients.

Only what the two GAN networks need: fully connected layers, a handful of
activations (including a mixed head that applies softmax over declared
column segments and tanh elsewhere), SGD and Adam updates, and seeded
counter-based random streams.  Everything is float64 numpy.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StateError, ValidationError

ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid", "identity", "softmax_segments")


@dataclass(frozen=True)
class Activation:
    """Activation descriptor.

    For ``softmax_segments`` the listed ``segments`` (start, width) get a
    softmax each; coordinates outside every segment get ``rest``.
    """

    kind: str
    slope: float = 0.2
    segments: tuple[tuple[int, int], ...] = ()
    rest: str = "tanh"

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.kind!r}")
        if self.rest not in ("tanh", "identity", "sigmoid"):
            raise ValidationError(f"unsupported rest activation {self.rest!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "segments": [list(s) for s in self.segments],
            "rest": self.rest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(
            kind=d["kind"],
            slope=float(d.get("slope", 0.2)),
            segments=tuple((int(a), int(b)) for a, b in d.get("segments", [])),
            rest=d.get("rest", "tanh"),
        )

    def rest_mask(self, width: int) -> np.ndarray:
        mask = np.ones(width, dtype=bool)
        for start, w in self.segments:
            mask[start:start + w] = False
        return mask


def _apply(act: Activation, z: np.ndarray) -> np.ndarray:
    k = act.kind
    if k == "identity":
        return z.copy()
    if k == "tanh":
        return np.tanh(z)
    if k == "sigmoid":
        return _sigmoid(z)
    if k == "leaky_relu":
        return np.where(z > 0, z, act.slope * z)
    out = np.empty_like(z)
    mask = act.rest_mask(z.shape[1])
    out[:, mask] = _apply(Activation(act.rest), z[:, mask])
    for start, w in act.segments:
        seg = z[:, start:start + w]
        e = np.exp(seg - seg.max(axis=1, keepdims=True))
        out[:, start:start + w] = e / e.sum(axis=1, keepdims=True)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_backward(act: Activation, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Map dL/da to dL/dz for one layer."""
    k = act.kind
    if k == "identity":
        return da.copy()
    if k == "tanh":
        return da * (1.0 - a * a)
    if k == "sigmoid":
        return da * a * (1.0 - a)
    if k == "leaky_relu":
        return da * np.where(z > 0, 1.0, act.slope)
    dz = np.empty_like(da)
    mask = act.rest_mask(z.shape[1])
    dz[:, mask] = _apply_backward(Activation(act.rest), z[:, mask], a[:, mask], da[:, mask])
    for start, w in act.segments:
        s = a[:, start:start + w]
        g = da[:, start:start + w]
        dz[:, start:start + w] = s * (g - (s * g).sum(axis=1, keepdims=True))
    return dz


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class GradientSet:
    """Gradients mirroring a DenseNet's (weight, bias) pairs."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        """Global L2 norm over all parameters jointly."""
        return math.sqrt(sum(float(np.sum(a * a)) for a in self.arrays()))

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet(tuple(w * factor for w in self.weights), tuple(b * factor for b in self.biases))

    def __add__(self, other: "GradientSet") -> "GradientSet":
        _check_same_shapes(self, other)
        return GradientSet(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    @classmethod
    def zeros_like(cls, net: "DenseNet") -> "GradientSet":
        return cls(
            tuple(np.zeros_like(l.weight) for l in net.layers),
            tuple(np.zeros_like(l.bias) for l in net.layers),
        )

    @classmethod
    def from_flat(cls, like: "GradientSet | DenseNet", vec: np.ndarray) -> "GradientSet":
        shapes = like.shapes()
        vec = np.asarray(vec, dtype=np.float64)
        total = sum(int(np.prod(s)) for s in shapes)
        if vec.size != total:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {total}")
        arrays, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            arrays.append(vec[pos:pos + n].reshape(s).copy())
            pos += n
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))


def sum_gradients(grads: Sequence[GradientSet]) -> GradientSet:
    """Sum in list order (fixed-order reduction)."""
    if not grads:
        raise ValidationError("cannot sum an empty gradient list")
    total = grads[0]
    for g in grads[1:]:
        total = total + g
    return total


def _check_same_shapes(a, b) -> None:
    if a.shapes() != b.shapes():
        raise ShapeError(f"shape mismatch: {a.shapes()} vs {b.shapes()}")


@dataclass(frozen=True)
class DenseNet:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("network needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {k} output {a.out_dim} does not feed layer {k + 1} input {b.in_dim}")
        for l in self.layers:
            if l.bias.shape != (l.out_dim,):
                raise ShapeError("bias shape does not match weight rows")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for l in self.layers:
            out.extend((l.weight.shape, l.bias.shape))
        return out

    def params(self) -> GradientSet:
        """Parameters packaged as a GradientSet (handy for flattening)."""
        return GradientSet(tuple(l.weight for l in self.layers), tuple(l.bias for l in self.layers))

    def with_params(self, params: GradientSet) -> "DenseNet":
        _check_same_shapes(self, params)
        return DenseNet(tuple(
            Layer(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64), l.activation)
            for l, w, b in zip(self.layers, params.weights, params.biases)
        ))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [
                {
                    "weight": l.weight.tolist(),
                    "bias": l.bias.tolist(),
                    "activation": l.activation.to_dict(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        layers = tuple(
            Layer(
                np.asarray(l["weight"], dtype=np.float64).reshape(len(l["weight"]), -1),
                np.asarray(l["bias"], dtype=np.float64),
                Activation.from_dict(l["activation"]),
            )
            for l in d["layers"]
        )
        net = cls(layers)
        if net.input_dim != d.get("input_dim", net.input_dim) or net.output_dim != d.get("output_dim", net.output_dim):
            raise ShapeError("architecture descriptor disagrees with layer arrays")
        return net


def init_mlp(
    rng: np.random.Generator,
    sizes: Sequence[int],
    hidden: Activation = Activation("leaky_relu", 0.2),
    head: Activation = Activation("identity"),
) -> DenseNet:
    """Glorot-normal weights, zero biases."""
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValidationError(f"invalid layer sizes {list(sizes)}")
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        std = math.sqrt(2.0 / (n_in + n_out))
        w = rng.standard_normal((n_out, n_in)) * std
        act = head if k == len(sizes) - 2 else hidden
        layers.append(Layer(w, np.zeros(n_out), act))
    return DenseNet(tuple(layers))


@dataclass
class Trace:
    """Cached pre-activations and activations of one forward pass."""

    net_id: int
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]


def _check_batch(net: DenseNet, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input_dim {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("batch contains non-finite entries")
    return x


def forward_trace(net: DenseNet, batch) -> Trace:
    x = _check_batch(net, batch)
    inputs, pre, post = [], [], []
    a = x
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        a = _apply(layer.activation, z)
        pre.append(z)
        post.append(a)
    return Trace(id(net), inputs, pre, post)


def forward(net: DenseNet, batch) -> np.ndarray:
    return forward_trace(net, batch).output


def _backprop(net: DenseNet, trace: Trace | None, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Return per-layer dL/dz (each B x out) and dL/dinput (B x in)."""
    if trace is None:
        raise StateError("no cached activations; run forward_trace first")
    if trace.net_id != id(net) or len(trace.pre) != len(net.layers):
        raise StateError("trace was produced by a different network")
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape != trace.output.shape:
        raise ShapeError(f"upstream grads {g.shape} do not match output {trace.output.shape}")
    deltas: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = _apply_backward(layer.activation, trace.pre[k], trace.post[k], g)
        deltas[k] = dz
        g = dz @ layer.weight
    return deltas, g


def backward_per_example(net: DenseNet, trace: Trace | None, upstream) -> list[GradientSet]:
    """One GradientSet per batch row; row i depends only on example i."""
    deltas, _ = _backprop(net, trace, upstream)
    per_w = [np.einsum("bo,bi->boi", d, x) for d, x in zip(deltas, trace.inputs)]
    return [
        GradientSet(tuple(w[i] for w in per_w), tuple(d[i].copy() for d in deltas))
        for i in range(trace.batch_size)
    ]


def backward(net: DenseNet, trace: Trace | None, upstream) -> tuple[GradientSet, np.ndarray]:
    """Whole-batch parameter gradient and gradient w.r.t. the inputs."""
    deltas, dx = _backprop(net, trace, upstream)
    grads = GradientSet(
        tuple(d.T @ x for d, x in zip(deltas, trace.inputs)),
        tuple(d.sum(axis=0) for d in deltas),
    )
    return grads, dx


def per_example_norms(net: DenseNet, trace: Trace | None, upstream) -> tuple[np.ndarray, list[np.ndarray]]:
    """Global per-example gradient norms without materializing per-example weights.

    For a dense layer the example-i weight gradient is an outer product, so
    its squared Frobenius norm is ||delta_i||^2 * ||x_i||^2.
    """
    deltas, _ = _backprop(net, trace, upstream)
    sq = np.zeros(trace.batch_size)
    for d, x in zip(deltas, trace.inputs):
        dn = np.einsum("bo,bo->b", d, d)
        sq += dn * (np.einsum("bi,bi->b", x, x) + 1.0)
    return np.sqrt(sq), deltas


def weighted_gradient_sum(trace: Trace, deltas: list[np.ndarray], weights: np.ndarray) -> GradientSet:
    """sum_i weights[i] * grad_i, using cached per-layer deltas."""
    w = np.asarray(weights, dtype=np.float64)[:, None]
    return GradientSet(
        tuple((d * w).T @ x for d, x in zip(deltas, trace.inputs)),
        tuple((d * w).sum(axis=0) for d in deltas),
    )


def sgd_step(net: DenseNet, grad: GradientSet, eta: float) -> DenseNet:
    if not eta > 0:
        raise ValidationError("learning rate must be positive")
    _check_same_shapes(net, grad)
    return DenseNet(tuple(
        Layer(l.weight - eta * gw, l.bias - eta * gb, l.activation)
        for l, gw, gb in zip(net.layers, grad.weights, grad.biases)
    ))


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: GradientSet
    v: GradientSet
    t: int = 0

    @classmethod
    def zeros(cls, net: DenseNet) -> "AdamState":
        return cls(GradientSet.zeros_like(net), GradientSet.zeros_like(net), 0)


def adam_step(net: DenseNet, grad: GradientSet, state: AdamState, cfg: AdamConfig = AdamConfig()) -> tuple[DenseNet, AdamState]:
    _check_same_shapes(net, grad)
    _check_same_shapes(state.m, grad)
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    m = [b1 * mi + (1 - b1) * gi for mi, gi in zip(state.m.arrays(), grad.arrays())]
    v = [b2 * vi + (1 - b2) * gi * gi for vi, gi in zip(state.v.arrays(), grad.arrays())]
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = [
        p - cfg.lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        for p, mi, vi in zip(net.params().arrays(), m, v)
    ]
    params = GradientSet(tuple(new[0::2]), tuple(new[1::2]))
    new_state = AdamState(
        GradientSet(tuple(m[0::2]), tuple(m[1::2])),
        GradientSet(tuple(v[0::2]), tuple(v[1::2])),
        t,
    )
    return net.with_params(params), new_state


def check_finite(grad: GradientSet, what: str = "gradient") -> None:
    if not grad.is_finite():
        raise NumericError(f"non-finite entries in {what}")


# -- random streams ---------------------------------------------------------

@dataclass(frozen=True)
class RngStreams:
    """Named, counter-based random streams derived from one 64-bit seed.

    ``generator(name, index)`` keys a Philox bit generator from
    (seed, name, index), so a given draw never depends on how many other
    streams were consumed before it.
    """

    seed: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must fit in 64 unsigned bits")

    def key(self, name: str, index: int = 0) -> np.ndarray:
        h = hashlib.blake2b(f"{int(self.seed)}/{name}/{int(index)}".encode(), digest_size=16).digest()
        return np.frombuffer(h, dtype=np.uint64).copy()

    def generator(self, name: str, index: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key(name, index)))

    def child_seed(self, name: str) -> int:
        return int(self.key(name)[0])


def gaussian_noise(rng: np.random.Generator, shape: int | Iterable[int], std: float) -> np.ndarray:
    if std < 0 or not math.isfinite(std):
        raise ValidationError("noise std must be finite and non-negative")
    if std == 0:
        return np.zeros(shape)
    return rng.standard_normal(shape) * std
