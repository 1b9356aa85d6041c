"""Concrete loss surfaces: SimpleCNN, a ReLU MLP and an explicit quadratic.

A :class:`ModelSpec` is an immutable description; its ``graph`` property
builds (once) the :class:`~sharppath.autodiff.Graph` that evaluates the
loss. Parameters always travel as one flat float64 vector.
"""
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError

KINDS = ("simple_cnn", "mlp", "quadratic")


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels disagree on batch size")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    kind: str
    input_shape: tuple = ()
    classes: int = 0
    conv_filters: tuple = ()
    dense: tuple = ()
    l2_coefficient: float = 0.0
    quad_a: np.ndarray = None
    quad_b: np.ndarray = None
    quad_start: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.l2_coefficient < 0:
            raise ConfigError("l2_coefficient must be nonnegative")

    @cached_property
    def graph(self):
        return _BUILDERS[self.kind](self)

    @property
    def n_params(self):
        return self.graph.n_params


def build_simple_cnn(input_shape, classes=10, filters=(32, 32, 64, 64), dense=128, l2_coefficient=0.0):
    """Four 3x3 'same' conv layers with ReLU, 2x2 max-pool after the second
    and fourth, then dense(``dense``)+ReLU and dense(``classes``).

    ``filters``/``dense`` default to the full-size network; pass smaller
    widths for desk-scale runs.
    """
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) != 3:
        raise ConfigError("SimpleCNN expects an H x W x C input shape")
    h, w, _ = input_shape
    if h < 4 or w < 4:
        raise ConfigError(f"input {h}x{w} is too small for two 2x2 poolings")
    if len(filters) != 4:
        raise ConfigError("SimpleCNN has exactly four conv layers")
    return ModelSpec("simple_cnn", input_shape, int(classes), tuple(int(f) for f in filters),
                     (int(dense), int(classes)), float(l2_coefficient))


def build_mlp(input_dim=784, hidden=(128,), classes=10, l2_coefficient=0.0):
    if isinstance(input_dim, (tuple, list)):
        input_shape = tuple(int(d) for d in input_dim)
    else:
        input_shape = (int(input_dim),)
    if any(h < 1 for h in hidden) or classes < 2:
        raise ConfigError("MLP layer widths must be positive and classes >= 2")
    return ModelSpec("mlp", input_shape, int(classes), (), tuple(int(h) for h in hidden) + (int(classes),),
                     float(l2_coefficient))


def build_quadratic(a, b=None, start=None):
    """L(theta) = 0.5 theta^T A theta - b^T theta; the batch is ignored.

    ``a`` is either a symmetric matrix or the diagonal of one.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim == 2:
        if a.shape[0] != a.shape[1] or not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ConfigError("quadratic A must be square and symmetric")
    elif a.ndim != 1:
        raise ConfigError("quadratic A must be a matrix or a diagonal vector")
    d = a.shape[0]
    b = None if b is None else np.array(b, dtype=np.float64).reshape(d)
    start = np.ones(d) if start is None else np.array(start, dtype=np.float64).reshape(d)
    return ModelSpec("quadratic", (d,), 0, (), (), 0.0, a, b, start)


def quadratic_matrix(spec):
    return np.diag(spec.quad_a) if spec.quad_a.ndim == 1 else spec.quad_a


def _conv_shapes(spec):
    h, w, c = spec.input_shape
    shapes = []
    for i, f in enumerate(spec.conv_filters):
        shapes.append((3, 3, c, f))
        c = f
        if i in (1, 3):
            h, w = h // 2, w // 2
    return shapes, h * w * c


def _build_cnn(spec):
    g = ad.Graph()
    x = g.input()
    y = g.labels()
    shapes, flat = _conv_shapes(spec)
    weights = []
    for i, shp in enumerate(shapes):
        wt = g.param(f"conv{i + 1}.w", shp)
        bs = g.param(f"conv{i + 1}.b", (shp[-1],), kind="bias")
        weights.append(wt)
        x = g.add(ad.ReLU(), g.add(ad.Conv2d(), x, wt, bs, name=f"conv{i + 1}"), name=f"relu{i + 1}")
        if i in (1, 3):
            x = g.add(ad.MaxPool2(), x, name=f"pool{(i + 1) // 2}")
    x = g.add(ad.Flatten(), x)
    return _dense_head(g, spec, x, y, flat, weights)


def _build_mlp(spec):
    g = ad.Graph()
    x = g.input()
    y = g.labels()
    fan = int(np.prod(spec.input_shape))
    if len(spec.input_shape) > 1:
        x = g.add(ad.Flatten(), x)
    return _dense_head(g, spec, x, y, fan, [])


def _dense_head(g, spec, x, y, fan, weights):
    widths = spec.dense
    for i, width in enumerate(widths):
        wt = g.param(f"dense{i + 1}.w", (fan, width))
        bs = g.param(f"dense{i + 1}.b", (width,), kind="bias")
        weights.append(wt)
        x = g.add(ad.Dense(), x, wt, bs, name=f"dense{i + 1}")
        if i < len(widths) - 1:
            x = g.add(ad.ReLU(), x, name=f"relu_d{i + 1}")
        fan = width
    loss = g.add(ad.SoftmaxCrossEntropy(), x, y, name="xent")
    if spec.l2_coefficient > 0:
        pen = g.add(ad.L2Penalty(spec.l2_coefficient), *weights, name="l2")
        loss = g.add(ad.Add(), loss, pen, name="loss")
    return g.set_output(loss)


def _build_quadratic(spec):
    g = ad.Graph()
    theta = g.param("theta", (spec.quad_a.shape[0],))
    return g.set_output(g.add(ad.QuadraticForm(spec.quad_a, spec.quad_b), theta, name="quadratic"))


_BUILDERS = {"simple_cnn": _build_cnn, "mlp": _build_mlp, "quadratic": _build_quadratic}


def init_params(spec, rng):
    """He-normal weights (std sqrt(2 / fan_in)), zero biases.

    The quadratic model returns its configured start point.
    """
    if spec.kind == "quadratic":
        return spec.quad_start.copy()
    theta = np.zeros(spec.n_params)
    for slot in spec.graph.slots:
        if slot.kind == "weight":
            std = np.sqrt(2.0 / slot.fan_in)
            theta[slot.offset:slot.offset + slot.size] = rng.normal(0.0, std, slot.size)
    return theta


def _no_batch(spec, batch):
    if spec.kind == "quadratic":
        return batch
    if batch is None or len(batch) == 0:
        raise ValueError("batch must be nonempty")
    return batch


def loss(spec, params, batch):
    return ad.forward_eval(spec.graph, params, _no_batch(spec, batch))


def loss_grad(spec, params, batch):
    """(mean loss, gradient), L2 penalty on weights included when configured."""
    return ad.loss_and_grad(spec.graph, params, _no_batch(spec, batch))


def hvp(spec, params, batch, v):
    return ad.hvp(spec.graph, params, _no_batch(spec, batch), v)


def logits(spec, params, inputs):
    """Pre-softmax outputs; evaluated without the loss head."""
    if spec.kind == "quadratic":
        raise ConfigError("the quadratic model has no class outputs")
    g = spec.graph
    # every node before the cross-entropy is a function of inputs and params only
    stop = next(i for i, n in enumerate(g.nodes) if isinstance(n.op, ad.SoftmaxCrossEntropy))
    head = ad.Graph(g.nodes[:stop], g.slots, g.n_params, g.nodes[stop].inputs[0])
    dummy = Batch(inputs, np.zeros(len(inputs), dtype=np.int64))
    vals, _, _ = ad._forward(head, params, dummy)
    return vals[head.output]


def predict_proba(spec, params, inputs):
    return ad.softmax(logits(spec, params, inputs))


def accuracy(spec, params, dataset, chunk=1024):
    """Fraction of examples whose argmax prediction equals the label."""
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    hits = 0
    for lo in range(0, n, chunk):
        out = logits(spec, params, dataset.inputs[lo:lo + chunk])
        hits += int(np.sum(np.argmax(out, axis=1) == dataset.labels[lo:lo + chunk]))
    return hits / n


def dataset_loss(spec, params, dataset, chunk=1024):
    """Mean loss over a whole dataset, evaluated in chunks.

    Chunk losses are weighted by chunk size; the L2 penalty appears once per
    chunk, so the weighted mean carries it exactly once.
    """
    n = len(dataset.labels)
    if n <= chunk:
        return loss(spec, params, Batch(dataset.inputs, dataset.labels))
    total = 0.0
    for lo in range(0, n, chunk):
        b = Batch(dataset.inputs[lo:lo + chunk], dataset.labels[lo:lo + chunk])
        total += loss(spec, params, b) * len(b)
    return total / n


def dataset_metrics(spec, params, dataset, chunk=1024):
    """(mean loss, accuracy) over a dataset from a single forward pass per chunk."""
    if spec.kind == "quadratic":
        raise ConfigError("the quadratic model has no class outputs")
    g = spec.graph
    logit_node = next(n for n in g.nodes if isinstance(n.op, ad.SoftmaxCrossEntropy)).inputs[0]
    n = len(dataset.labels)
    total, hits = 0.0, 0
    for lo in range(0, n, chunk):
        b = Batch(dataset.inputs[lo:lo + chunk], dataset.labels[lo:lo + chunk])
        vals, _, _ = ad._forward(g, params, b)
        total += float(vals[g.output]) * len(b)
        hits += int(np.sum(np.argmax(vals[logit_node], axis=1) == b.labels))
    return total / n, hits / n


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SHARPPATH1"
_TAG_LEN = 16


def save_checkpoint(path, spec_or_kind, params):
    """Write ``MAGIC``, a 16-byte NUL-padded model-kind tag, D as
    little-endian uint64, then D little-endian float64 values."""
    kind = spec_or_kind if isinstance(spec_or_kind, str) else spec_or_kind.kind
    tag = kind.encode("ascii")
    if len(tag) > _TAG_LEN:
        raise ValueError("model-kind tag too long")
    params = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag.ljust(_TAG_LEN, b"\0"))
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.tobytes())


def load_checkpoint(path):
    """Returns (kind, params)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = len(MAGIC) + _TAG_LEN + 8
    if len(raw) < head or raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    kind = raw[len(MAGIC):len(MAGIC) + _TAG_LEN].rstrip(b"\0").decode("ascii")
    (d,) = struct.unpack("<Q", raw[head - 8:head])
    if len(raw) != head + 8 * d:
        raise FormatError(f"{path}: expected {d} values, file size disagrees")
    return kind, np.frombuffer(raw[head:], dtype="<f8").astype(np.float64)
