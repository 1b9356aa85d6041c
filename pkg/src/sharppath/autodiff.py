"""Static computation graphs over numpy arrays with exact gradients and
Hessian-vector products.

A :class:`Graph` is a topologically ordered list of nodes built once per
model. Evaluating it against a flat parameter vector and a batch gives the
mean loss; the reverse sweep gives the gradient, and propagating a tangent
``v`` through both sweeps (forward-over-reverse, a.k.a. the R-operator)
gives ``H @ v`` in a single extra pass.

Every op implements four rules:

``forward(ctx, *xs)``            value
``jvp(ctx, *dxs)``               tangent of the value (``None`` = zero)
``vjp(ctx, g, needs)``           adjoints of the inputs
``rvjp(ctx, g, rg, dxs, needs)`` tangents of those adjoints

The op set is deliberately closed: dense, 3x3 'same' convolution (im2col),
2x2 max-pool, ReLU, flatten, fused softmax cross-entropy, L2 penalty, scalar
add, and an explicit quadratic form. ReLU and max-pool are piecewise linear,
so their second derivative is taken as zero.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

PARAM = "param"
INPUT = "input"
LABELS = "labels"


@dataclass
class ParamSlot:
    name: str
    shape: tuple
    offset: int
    kind: str  # "weight" or "bias"

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def fan_in(self):
        return int(np.prod(self.shape[:-1], dtype=np.int64)) if len(self.shape) > 1 else 1


@dataclass
class Node:
    op: object
    inputs: tuple
    name: str


@dataclass
class Graph:
    nodes: list = field(default_factory=list)
    slots: list = field(default_factory=list)
    n_params: int = 0
    output: int = -1

    def param(self, name, shape, kind="weight"):
        slot = ParamSlot(name, tuple(shape), self.n_params, kind)
        self.slots.append(slot)
        self.n_params += slot.size
        return self._append(PARAM, (), name, slot)

    def input(self):
        return self._append(INPUT, (), "input")

    def labels(self):
        return self._append(LABELS, (), "labels")

    def add(self, op, *inputs, name=None):
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError("graph inputs must precede the node that uses them")
        return self._append(op, tuple(inputs), name or type(op).__name__)

    def set_output(self, idx):
        self.output = idx
        return self

    def _append(self, op, inputs, name, slot=None):
        node = Node(op, inputs, name)
        node.slot = slot
        self.nodes.append(node)
        return len(self.nodes) - 1

    def weight_slots(self):
        return [s for s in self.slots if s.kind == "weight"]

    def param_mask(self):
        """Boolean mask over the flat vector, True on weight entries."""
        mask = np.zeros(self.n_params, dtype=bool)
        for s in self.weight_slots():
            mask[s.offset:s.offset + s.size] = True
        return mask

    def unflatten(self, params):
        params = np.asarray(params, dtype=np.float64)
        return {s.name: params[s.offset:s.offset + s.size].reshape(s.shape) for s in self.slots}

    def flatten(self, arrays):
        out = np.empty(self.n_params, dtype=np.float64)
        for s in self.slots:
            out[s.offset:s.offset + s.size] = np.asarray(arrays[s.name], dtype=np.float64).reshape(-1)
        return out

    def _needs_grad(self):
        needs = []
        for node in self.nodes:
            if node.op == PARAM:
                needs.append(True)
            elif node.op in (INPUT, LABELS):
                needs.append(False)
            else:
                needs.append(any(needs[i] for i in node.inputs))
        return needs


# ---------------------------------------------------------------------------
# ops


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Dense:
    """y = x @ W + b."""

    def forward(self, ctx, x, w, b):
        ctx["x"], ctx["w"] = x, w
        return x @ w + b

    def jvp(self, ctx, dx, dw, db):
        out = None
        if dx is not None:
            out = dx @ ctx["w"]
        if dw is not None:
            out = _add(out, ctx["x"] @ dw)
        if db is not None:
            out = _add(out, np.broadcast_to(db, (ctx["x"].shape[0], db.shape[0])))
        return out

    def vjp(self, ctx, g, needs):
        gx = g @ ctx["w"].T if needs[0] else None
        gw = ctx["x"].T @ g if needs[1] else None
        gb = g.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    def rvjp(self, ctx, g, rg, dxs, needs):
        dx, dw, _ = dxs
        rgx = rgw = rgb = None
        if needs[0]:
            rgx = rg @ ctx["w"].T
            if dw is not None:
                rgx = rgx + g @ dw.T
        if needs[1]:
            rgw = ctx["x"].T @ rg
            if dx is not None:
                rgw = rgw + dx.T @ g
        if needs[2]:
            rgb = rg.sum(axis=0)
        return rgx, rgw, rgb


def im2col(x, k=3):
    """(N,H,W,C) -> (N,H,W,k*k*C), zero 'same' padding, (di, dj, c) ordering."""
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    return np.concatenate([xp[:, i:i + h, j:j + w, :] for i in range(k) for j in range(k)], axis=-1)


def col2im(cols, c, k=3):
    """Adjoint of :func:`im2col`."""
    n, h, w, _ = cols.shape
    p = k // 2
    out = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=cols.dtype)
    idx = 0
    for i in range(k):
        for j in range(k):
            out[:, i:i + h, j:j + w, :] += cols[..., idx * c:(idx + 1) * c]
            idx += 1
    return out[:, p:p + h, p:p + w, :]


class Conv2d:
    """3x3 'same' convolution on NHWC tensors, lowered to im2col + matmul.

    Weights have shape (3, 3, C_in, C_out).
    """

    k = 3

    def forward(self, ctx, x, w, b):
        cols = im2col(x, self.k)
        n, h, wd, _ = x.shape
        wm = w.reshape(-1, w.shape[-1])
        ctx.update(cols=cols.reshape(n * h * wd, -1), wm=wm, shape=x.shape)
        return (ctx["cols"] @ wm + b).reshape(n, h, wd, w.shape[-1])

    def _flat(self, ctx, t):
        return t.reshape(-1, t.shape[-1])

    def jvp(self, ctx, dx, dw, db):
        n, h, wd, _ = ctx["shape"]
        f = ctx["wm"].shape[1]
        out = None
        if dx is not None:
            ctx["dcols"] = im2col(dx, self.k).reshape(n * h * wd, -1)
            out = ctx["dcols"] @ ctx["wm"]
        if dw is not None:
            out = _add(out, ctx["cols"] @ dw.reshape(-1, f))
        if db is not None:
            out = _add(out, np.broadcast_to(db, (n * h * wd, f)))
        return None if out is None else out.reshape(n, h, wd, f)

    def vjp(self, ctx, g, needs):
        n, h, wd, c = ctx["shape"]
        g2 = self._flat(ctx, g)
        gx = gw = gb = None
        if needs[0]:
            gx = col2im((g2 @ ctx["wm"].T).reshape(n, h, wd, -1), c, self.k)
        if needs[1]:
            gw = (ctx["cols"].T @ g2).reshape(self.k, self.k, c, -1)
        if needs[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb

    def rvjp(self, ctx, g, rg, dxs, needs):
        n, h, wd, c = ctx["shape"]
        dx, dw, _ = dxs
        g2, rg2 = self._flat(ctx, g), self._flat(ctx, rg)
        rgx = rgw = rgb = None
        if needs[0]:
            t = rg2 @ ctx["wm"].T
            if dw is not None:
                t = t + g2 @ dw.reshape(-1, dw.shape[-1]).T
            rgx = col2im(t.reshape(n, h, wd, -1), c, self.k)
        if needs[1]:
            t = ctx["cols"].T @ rg2
            if dx is not None:
                t = t + ctx["dcols"].T @ g2
            rgw = t.reshape(self.k, self.k, c, -1)
        if needs[2]:
            rgb = rg2.sum(axis=0)
        return rgx, rgw, rgb


class _Linear:
    """Base for ops that are linear in their single input once a mask/index is
    fixed by the forward pass: ``jvp`` and ``vjp`` reuse that structure and
    the second-order term vanishes."""

    def jvp(self, ctx, dx):
        return None if dx is None else self.apply(ctx, dx)

    def vjp(self, ctx, g, needs):
        return (self.transpose(ctx, g),)

    def rvjp(self, ctx, g, rg, dxs, needs):
        return (self.transpose(ctx, rg),)


class ReLU(_Linear):
    def forward(self, ctx, x):
        ctx["mask"] = x > 0
        return np.where(ctx["mask"], x, 0.0)

    def apply(self, ctx, t):
        return np.where(ctx["mask"], t, 0.0)

    transpose = apply


class MaxPool2(_Linear):
    """2x2 max-pool, stride 2, NHWC; odd trailing rows/columns are dropped.

    Ties go to the first element of the window in row-major order.
    """

    @staticmethod
    def _windows(x):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        x = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        return x.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)

    def forward(self, ctx, x):
        win = self._windows(x)
        ctx["idx"] = np.argmax(win, axis=-1)[..., None]
        ctx["shape"] = x.shape
        return np.take_along_axis(win, ctx["idx"], axis=-1)[..., 0]

    def apply(self, ctx, t):
        return np.take_along_axis(self._windows(t), ctx["idx"], axis=-1)[..., 0]

    def transpose(self, ctx, g):
        n, h, w, c = ctx["shape"]
        h2, w2 = h // 2, w // 2
        win = np.zeros((n, h2, w2, c, 4), dtype=g.dtype)
        np.put_along_axis(win, ctx["idx"], g[..., None], axis=-1)
        win = win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        if (2 * h2, 2 * w2) != (h, w):
            win = np.pad(win, ((0, 0), (0, h - 2 * h2), (0, w - 2 * w2), (0, 0)))
        return win


class Flatten(_Linear):
    def forward(self, ctx, x):
        ctx["shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def apply(self, ctx, t):
        return t.reshape(t.shape[0], -1)

    def transpose(self, ctx, g):
        return g.reshape(ctx["shape"])


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxCrossEntropy:
    """Mean cross-entropy of softmax(logits) against integer labels."""

    def forward(self, ctx, z, labels):
        n = z.shape[0]
        zs = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(zs).sum(axis=1))
        p = np.exp(zs - lse[:, None])
        onehot = np.zeros_like(z)
        onehot[np.arange(n), labels] = 1.0
        ctx.update(p=p, onehot=onehot, n=n)
        return np.float64(np.mean(lse - zs[np.arange(n), labels]))

    def jvp(self, ctx, dz, dlabels=None):
        if dz is None:
            return None
        return np.float64(np.sum((ctx["p"] - ctx["onehot"]) * dz) / ctx["n"])

    def vjp(self, ctx, g, needs):
        return (g * (ctx["p"] - ctx["onehot"]) / ctx["n"], None)

    def rvjp(self, ctx, g, rg, dxs, needs):
        p, n = ctx["p"], ctx["n"]
        out = rg * (p - ctx["onehot"]) / n
        dz = dxs[0]
        if dz is not None:
            dp = p * (dz - np.sum(p * dz, axis=1, keepdims=True))
            out = out + g * dp / n
        return (out, None)


class L2Penalty:
    """0.5 * coef * sum of squared entries of every input."""

    def __init__(self, coef):
        self.coef = float(coef)

    def forward(self, ctx, *ws):
        ctx["ws"] = ws
        return np.float64(0.5 * self.coef * sum(np.sum(w * w) for w in ws))

    def jvp(self, ctx, *dws):
        out = None
        for w, dw in zip(ctx["ws"], dws):
            if dw is not None:
                out = _add(out, self.coef * np.sum(w * dw))
        return None if out is None else np.float64(out)

    def vjp(self, ctx, g, needs):
        return tuple(g * self.coef * w for w in ctx["ws"])

    def rvjp(self, ctx, g, rg, dxs, needs):
        out = []
        for w, dw in zip(ctx["ws"], dxs):
            r = rg * self.coef * w
            if dw is not None:
                r = r + g * self.coef * dw
            out.append(r)
        return tuple(out)


class Add:
    def forward(self, ctx, *xs):
        ctx["n"] = len(xs)
        out = xs[0]
        for x in xs[1:]:
            out = out + x
        return out

    def jvp(self, ctx, *dxs):
        out = None
        for d in dxs:
            out = _add(out, d)
        return out

    def vjp(self, ctx, g, needs):
        return (g,) * ctx["n"]

    def rvjp(self, ctx, g, rg, dxs, needs):
        return (rg,) * ctx["n"]


class QuadraticForm:
    """0.5 * theta^T A theta - b^T theta, with A symmetric (dense or diagonal)."""

    def __init__(self, a, b=None):
        a = np.asarray(a, dtype=np.float64)
        self.diagonal = a.ndim == 1
        self.a = a
        self.b = None if b is None else np.asarray(b, dtype=np.float64)

    def matvec(self, v):
        return self.a * v if self.diagonal else self.a @ v

    def forward(self, ctx, theta):
        at = self.matvec(theta)
        ctx["grad"] = at if self.b is None else at - self.b
        val = 0.5 * float(theta @ at)
        if self.b is not None:
            val -= float(self.b @ theta)
        return np.float64(val)

    def jvp(self, ctx, dtheta):
        return None if dtheta is None else np.float64(ctx["grad"] @ dtheta)

    def vjp(self, ctx, g, needs):
        return (g * ctx["grad"],)

    def rvjp(self, ctx, g, rg, dxs, needs):
        out = rg * ctx["grad"]
        if dxs[0] is not None:
            out = out + g * self.matvec(dxs[0])
        return (out,)


# ---------------------------------------------------------------------------
# evaluation


def _check_finite(value, node):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value at node {node.name!r}", node=node.name)


def _forward(graph, params, batch, v=None):
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (graph.n_params,):
        raise ValueError(f"expected {graph.n_params} parameters, got {params.shape}")
    vals, ctxs, tans = [], [], []
    for node in graph.nodes:
        ctx = {}
        tan = None
        if node.op == PARAM:
            s = node.slot
            val = params[s.offset:s.offset + s.size].reshape(s.shape)
            if v is not None:
                tan = v[s.offset:s.offset + s.size].reshape(s.shape)
        elif node.op == INPUT:
            val = batch.inputs
        elif node.op == LABELS:
            val = batch.labels
        else:
            val = node.op.forward(ctx, *[vals[i] for i in node.inputs])
            _check_finite(val, node)
            if v is not None:
                tan = node.op.jvp(ctx, *[tans[i] for i in node.inputs])
        vals.append(val)
        ctxs.append(ctx)
        tans.append(tan)
    return vals, ctxs, tans


def _backward(graph, vals, ctxs, tans=None):
    needs = graph._needs_grad()
    n = len(graph.nodes)
    adj = [None] * n
    radj = [None] * n
    adj[graph.output] = np.float64(1.0)
    radj[graph.output] = np.float64(0.0)
    grad = np.zeros(graph.n_params)
    hv = np.zeros(graph.n_params) if tans is not None else None
    for i in range(n - 1, -1, -1):
        node = graph.nodes[i]
        if adj[i] is None:
            continue
        if node.op == PARAM:
            s = node.slot
            grad[s.offset:s.offset + s.size] += np.reshape(adj[i], -1)
            if hv is not None:
                hv[s.offset:s.offset + s.size] += np.reshape(radj[i], -1)
            continue
        if node.op in (INPUT, LABELS):
            continue
        in_needs = tuple(needs[j] for j in node.inputs)
        gxs = node.op.vjp(ctxs[i], adj[i], in_needs)
        rgxs = None
        if tans is not None:
            rgxs = node.op.rvjp(ctxs[i], adj[i], radj[i], tuple(tans[j] for j in node.inputs), in_needs)
        for k, j in enumerate(node.inputs):
            if not in_needs[k]:
                continue
            adj[j] = _add(adj[j], gxs[k])
            if rgxs is not None:
                radj[j] = _add(radj[j], rgxs[k])
    return grad, hv


def forward_eval(graph, params, batch):
    """Mean loss of ``graph`` at ``params`` on ``batch``."""
    vals, _, _ = _forward(graph, params, batch)
    return float(vals[graph.output])


def loss_and_grad(graph, params, batch):
    vals, ctxs, _ = _forward(graph, params, batch)
    g, _ = _backward(graph, vals, ctxs)
    _check_grad(g, "gradient")
    return float(vals[graph.output]), g


def grad(graph, params, batch):
    """Exact reverse-mode gradient of the mean batch loss."""
    return loss_and_grad(graph, params, batch)[1]


def hvp(graph, params, batch, v):
    """Hessian-vector product ``H @ v`` by forward-over-reverse propagation."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (graph.n_params,):
        raise ValueError(f"expected tangent of length {graph.n_params}, got {v.shape}")
    vals, ctxs, tans = _forward(graph, params, batch, v)
    _, hv = _backward(graph, vals, ctxs, tans)
    _check_grad(hv, "Hessian-vector product")
    return hv


def _check_grad(g, what):
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericalError(f"non-finite {what} component at index {bad}", node=what)
