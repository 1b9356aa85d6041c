import numpy as np
import pytest

from sharppath import autodiff as ad
from sharppath import models
from sharppath.rng import make_rng

# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fd_grad(f, theta, h=1e-5, coords=None):
    """Central differences of a scalar function, on all or selected coordinates."""
    coords = range(theta.size) if coords is None else coords
    out = np.zeros(len(coords))
    for n, i in enumerate(coords):
        e = np.zeros_like(theta)
        e[i] = h
        out[n] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def fd_hvp(grad_fn, theta, v, h=1e-4):
    return (grad_fn(theta + h * v) - grad_fn(theta - h * v)) / (2 * h)


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


def unit(v):
    return v / np.linalg.norm(v)


def micro_cnn_graph(c_in=2, filters=3, hw=4, classes=3):
    """conv3x3 -> relu -> maxpool -> flatten -> dense -> cross-entropy."""
    g = ad.Graph()
    x = g.input()
    y = g.labels()
    w = g.param("conv.w", (3, 3, c_in, filters))
    b = g.param("conv.b", (filters,), kind="bias")
    h = g.add(ad.MaxPool2(), g.add(ad.ReLU(), g.add(ad.Conv2d(), x, w, b)))
    h = g.add(ad.Flatten(), h)
    flat = (hw // 2) * (hw // 2) * filters
    w2 = g.param("dense.w", (flat, classes))
    b2 = g.param("dense.b", (classes,), kind="bias")
    z = g.add(ad.Dense(), h, w2, b2)
    return g.set_output(g.add(ad.SoftmaxCrossEntropy(), z, y))


@pytest.fixture
def micro_cnn():
    g = micro_cnn_graph()
    rng = np.random.default_rng(3)
    theta = rng.normal(0, 0.5, g.n_params)
    batch = models.Batch(rng.random((5, 4, 4, 2)), rng.integers(0, 3, 5))
    return g, theta, batch


@pytest.fixture
def mlp_2_8_2():
    spec = models.build_mlp(2, (8,), 2)
    theta = models.init_params(spec, make_rng(0, "init"))
    rng = np.random.default_rng(1)
    batch = models.Batch(rng.normal(size=(16, 2)), rng.integers(0, 2, 16))
    return spec, theta, batch
