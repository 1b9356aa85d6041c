"""Loss along a single Hessian eigenvector: the expected loss change of an
SGD step restricted to that direction, the expected length of such a step,
and a 1-D surface scan scaled by it."""
import json
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import batch_iter
from .rng import make_rng

DEFAULT_ALPHAS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class ProbeConfig:
    eta: float = 0.01
    alphas: tuple = DEFAULT_ALPHAS
    n_batches: int = 10
    batch_size: int = 128
    k_range: tuple = tuple(np.linspace(-5.0, 5.0, 21))
    eig_index: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_batches < 1:
            raise ValueError("n_batches must be at least 1")
        if len(self.alphas) == 0:
            raise ValueError("alphas must be nonempty")
        if self.eig_index < 1:
            raise ValueError("eig_index counts from 1")


@dataclass
class ProbeResult:
    deltas: dict
    step_norm: float
    scan: list
    base_loss: float
    eig_index: int = 1
    step: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "step": int(self.step),
            "eig_index": int(self.eig_index),
            "deltas": {repr(float(a)): float(d) for a, d in self.deltas.items()},
            "step_norm": float(self.step_norm),
            "scan": [[float(k), float(v)] for k, v in self.scan],
            "base_loss": float(self.base_loss),
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls({float(a): d for a, d in obj["deltas"].items()}, obj["step_norm"],
                   [tuple(r) for r in obj["scan"]], obj["base_loss"], obj["eig_index"], obj["step"])


def probe_batches(data, cfg, step=0):
    """``cfg.n_batches`` mini-batches drawn from ``data`` on the probe stream."""
    if data is None:
        return [None] * cfg.n_batches
    seed = int(make_rng(cfg.seed, "probe", step).integers(2**62))
    it = batch_iter(data, cfg.batch_size, seed, shuffle=True)
    out = []
    while len(out) < cfg.n_batches:
        for b in it:
            out.append(b)
            if len(out) == cfg.n_batches:
                break
        else:
            seed += 1
            it = batch_iter(data, cfg.batch_size, seed, shuffle=True)
    return out


def _eval_loss(spec, params, eval_set):
    if eval_set is None:
        return models.loss(spec, params, None)
    if isinstance(eval_set, models.Batch):
        return models.loss(spec, params, eval_set)
    return models.dataset_loss(spec, params, eval_set)


def _projections(spec, params, e, batches):
    return np.array([models.loss_grad(spec, params, b)[1] @ e for b in batches])


def loss_change_probe(spec, params, e, cfg, data=None, eval_set=None, batches=None):
    """alpha -> mean over mini-batches of L(theta - alpha eta <g,e> e) - L(theta).

    Losses are evaluated on ``eval_set`` (a Batch or Dataset; defaults to
    ``data``). ``batches`` overrides the mini-batches used for gradients.
    """
    e = np.asarray(e, dtype=np.float64)
    eval_set = data if eval_set is None else eval_set
    batches = probe_batches(data, cfg) if batches is None else batches
    proj = _projections(spec, params, e, batches)
    base = _eval_loss(spec, params, eval_set)
    deltas = {}
    for a in cfg.alphas:
        vals = [_eval_loss(spec, params - (a * cfg.eta * p) * e, eval_set) - base for p in proj]
        deltas[float(a)] = float(np.mean(vals))
    return deltas


def expected_step_norm(spec, params, e, cfg, data=None, batches=None):
    """eta * mean |<g, e>| over the probe mini-batches."""
    batches = probe_batches(data, cfg) if batches is None else batches
    return float(cfg.eta * np.mean(np.abs(_projections(spec, params, np.asarray(e, dtype=np.float64), batches))))


def surface_scan(spec, params, e, step_norm, k_range, eval_set=None):
    """[(k, L(theta + k * step_norm * e))] for each k."""
    e = np.asarray(e, dtype=np.float64)
    return [(float(k), _eval_loss(spec, params + (k * step_norm) * e, eval_set)) for k in k_range]


def run_probe(spec, params, e, cfg, data=None, eval_set=None, step=0):
    """All three diagnostics at one point, sharing the same mini-batches."""
    eval_set = data if eval_set is None else eval_set
    batches = probe_batches(data, cfg, step)
    deltas = loss_change_probe(spec, params, e, cfg, data, eval_set, batches)
    norm = expected_step_norm(spec, params, e, cfg, data, batches)
    scan = surface_scan(spec, params, e, norm, cfg.k_range, eval_set)
    return ProbeResult(deltas, norm, scan, _eval_loss(spec, params, eval_set), cfg.eig_index, step)
