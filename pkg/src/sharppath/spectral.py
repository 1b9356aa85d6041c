"""Top-K Hessian eigenpairs by matrix-free Lanczos, and the curvature
statistics derived from them."""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import models
from .errors import AlignmentUndefined, ConfigError
from .rng import make_rng

log = logging.getLogger(__name__)


@dataclass
class LanczosConfig:
    k: int = 10
    max_iters: int = None
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters is None:
            self.max_iters = max(4 * self.k, self.k + 20)
        if self.k < 1 or self.max_iters < self.k:
            raise ConfigError("need 1 <= k <= max_iters")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass
class EigenEstimate:
    """Ritz pairs ordered by decreasing |lambda|.

    ``vectors`` has shape (k, D); ``residuals[i]`` is ||H e_i - lambda_i e_i||
    measured when the estimate was built.
    """

    lambdas: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    breakdown: bool = False
    iterations: int = 0
    step: int = 0
    subsample_seed: int = None
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.lambdas)

    def converged_subset(self):
        keep = np.flatnonzero(self.converged)
        return EigenEstimate(self.lambdas[keep], self.vectors[keep], self.residuals[keep],
                             self.converged[keep], self.breakdown, self.iterations, self.step,
                             self.subsample_seed, dict(self.meta))

    def to_json(self):
        return json.dumps({
            "step": int(self.step),
            "lambdas": [float(x) for x in self.lambdas],
            "residuals": [float(x) for x in self.residuals],
            "subsample_seed": self.subsample_seed,
        })

    @classmethod
    def from_json(cls, text, vectors=None):
        obj = json.loads(text)
        lam = np.array(obj["lambdas"], dtype=np.float64)
        vec = np.zeros((len(lam), 0)) if vectors is None else np.asarray(vectors, dtype=np.float64)
        return cls(lam, vec, np.array(obj["residuals"], dtype=np.float64), np.ones(len(lam), dtype=bool),
                   step=obj["step"], subsample_seed=obj["subsample_seed"])


def _orthogonalize(w, basis, m):
    # two passes of classical Gram-Schmidt against every stored vector
    for _ in range(2):
        w = w - basis[:m].T @ (basis[:m] @ w)
    return w


def lanczos_topk(apply_h, d, cfg):
    """Top-``cfg.k`` eigenpairs (by |lambda|) of the symmetric operator
    ``apply_h`` on R^d, with full reorthogonalization.

    On an exact invariant subspace (beta ~ 0) the iteration restarts from a
    fresh random vector orthogonal to the basis, so repeated eigenvalues are
    found with their multiplicity. ``breakdown`` is set only when the whole
    space is exhausted before k pairs are available.
    """
    k = cfg.k
    if k > d:
        raise ConfigError(f"requested {k} eigenpairs of a {d}-dimensional operator")
    m_max = min(cfg.max_iters, d)
    rng = make_rng(cfg.seed, "lanczos")
    basis = np.zeros((m_max + 1, d))
    images = np.zeros((m_max, d))
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    q = rng.standard_normal(d)
    q /= np.linalg.norm(q)
    basis[0] = q
    scale = 0.0
    breakdown = False
    m = 0
    while m < m_max:
        hq = np.asarray(apply_h(basis[m]), dtype=np.float64)
        images[m] = hq
        alpha[m] = basis[m] @ hq
        w = hq - alpha[m] * basis[m]
        if m > 0:
            w -= beta[m - 1] * basis[m - 1]
        w = _orthogonalize(w, basis, m + 1)
        b = np.linalg.norm(w)
        m += 1
        scale = max(scale, abs(alpha[m - 1]), b)
        invariant = b <= 1e-12 * max(scale, 1e-300)
        if m == m_max:
            break
        if invariant:
            # Ritz values of an exhausted block look converged but need not be
            # the global top-k; restart from a fresh direction instead of
            # testing convergence here
            if m == d:
                breakdown = True
                break
            for _ in range(5):
                w = _orthogonalize(rng.standard_normal(d), basis, m)
                b = np.linalg.norm(w)
                if b > 1e-8:
                    break
            else:
                breakdown = True
                break
            beta[m - 1] = 0.0
            basis[m] = w / b
            continue
        if m >= k:
            theta, s = eigh_tridiagonal(alpha[:m], beta[:m - 1])
            top = np.argsort(-np.abs(theta), kind="stable")[:k]
            est = np.abs(b * s[-1, top])
            if np.all(est <= cfg.tol * np.maximum(1.0, np.abs(theta[top]))):
                break
        beta[m - 1] = b
        basis[m] = w / b
    if m < k:
        breakdown = True
    theta, s = eigh_tridiagonal(alpha[:m], beta[:m - 1])
    top = np.argsort(-np.abs(theta), kind="stable")[:k]
    lam = theta[top]
    vecs = s[:, top].T @ basis[:m]
    hvecs = s[:, top].T @ images[:m]
    norms = np.linalg.norm(vecs, axis=1)
    vecs /= norms[:, None]
    hvecs /= norms[:, None]
    # sign convention: largest-magnitude component positive
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(lam)), pivot])
    signs[signs == 0] = 1.0
    vecs *= signs[:, None]
    hvecs *= signs[:, None]
    res = np.linalg.norm(hvecs - lam[:, None] * vecs, axis=1)
    conv = res <= cfg.tol * np.maximum(1.0, np.abs(lam))
    if not conv.all():
        log.info("lanczos: %d of %d pairs unconverged after %d iterations", int((~conv).sum()), len(lam), m)
    return EigenEstimate(lam, vecs, res, conv, breakdown, m)


def hessian_operator(spec, params, batch):
    params = np.array(params, dtype=np.float64)
    return lambda v: models.hvp(spec, params, batch, v)


def estimate_spectrum(spec, params, subsample, cfg, step=0, subsample_seed=None):
    """Lanczos on the Hessian of the (regularized) loss over ``subsample``."""
    est = lanczos_topk(hessian_operator(spec, params, subsample), spec.n_params, cfg)
    est.step = step
    est.subsample_seed = subsample_seed
    return est


def frobenius_trunc(est):
    """sqrt(sum lambda_i^2) over the stored eigenvalues."""
    lam = np.asarray(est.lambdas if isinstance(est, EigenEstimate) else est, dtype=np.float64)
    return float(np.sqrt(np.sum(lam * lam)))


def alignment(g, est, m=5):
    """Mean |cos(g, e_i)| over the top ``m`` eigenvectors."""
    g = np.asarray(g, dtype=np.float64)
    if m > est.k:
        raise ConfigError(f"alignment over {m} vectors, only {est.k} available")
    gn = np.linalg.norm(g)
    if gn == 0:
        raise AlignmentUndefined("alignment with a zero gradient is undefined")
    return float(np.mean(np.abs(est.vectors[:m] @ g)) / gn)


def random_alignment_baseline(d):
    """sqrt(2 / (pi d)): E|cos| between a random direction and a fixed one,
    to leading order in d."""
    return float(np.sqrt(2.0 / (np.pi * d)))
