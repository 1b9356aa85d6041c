"""Update rules: SGD (heavy-ball momentum), Nudged-SGD, subspace-restricted
SGD variants, a damped Newton step for explicit quadratics, and learning-rate
schedules."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError, SingularityError, StateError

log = logging.getLogger(__name__)

VARIANTS = ("sgd", "nsgd", "sgd_top", "sgd_constant_top", "sgd_no_top")


@dataclass
class OptimizerConfig:
    eta: float = 0.01
    batch_size: int = 128
    mu: float = 0.0
    gamma: float = 1.0
    k_top: int = 0
    variant: str = "sgd"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown optimizer variant {self.variant!r}")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if not 0 <= self.mu < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.variant.startswith("sgd_"):
            self.k_top = 1
        if self.variant != "sgd" and self.k_top < 1:
            raise ConfigError(f"variant {self.variant!r} needs k_top >= 1")

    @property
    def needs_basis(self):
        return self.variant != "sgd"


@dataclass
class OptimizerState:
    velocity: np.ndarray = None
    basis: np.ndarray = None  # (K, D), orthonormal rows
    basis_step: int = -1
    frozen_e1: np.ndarray = None
    short_basis_warned: bool = False

    def set_basis(self, vectors, step):
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        gram = vectors @ vectors.T
        if not np.allclose(gram, np.eye(len(vectors)), rtol=0, atol=1e-6):
            raise StateError("basis vectors are not orthonormal")
        self.basis = vectors
        self.basis_step = step
        self.short_basis_warned = False
        if self.frozen_e1 is None:
            self.frozen_e1 = vectors[0].copy()


def _apply(params, direction, cfg, state):
    """theta <- theta - eta * direction, or the heavy-ball version of it."""
    if cfg.mu == 0:
        new = params - cfg.eta * direction
    else:
        if state.velocity is None:
            state.velocity = np.zeros_like(params)
        state.velocity = cfg.mu * state.velocity - cfg.eta * direction
        new = params + state.velocity
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite parameters after update", node="update")
    return new


def _basis(state, k):
    if state.basis is None or len(state.basis) == 0:
        raise StateError("optimizer needs an eigenvector basis; none has been set")
    if len(state.basis) < k and not state.short_basis_warned:
        state.short_basis_warned = True
        log.warning("using %d of %d requested eigenvectors", len(state.basis), k)
    return state.basis[:k]


def sgd_step(params, g, cfg, state):
    return _apply(params, g, cfg, state)


def nsgd_step(params, g, cfg, state):
    """Learning rate gamma*eta inside span(e_1..e_K), eta outside.

    Written as eta * (g + (gamma - 1) g_top) so that gamma == 1 reproduces
    plain SGD bit for bit. Momentum acts on the combined direction.
    """
    e = _basis(state, cfg.k_top)
    g_top = e.T @ (e @ g)
    return _apply(params, g + (cfg.gamma - 1.0) * g_top, cfg, state)


def variant_step(params, g, cfg, state):
    if cfg.variant == "sgd_constant_top":
        if state.frozen_e1 is None:
            raise StateError("sgd_constant_top needs the initial top eigenvector")
        e1 = state.frozen_e1
        return _apply(params, (g @ e1) * e1, cfg, state)
    e1 = _basis(state, 1)[0]
    proj = (g @ e1) * e1
    if cfg.variant == "sgd_top":
        return _apply(params, proj, cfg, state)
    if cfg.variant == "sgd_no_top":
        return _apply(params, g - proj, cfg, state)
    raise ConfigError(f"{cfg.variant!r} is not a projection variant")


def step(params, g, cfg, state):
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "sgd":
        return sgd_step(params, g, cfg, state)
    if cfg.variant == "nsgd":
        return nsgd_step(params, g, cfg, state)
    return variant_step(params, g, cfg, state)


def newton_step(params, g, h, eta, lambda_damp=0.0):
    """theta - eta (H + lambda I)^{-1} g for an explicit H (matrix or diagonal)."""
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if h.ndim == 1:
        d = h + lambda_damp
        if np.any(d == 0):
            raise SingularityError("H + lambda I is singular", node="newton")
        return params - eta * (g / d)
    m = h + lambda_damp * np.eye(len(h))
    try:
        if np.linalg.cond(m) > 1e15:
            raise np.linalg.LinAlgError
        return params - eta * np.linalg.solve(m, g)
    except np.linalg.LinAlgError:
        raise SingularityError("H + lambda I is singular", node="newton") from None


@dataclass
class LrSchedule:
    kind: str = "constant"
    eta: float = 0.01
    patience: int = 100
    factor: float = 10.0
    stage_length: int = 10
    stage_etas: tuple = (0.1, 0.01)

    def __post_init__(self):
        if self.kind not in ("constant", "plateau", "staged"):
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if not self.factor > 1:
            raise ConfigError("decay factor must exceed 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")


def schedule_lr(sched, val_losses, epoch):
    """Learning rate for ``epoch`` given validation losses of earlier epochs.

    plateau: replay the history; whenever the best-so-far loss has not
    strictly improved for ``patience`` consecutive epochs, divide by
    ``factor`` and reset the counter.
    """
    if sched.kind == "constant":
        return sched.eta
    if sched.kind == "staged":
        return sched.stage_etas[0] if epoch < sched.stage_length else sched.stage_etas[1]
    eta = sched.eta
    best = np.inf
    bad = 0
    for v in list(val_losses)[:epoch]:
        if v < best:
            best = v
            bad = 0
        else:
            bad += 1
            if bad >= sched.patience:
                eta /= sched.factor
                bad = 0
    return eta
