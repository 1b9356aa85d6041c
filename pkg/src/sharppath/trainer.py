"""Training loop that records the top of the Hessian spectrum along the SGD
trajectory, runs probes, and summarizes a run."""
import copy
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import models, optim, probes, spectral
from .data import AugmentConfig, Dataset, augment, batch_iter, random_subsample
from .errors import ConfigError, NumericalError
from .rng import make_rng

log = logging.getLogger(__name__)

CADENCES = ("per_epoch", "per_iteration", "off")


@dataclass
class ExperimentConfig:
    model: models.ModelSpec
    optimizer: optim.OptimizerConfig
    train: Dataset = None
    val: Dataset = None
    test: Dataset = None
    schedule: optim.LrSchedule = None
    epochs: int = 1
    max_steps: int = None
    spectrum_cadence: str = "per_epoch"
    per_iteration_steps: int = 400
    k_track: int = 10
    lanczos_max_iters: int = None
    lanczos_tol: float = 1e-6
    hessian_fraction: float = 0.05
    hessian_seed: int = None
    alignment_m: int = 5
    probe: probes.ProbeConfig = None
    probe_steps: tuple = ()
    augment: AugmentConfig = None
    shuffle: bool = True
    seed: int = 0
    init: np.ndarray = None
    val_checkpoint_epoch: int = 50
    divergence_threshold: float = 1e6
    eval_chunk: int = 1024
    name: str = ""

    def __post_init__(self):
        if self.spectrum_cadence not in CADENCES:
            raise ConfigError(f"unknown spectrum cadence {self.spectrum_cadence!r}")
        if self.schedule is None:
            self.schedule = optim.LrSchedule("constant", self.optimizer.eta)
        if self.optimizer.needs_basis and self.k_track < self.optimizer.k_top:
            raise ConfigError("k_track must cover the optimizer's k_top")
        if self.optimizer.needs_basis and self.spectrum_cadence == "off":
            raise ConfigError(f"variant {self.optimizer.variant!r} needs spectrum estimates")
        if self.model.kind != "quadratic" and self.train is None:
            raise ConfigError("a training set is required")
        if self.epochs < 0 or self.per_iteration_steps < 0:
            raise ConfigError("budgets must be nonnegative")

    def describe(self):
        """JSON-friendly echo of the configuration (datasets by size and meta)."""
        spec = self.model
        out = {
            "name": self.name,
            "model": {
                "kind": spec.kind, "input_shape": list(spec.input_shape), "classes": spec.classes,
                "conv_filters": list(spec.conv_filters), "dense": list(spec.dense),
                "l2_coefficient": spec.l2_coefficient, "n_params": spec.n_params,
            },
            "optimizer": dataclasses.asdict(self.optimizer),
            "schedule": dataclasses.asdict(self.schedule),
        }
        if spec.kind == "quadratic":
            out["model"]["quad_a"] = spec.quad_a.tolist()
        for split in ("train", "val", "test"):
            ds = getattr(self, split)
            out[split] = None if ds is None else {"n": len(ds), **{k: v for k, v in ds.meta.items()}}
        for key in ("epochs", "max_steps", "spectrum_cadence", "per_iteration_steps", "k_track",
                    "lanczos_max_iters", "lanczos_tol", "hessian_fraction", "hessian_seed", "alignment_m",
                    "shuffle", "seed", "val_checkpoint_epoch", "divergence_threshold"):
            out[key] = getattr(self, key)
        out["probe"] = None if self.probe is None else dataclasses.asdict(self.probe)
        out["probe_steps"] = [int(s) for s in self.probe_steps]
        out["augment"] = None if self.augment is None else dataclasses.asdict(self.augment)
        return out


@dataclass
class CurvatureRecord:
    t: int
    epoch: int
    loss: float
    lr: float
    lambdas: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    frob_trunc: float = None
    alignment: float = None
    dist_from_init: float = 0.0
    train_acc: float = None
    val_acc: float = None
    test_acc: float = None
    val_loss: float = None
    boundary: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainingLog:
    config: dict
    records: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    diverged: bool = False
    divergence: str = None
    summary: dict = None
    wall_time: float = 0.0
    final_params: np.ndarray = None

    def boundary_records(self):
        return [r for r in self.records if r.boundary]

    def lambda_max_series(self):
        return [(r.t, r.lambdas[0]) for r in self.records if r.lambdas]

    def to_ndjson(self):
        """Deterministic newline-delimited JSON: config, records, probes, then
        the summary. Wall time is deliberately excluded."""
        lines = [json.dumps({"type": "config", **self.config}, sort_keys=True)]
        lines += [json.dumps({"type": "record", **r.to_dict()}, sort_keys=True) for r in self.records]
        lines += [json.dumps({"type": "probe", **json.loads(p.to_json())}, sort_keys=True) for p in self.probes]
        if self.diverged:
            lines.append(json.dumps({"type": "divergence", "reason": self.divergence}, sort_keys=True))
        lines.append(json.dumps({"type": "summary", **(self.summary or {})}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ndjson())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty log")
        out = cls(config={})
        names = {f.name for f in dataclasses.fields(CurvatureRecord)}
        for row in rows:
            kind = row.pop("type", None)
            if kind == "config":
                out.config = row
            elif kind == "record":
                out.records.append(CurvatureRecord(**{k: v for k, v in row.items() if k in names}))
            elif kind == "probe":
                out.probes.append(probes.ProbeResult.from_json(json.dumps(row)))
            elif kind == "divergence":
                out.diverged, out.divergence = True, row["reason"]
            elif kind == "summary":
                out.summary = row
        return out


def _lanczos_cfg(cfg, k, t):
    seed = int(make_rng(cfg.seed, "lanczos", t).integers(2**62))
    return spectral.LanczosConfig(k=k, max_iters=cfg.lanczos_max_iters, tol=cfg.lanczos_tol, seed=seed)


def track_spectrum(cfg, params, theta0, subsample, t, epoch, lr, g=None, batch_loss=None, boundary=False,
                   estimate=None):
    """Spectrum estimate plus the curvature record at ``params``.

    Returns (record, estimate). A precomputed ``estimate`` is reused.
    """
    spec = cfg.model
    if estimate is None and cfg.spectrum_cadence != "off":
        k = min(cfg.k_track, spec.n_params)
        estimate = spectral.estimate_spectrum(spec, params, subsample, _lanczos_cfg(cfg, k, t), step=t,
                                              subsample_seed=cfg.hessian_seed)
    rec = CurvatureRecord(t=t, epoch=epoch, loss=batch_loss, lr=lr, boundary=boundary,
                          dist_from_init=float(np.linalg.norm(params - theta0)))
    if estimate is not None:
        rec.lambdas = [float(x) for x in estimate.lambdas]
        rec.residuals = [float(x) for x in estimate.residuals]
        rec.frob_trunc = spectral.frobenius_trunc(estimate)
        if g is not None and np.any(g):
            m = min(cfg.alignment_m, estimate.k)
            rec.alignment = spectral.alignment(g, estimate, m)
    if boundary:
        _fill_eval(cfg, params, rec)
    return rec, estimate


def _fill_eval(cfg, params, rec):
    spec = cfg.model
    if spec.kind == "quadratic":
        rec.loss = models.loss(spec, params, None)
        return
    rec.loss, rec.train_acc = models.dataset_metrics(spec, params, cfg.train, cfg.eval_chunk)
    if cfg.val is not None:
        rec.val_loss, rec.val_acc = models.dataset_metrics(spec, params, cfg.val, cfg.eval_chunk)
    if cfg.test is not None:
        rec.test_acc = models.accuracy(spec, params, cfg.test, cfg.eval_chunk)


def _batches(cfg, epoch):
    if cfg.model.kind == "quadratic" and cfg.train is None:
        yield None
        return
    yield from batch_iter(cfg.train, cfg.optimizer.batch_size, cfg.seed, cfg.shuffle, epoch)


def _steps_per_epoch(cfg):
    if cfg.train is None:
        return 1
    return -(-len(cfg.train) // cfg.optimizer.batch_size)


def run_experiment(cfg):
    """Train one seed; returns the :class:`TrainingLog`.

    Numerical failures end the run early with ``diverged`` set; the partial
    log is kept.
    """
    start = time.perf_counter()
    spec = cfg.model
    theta0 = (np.array(cfg.init, dtype=np.float64) if cfg.init is not None
              else models.init_params(spec, make_rng(cfg.seed, "init")))
    theta = theta0.copy()
    hseed = cfg.seed if cfg.hessian_seed is None else cfg.hessian_seed
    if cfg.train is None:
        subsample = None
    else:
        subsample = random_subsample(cfg.train, cfg.hessian_fraction, make_rng(hseed, "subsample")).as_batch()
    opt_cfg = copy.deepcopy(cfg.optimizer)
    state = optim.OptimizerState()
    out = TrainingLog(config=cfg.describe())
    probe_at = set(int(s) for s in cfg.probe_steps)
    val_losses = []
    t = 0
    total = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * _steps_per_epoch(cfg)

    def boundary_update(epoch):
        lr = optim.schedule_lr(cfg.schedule, val_losses, epoch)
        opt_cfg.eta = lr
        return lr

    try:
        epoch = 0
        lr = boundary_update(0)
        while epoch < cfg.epochs and t < total:
            batches = _batches(cfg, epoch)
            first = True
            for batch in batches:
                if t >= total:
                    break
                if cfg.augment is not None and batch is not None:
                    batch = augment(batch, cfg.augment, make_rng(cfg.seed, "augment", t))
                loss, g = models.loss_grad(spec, theta, batch)
                _check_divergence(cfg, loss, t)
                want_iter = cfg.spectrum_cadence == "per_iteration" and t < cfg.per_iteration_steps
                want_boundary = first and cfg.spectrum_cadence != "off"
                est = None
                if first or want_iter:
                    rec, est = track_spectrum(cfg, theta, theta0, subsample, t, epoch, lr, g, loss,
                                              boundary=first)
                    out.records.append(rec)
                    if est is not None and opt_cfg.needs_basis:
                        if want_boundary or opt_cfg.variant != "nsgd":
                            _refresh_basis(state, est, opt_cfg, t)
                if t in probe_at and cfg.probe is not None:
                    out.probes.append(_probe(cfg, theta, subsample, est, t, lr))
                theta = optim.step(theta, g, opt_cfg, state)
                t += 1
                first = False
            if cfg.schedule.kind == "plateau":
                if cfg.val is not None:
                    val_losses.append(models.dataset_loss(spec, theta, cfg.val, cfg.eval_chunk))
                else:
                    val_losses.append(_full_loss(cfg, theta))
            epoch += 1
            lr = boundary_update(epoch)
        # closing record at the state reached after the last step
        g = None
        if spec.kind == "quadratic" and cfg.train is None:
            g = models.loss_grad(spec, theta, None)[1]
        else:
            first_batch = next(iter(batch_iter(cfg.train, opt_cfg.batch_size, cfg.seed, cfg.shuffle, epoch)))
            _, g = models.loss_grad(spec, theta, first_batch)
        rec, _ = track_spectrum(cfg, theta, theta0, subsample, t, epoch, lr, g, boundary=True)
        if rec.loss is not None:
            _check_divergence(cfg, rec.loss, t)
        out.records.append(rec)
    except NumericalError as exc:
        out.diverged = True
        out.divergence = f"step {t}: {exc}"
        log.warning("run diverged at step %d: %s", t, exc)
    out.final_params = theta
    out.summary = summarize(out, cfg.val_checkpoint_epoch)
    out.wall_time = time.perf_counter() - start
    return out


def _full_loss(cfg, theta):
    if cfg.train is None:
        return models.loss(cfg.model, theta, None)
    return models.dataset_loss(cfg.model, theta, cfg.train, cfg.eval_chunk)


def _check_divergence(cfg, loss, t):
    if not np.isfinite(loss) or loss > cfg.divergence_threshold:
        raise NumericalError(f"loss {loss!r} exceeds divergence threshold at step {t}", node="loss")


def _refresh_basis(state, est, opt_cfg, t):
    conv = est.converged_subset()
    if conv.k < opt_cfg.k_top:
        log.warning("only %d of %d eigenpairs converged at step %d", conv.k, opt_cfg.k_top, t)
    use = conv if conv.k > 0 else est
    state.set_basis(use.vectors[:opt_cfg.k_top], t)


def _probe(cfg, theta, subsample, est, t, lr):
    pc = cfg.probe
    if est is None or est.k < pc.eig_index:
        k = max(pc.eig_index, min(cfg.k_track, cfg.model.n_params))
        est = spectral.estimate_spectrum(cfg.model, theta, subsample, _lanczos_cfg(cfg, k, t), step=t)
    if est.k < pc.eig_index:
        raise ConfigError(f"eig_index {pc.eig_index} exceeds the {est.k} available eigenpairs")
    pcfg = dataclasses.replace(pc, eta=lr)
    return probes.run_probe(cfg.model, theta, est.vectors[pc.eig_index - 1], pcfg, cfg.train, subsample, step=t)


def summarize(log_, val_checkpoint_epoch=50):
    """Table-style summary recomputed from the boundary records."""
    rows = log_.boundary_records()
    if not rows:
        return {"n_records": len(log_.records), "diverged": log_.diverged}

    def score(r):
        if r.val_acc is not None:
            return r.val_acc
        if r.train_acc is not None:
            return r.train_acc
        return -r.loss

    best = max(range(len(rows)), key=lambda i: (score(rows[i]), -i))
    b, last = rows[best], rows[-1]
    at_ckpt = next((r for r in rows if r.epoch == val_checkpoint_epoch), None)
    return {
        "best_epoch": b.epoch,
        "test_acc_at_best": b.test_acc,
        "val_acc_at_best": b.val_acc,
        "val_acc_checkpoint": None if at_ckpt is None else at_ckpt.val_acc,
        "val_checkpoint_epoch": val_checkpoint_epoch,
        "frob_at_best": b.frob_trunc,
        "frob_final": last.frob_trunc,
        "lambda_max_peak": max((r.lambdas[0] for r in log_.records if r.lambdas), default=None),
        "final_loss": last.loss,
        "final_train_acc": last.train_acc,
        "dist_at_best": b.dist_from_init,
        "n_records": len(log_.records),
        "diverged": log_.diverged,
    }
