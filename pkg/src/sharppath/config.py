"""TOML experiment files -> :class:`~sharppath.trainer.ExperimentConfig`.

Every table accepts only the keys listed in ``SCHEMA``; anything else is a
:class:`ConfigError`, so a typo in a sweep never silently falls back to a
default. See ``docs/config.md`` for the full reference.
"""
import copy
import itertools
import os
from pathlib import Path

import numpy as np
try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data, models, optim, probes, trainer
from .errors import ConfigError

SCHEMA = {
    "": {"name", "seed", "model", "data", "optimizer", "schedule", "train", "probe", "augment", "sweep"},
    "model": {"kind", "input_shape", "classes", "filters", "dense", "hidden", "l2_coefficient", "a", "b", "start"},
    "data": {"kind", "paths", "images", "labels", "n", "classes", "dim", "separation", "noise", "brightness",
             "shift", "shape", "seed", "first_n", "val", "test", "test_paths", "test_images", "test_labels"},
    "optimizer": {"eta", "batch_size", "momentum", "gamma", "k_top", "variant"},
    "schedule": {"kind", "patience", "factor", "stage_length", "stage_etas"},
    "train": {"epochs", "max_steps", "spectrum_cadence", "per_iteration_steps", "k_track", "lanczos_max_iters",
              "lanczos_tol", "hessian_fraction", "hessian_seed", "alignment_m", "probe_steps", "shuffle",
              "val_checkpoint_epoch", "divergence_threshold"},
    "probe": {"alphas", "n_batches", "batch_size", "k_range", "eig_index", "seed"},
    "augment": {"pad", "random_crop", "hflip"},
    "sweep": {"eta", "batch_size", "gamma", "k_top", "variant", "schedule", "momentum"},
}
SWEEP_TARGET = {"eta": ("optimizer", "eta"), "batch_size": ("optimizer", "batch_size"),
                "gamma": ("optimizer", "gamma"), "k_top": ("optimizer", "k_top"),
                "variant": ("optimizer", "variant"), "momentum": ("optimizer", "momentum"),
                "schedule": ("schedule", "kind")}


def load(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    validate(raw)
    raw.setdefault("_base_dir", str(path.parent.resolve()))
    return raw


def validate(raw):
    extra = set(raw) - SCHEMA[""] - {"_base_dir"}
    if extra:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(extra))}")
    for table, allowed in SCHEMA.items():
        if not table or table not in raw:
            continue
        if not isinstance(raw[table], dict):
            raise ConfigError(f"[{table}] must be a table")
        extra = set(raw[table]) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{table}]: {', '.join(sorted(extra))}")
    for key, values in raw.get("sweep", {}).items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {key!r} must be a nonempty list")


def grid(raw):
    """[(point, config-with-point-applied)] over the sweep axes, in file order."""
    sweep = raw.get("sweep", {})
    axes = list(sweep)
    out = []
    for values in itertools.product(*[sweep[a] for a in axes]):
        point = dict(zip(axes, values))
        cfg = copy.deepcopy({k: v for k, v in raw.items() if k != "sweep"})
        for axis, value in point.items():
            table, key = SWEEP_TARGET[axis]
            cfg.setdefault(table, {})[key] = value
        out.append((point, cfg))
    return out


def data_root(raw):
    return Path(os.environ.get("SHARPPATH_DATA") or raw.get("_base_dir", "."))


def _resolve(raw, p):
    p = Path(p)
    full = p if p.is_absolute() else data_root(raw) / p
    if not full.exists():
        raise ConfigError(f"dataset file not found: {full}")
    return full


def build_model(raw):
    m = raw.get("model", {})
    kind = m.get("kind", "simple_cnn")
    l2 = m.get("l2_coefficient", 0.0)
    if kind == "simple_cnn":
        return models.build_simple_cnn(m.get("input_shape", (32, 32, 3)), m.get("classes", 10),
                                       tuple(m.get("filters", (32, 32, 64, 64))), m.get("dense", 128), l2)
    if kind == "mlp":
        return models.build_mlp(m.get("input_shape", 784), tuple(m.get("hidden", (128,))), m.get("classes", 10), l2)
    if kind == "quadratic":
        if "a" not in m:
            raise ConfigError("quadratic model needs [model].a")
        return models.build_quadratic(m["a"], m.get("b"), m.get("start"))
    raise ConfigError(f"unknown model kind {kind!r}")


def build_data(raw):
    """(train, val, test) datasets; any may be None."""
    d = raw.get("data", {})
    kind = d.get("kind", "none")
    seed = d.get("seed", 0)
    test = None
    if kind == "none":
        return None, None, None
    if kind == "synth_images":
        shape = tuple(d.get("shape", (16, 16, 3)))
        kw = dict(noise=d.get("noise", 0.1), brightness=d.get("brightness", 0.5), shift=d.get("shift", 2))
        n_test = d.get("test", 0)
        full = data.synth_images(d.get("classes", 10), d.get("n", 2000) + n_test, shape, seed=seed, **kw)
        train = full.take(np.arange(d.get("n", 2000)))
        if n_test:
            test = full.take(np.arange(d.get("n", 2000), len(full)), "test")
    elif kind == "synth_gaussian":
        n_test = d.get("test", 0)
        full = data.synth_gaussian(d.get("classes", 10), d.get("n", 1000) + n_test, d.get("dim", 20),
                                   d.get("separation", 3.0), seed)
        train = full.take(np.arange(d.get("n", 1000)))
        if n_test:
            test = full.take(np.arange(d.get("n", 1000), len(full)), "test")
    elif kind == "cifar10":
        if "paths" not in d:
            raise ConfigError("[data] kind='cifar10' needs paths")
        train = data.load_cifar10_bin([_resolve(raw, p) for p in d["paths"]])
        if "test_paths" in d:
            test = data.load_cifar10_bin([_resolve(raw, p) for p in d["test_paths"]])
    elif kind == "idx":
        if "images" not in d or "labels" not in d:
            raise ConfigError("[data] kind='idx' needs images and labels")
        train = data.load_idx(_resolve(raw, d["images"]), _resolve(raw, d["labels"]))
        if "test_images" in d:
            test = data.load_idx(_resolve(raw, d["test_images"]), _resolve(raw, d["test_labels"]))
    else:
        raise ConfigError(f"unknown data kind {kind!r}")
    if "first_n" in d:
        train = data.subsample_first_n(train, d["first_n"])
    val = None
    if d.get("val", 0):
        train, val = data.split_validation(train, d["val"])
    return train, val, test


def build_experiment(raw, seed=None, name=None):
    seed = raw.get("seed", 0) if seed is None else seed
    spec = build_model(raw)
    train, val, test = build_data(raw)
    o = raw.get("optimizer", {})
    ocfg = optim.OptimizerConfig(eta=o.get("eta", 0.01), batch_size=o.get("batch_size", 128),
                                 mu=o.get("momentum", 0.0), gamma=o.get("gamma", 1.0), k_top=o.get("k_top", 0),
                                 variant=o.get("variant", "sgd"))
    s = raw.get("schedule", {})
    sched = optim.LrSchedule(s.get("kind", "constant"), ocfg.eta, s.get("patience", 100), s.get("factor", 10.0),
                             s.get("stage_length", 10), tuple(s.get("stage_etas", (0.1, 0.01))))
    t = raw.get("train", {})
    pcfg = None
    if "probe" in raw:
        p = raw["probe"]
        pcfg = probes.ProbeConfig(eta=ocfg.eta, alphas=tuple(p.get("alphas", probes.DEFAULT_ALPHAS)),
                                  n_batches=p.get("n_batches", 10), batch_size=p.get("batch_size", ocfg.batch_size),
                                  k_range=tuple(p.get("k_range", np.linspace(-5, 5, 21).tolist())),
                                  eig_index=p.get("eig_index", 1), seed=p.get("seed", seed))
    aug = None
    if "augment" in raw:
        a = raw["augment"]
        aug = data.AugmentConfig(a.get("pad", 4), a.get("random_crop", True), a.get("hflip", True), seed)
    return trainer.ExperimentConfig(
        model=spec, optimizer=ocfg, train=train, val=val, test=test, schedule=sched,
        epochs=t.get("epochs", 1), max_steps=t.get("max_steps"),
        spectrum_cadence=t.get("spectrum_cadence", "per_epoch"),
        per_iteration_steps=t.get("per_iteration_steps", 400), k_track=t.get("k_track", 10),
        lanczos_max_iters=t.get("lanczos_max_iters"), lanczos_tol=t.get("lanczos_tol", 1e-6),
        hessian_fraction=t.get("hessian_fraction", 0.05), hessian_seed=t.get("hessian_seed"),
        alignment_m=t.get("alignment_m", 5), probe=pcfg, probe_steps=tuple(t.get("probe_steps", ())),
        augment=aug, shuffle=t.get("shuffle", True), seed=seed,
        val_checkpoint_epoch=t.get("val_checkpoint_epoch", 50),
        divergence_threshold=t.get("divergence_threshold", 1e6),
        name=name if name is not None else raw.get("name", ""))
