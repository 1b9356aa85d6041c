"""Command-line front end: ``sharppath train|probe|spectrum|plot``.

Exit codes: 0 success (a diverged run is still a success once logged),
2 configuration or usage error, 3 I/O error or malformed data file,
4 numerical abort.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config, models, plotting, probes, spectral, trainer
from .data import random_subsample
from .errors import ConfigError, FormatError, NumericalError
from .rng import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("sharppath")


def _tag(point):
    if not point:
        return "run"
    return "_".join(f"{k}={v}" for k, v in point.items())


def _train_job(raw, point, seed, out_dir):
    """One (grid point, seed) run; writes the log and final checkpoint."""
    tag = _tag(point)
    name = f"{raw.get('name') or 'run'}/{tag}/seed={seed}"
    cfg = config.build_experiment(raw, seed=seed, name=name)
    result = trainer.run_experiment(cfg)
    stem = out_dir / f"{tag}_seed{seed}"
    result.save(f"{stem}.ndjson")
    models.save_checkpoint(f"{stem}.ckpt", cfg.model, result.final_params)
    return {"point": point, "seed": seed, "log": f"{stem.name}.ndjson", "checkpoint": f"{stem.name}.ckpt",
            "diverged": result.diverged}


def cmd_train(args):
    raw = config.load(args.config)
    seeds = args.seeds if args.seeds else [raw.get("seed", 0)]
    grid = config.grid(raw)
    # build once up front so config and dataset errors surface before any run starts
    config.build_experiment(grid[0][1], seed=seeds[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, point, s) for point, cfg in grid for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_train_job, cfg, point, s, out) for cfg, point, s in jobs]
            entries = [f.result() for f in futures]
    else:
        entries = [_train_job(cfg, point, s, out) for cfg, point, s in jobs]
    with open(out / "index.json", "w") as fh:
        json.dump({"config": str(args.config), "runs": entries}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for e in entries:
        if e["diverged"]:
            print(f"diverged: {e['log']}", file=sys.stderr)
    print(f"wrote {len(entries)} logs and index.json to {out}")
    return EXIT_OK


def _load_checkpoint_for(raw, path):
    spec = config.build_model(raw)
    kind, params = models.load_checkpoint(path)
    if kind != spec.kind or params.size != spec.n_params:
        raise ConfigError(f"checkpoint {path} holds a {kind} model with {params.size} parameters; "
                          f"config describes {spec.kind} with {spec.n_params}")
    return spec, params


def _estimate(raw, spec, params, k, seed):
    train, _, _ = config.build_data(raw)
    t = raw.get("train", {})
    subsample = None
    if train is not None:
        subsample = random_subsample(train, t.get("hessian_fraction", 0.05), make_rng(seed, "subsample")).as_batch()
    lcfg = spectral.LanczosConfig(k=min(k, spec.n_params), max_iters=t.get("lanczos_max_iters"),
                                  tol=t.get("lanczos_tol", 1e-6), seed=seed)
    return train, subsample, spectral.estimate_spectrum(spec, params, subsample, lcfg, subsample_seed=seed)


def cmd_spectrum(args):
    raw = config.load(args.config)
    spec, params = _load_checkpoint_for(raw, args.checkpoint)
    k = raw.get("train", {}).get("k_track", 10)
    seed = args.seeds[0] if args.seeds else raw.get("seed", 0)
    _, _, est = _estimate(raw, spec, params, k, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(est.to_json() + "\n")
    print(f"lambda_1 = {est.lambdas[0]:.6g} ({int(est.converged.sum())}/{est.k} converged); wrote {args.out}")
    return EXIT_OK


def cmd_probe(args):
    raw = config.load(args.config)
    spec, params = _load_checkpoint_for(raw, args.checkpoint)
    seed = args.seeds[0] if args.seeds else raw.get("seed", 0)
    exp_probe = config.build_experiment(raw, seed=seed).probe or probes.ProbeConfig(
        eta=raw.get("optimizer", {}).get("eta", 0.01), seed=seed)
    k = max(exp_probe.eig_index, raw.get("train", {}).get("k_track", 10))
    train, subsample, est = _estimate(raw, spec, params, k, seed)
    conv = est.converged_subset()
    if exp_probe.eig_index > conv.k:
        raise ConfigError(f"eig_index {exp_probe.eig_index} exceeds the {conv.k} converged eigenpairs")
    e = conv.vectors[exp_probe.eig_index - 1]
    res = probes.run_probe(spec, params, e, exp_probe, train, subsample)
    res.meta["lambda"] = float(conv.lambdas[exp_probe.eig_index - 1])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(res.to_json() + "\n")
    print(f"probe along e_{exp_probe.eig_index} (lambda={res.meta['lambda']:.6g}); wrote {args.out}")
    return EXIT_OK


def cmd_plot(args):
    logs = []
    for p in args.logs:
        try:
            logs.append(trainer.TrainingLog.load(p))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    svg = plotting.render(logs, args.kind)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="sharppath", description="Track the top of the Hessian spectrum during SGD.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    seeds = dict(type=lambda s: [int(x) for x in s.split(",")], default=None,
                 help="comma-separated seeds, e.g. 0,1,2")

    t = sub.add_parser("train", help="run an experiment or sweep")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seeds", **seeds)
    t.add_argument("--jobs", type=int, default=1, help="worker processes")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("probe", cmd_probe, "loss-change probe at a checkpoint"),
                                 ("spectrum", cmd_spectrum, "one-shot eigen-estimate of a checkpoint")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("checkpoint")
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True, help="output JSON file")
        s.add_argument("--seeds", **seeds)
        s.set_defaults(func=func)

    pl = sub.add_parser("plot", help="render logs to SVG")
    pl.add_argument("logs", nargs="*")
    pl.add_argument("--kind", required=True, choices=plotting.KINDS)
    pl.add_argument("--out", required=True, help="output SVG file")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"sharppath: bad input file: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # ConfigError and dataclass validation
        print(f"sharppath: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"sharppath: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"sharppath: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
