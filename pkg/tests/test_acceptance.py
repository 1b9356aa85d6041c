"""Acceptance suite: ten criteria, each printed as one PASS/FAIL line after the run.

The first four and the last are exact oracle checks. Criteria 5 to 9 are
directional reproductions on a desk-scale image task (SimpleCNN, 2,000
synthetic 16x16 images, batch 128, five epochs) decided by majority over
three seeds. Those runs are shared between criteria and cached per session,
so the whole file takes roughly three quarters of an hour on one core.
"""
import functools
import sys
import time

import numpy as np
import pytest

from sharppath import data, models, optim, probes, spectral, trainer
from sharppath import autodiff as ad
from sharppath.errors import FormatError
from sharppath.optim import OptimizerConfig, OptimizerState
from sharppath.rng import make_rng
from sharppath.spectral import LanczosConfig, lanczos_topk

from conftest import ACCEPTANCE_LINES, fd_grad, fd_hvp, micro_cnn_graph, rel_err, unit
from test_data import cifar_fixture, idx_fixture

SEEDS = (0, 1, 2)
# ten iterations spread over the last epoch (16 steps per epoch), where curvature peaks
PROBE_STEPS = (64, 66, 68, 70, 72, 74, 76, 77, 78, 79)
CHECKPOINT_EPOCH = 5


def report(tag, title, ok, detail):
    ACCEPTANCE_LINES.append(f"{tag} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


def majority(flags):
    return sum(flags) >= 2


# -- desk-scale runs ---------------------------------------------------------

def desk_config(seed, eta=0.01, variant="sgd", with_probes=False):
    ds = data.synth_images(10, 2000, (16, 16, 3), seed=seed)
    spec = models.build_simple_cnn((16, 16, 3), 10)
    if variant == "nsgd":
        opt = OptimizerConfig(eta=eta, batch_size=128, variant="nsgd", gamma=0.01, k_top=5)
    else:
        opt = OptimizerConfig(eta=eta, batch_size=128)
    probe = probes.ProbeConfig(eta=eta, n_batches=10) if with_probes else None
    return trainer.ExperimentConfig(spec, opt, train=ds, epochs=5, k_track=5, seed=seed, lanczos_max_iters=20,
                                    probe=probe, probe_steps=PROBE_STEPS if with_probes else ())


@functools.lru_cache(maxsize=None)
def desk_run(seed, eta=0.01, variant="sgd"):
    """Run once per session; the eta=0.01 SGD run also carries the probes."""
    cfg = desk_config(seed, eta, variant, with_probes=(eta == 0.01 and variant == "sgd"))
    start = time.perf_counter()
    log = trainer.run_experiment(cfg)
    return log, time.perf_counter() - start


def boundary_lambdas(log):
    return [r.lambdas[0] for r in log.boundary_records()]


def fmt(xs, digits=1):
    return "[" + ", ".join(f"{x:.{digits}f}" for x in xs) + "]"


# -- 1: derivatives ----------------------------------------------------------

def test_c1_derivatives_match_finite_differences(mlp_2_8_2):
    start = time.perf_counter()
    errs = {}
    spec, theta, batch = mlp_2_8_2
    v = unit(np.random.default_rng(5).normal(size=theta.size))
    errs["mlp grad"] = rel_err(models.loss_grad(spec, theta, batch)[1],
                               fd_grad(lambda t: models.loss(spec, t, batch), theta))
    errs["mlp hvp"] = rel_err(models.hvp(spec, theta, batch, v),
                              fd_hvp(lambda t: models.loss_grad(spec, t, batch)[1], theta, v))

    g = micro_cnn_graph()
    rng = np.random.default_rng(3)
    theta = rng.normal(0, 0.5, g.n_params)
    batch = models.Batch(rng.random((5, 4, 4, 2)), rng.integers(0, 3, 5))
    v = unit(rng.normal(size=theta.size))
    errs["cnn grad"] = rel_err(ad.grad(g, theta, batch), fd_grad(lambda t: ad.forward_eval(g, t, batch), theta))
    errs["cnn hvp"] = rel_err(ad.hvp(g, theta, batch, v), fd_hvp(lambda t: ad.grad(g, t, batch), theta, v, h=1e-5))
    elapsed = time.perf_counter() - start

    ok = errs["mlp grad"] < 1e-6 and errs["cnn grad"] < 1e-6 and errs["mlp hvp"] < 1e-5 and errs["cnn hvp"] < 1e-5
    detail = ", ".join(f"{k} {e:.1e}" for k, e in errs.items()) + f" in {elapsed:.1f}s"
    report("C1", "derivatives", ok and elapsed < 60, detail)


# -- 2: Lanczos against a dense eigensolver ------------------------------------

def top_dense(h, k):
    w, v = np.linalg.eigh(h)
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    return w[order], v[:, order].T


def worst_errors(est, h, k=10):
    lam, vec = top_dense(h, k)
    lam_err = np.max(np.abs(est.lambdas - lam) / np.abs(lam))
    signs = np.sign(np.sum(est.vectors * vec, axis=1))
    chord = np.linalg.norm(est.vectors - signs[:, None] * vec, axis=1)
    return lam_err, np.max(2 * np.arcsin(np.minimum(chord / 2, 1.0)))


def test_c2_lanczos_matches_dense_oracle():
    start = time.perf_counter()
    a = np.random.default_rng(11).normal(size=(100, 100))
    h1 = (a + a.T) / 2
    est1 = lanczos_topk(lambda v: h1 @ v, 100, LanczosConfig(k=10, max_iters=100, tol=1e-10))

    spec = models.build_mlp(20, (40,), 10)
    d = spec.n_params
    theta = models.init_params(spec, make_rng(0, "init"))
    rng = np.random.default_rng(0)
    batch = models.Batch(rng.normal(size=(200, 20)), rng.integers(0, 10, 200))
    h2 = np.stack([models.hvp(spec, theta, batch, e) for e in np.eye(d)])
    h2 = (h2 + h2.T) / 2
    est2 = spectral.estimate_spectrum(spec, theta, batch, LanczosConfig(k=10, max_iters=300, tol=1e-10))
    elapsed = time.perf_counter() - start

    (l1, a1), (l2, a2) = worst_errors(est1, h1), worst_errors(est2, h2)
    ok = max(l1, l2) < 1e-6 and max(a1, a2) < 1e-4 and d <= 2000
    detail = (f"random 100x100 eig {l1:.1e} angle {a1:.1e}; MLP D={d} eig {l2:.1e} angle {a2:.1e}"
              f" in {elapsed:.1f}s")
    report("C2", "Lanczos vs dense", ok and elapsed < 300, detail)


# -- 3: damped step equals a Newton step ---------------------------------------

def test_c3_nsgd_equals_newton_on_diagonal_quadratic():
    h = np.array([100.0] * 5 + [1.0, 1.0])
    cfg = OptimizerConfig(eta=0.01, variant="nsgd", gamma=0.01, k_top=5)
    state = OptimizerState()
    state.set_basis(np.eye(7)[:5], 0)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        theta, g = rng.normal(size=(2, 7))
        diff = optim.nsgd_step(theta, g, cfg, state) - optim.newton_step(theta, g, h, eta=cfg.eta, lambda_damp=0.0)
        worst = max(worst, np.max(np.abs(diff)))
    report("C3", "NSGD equals Newton", worst <= 1e-12, f"max |difference| {worst:.1e} over 100 gradients")


# -- 4: overshoot geometry on one-dimensional quadratics -------------------------

def test_c4_overshoot_thresholds():
    etas = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
    lams = (0.5, 1.0, 2.0, 4.0, 8.0, 10.0, 20.0, 40.0, 100.0)
    wrong = []
    for eta in etas:
        for lam in lams:
            for theta0 in (1.0, -2.0):
                theta1 = optim.sgd_step(np.array([theta0]), np.array([lam * theta0]), OptimizerConfig(eta=eta),
                                        OptimizerState())[0]
                crossed = np.sign(theta1) == -np.sign(theta0)
                increased = lam * theta1 ** 2 / 2 > lam * theta0 ** 2 / 2
                if crossed != (eta * lam > 1) or increased != (eta * lam > 2):
                    wrong.append((eta, lam, theta0))
    n = len(etas) * len(lams) * 2
    detail = f"{n - len(wrong)}/{n} grid points agree" + (f", first misses {wrong[:3]}" if wrong else "")
    report("C4", "overshoot geometry", not wrong, detail)


# -- 5 to 9: desk-scale reproductions -------------------------------------------

def test_c5_initial_sharpness_grows():
    rows, flags = [], []
    for seed in SEEDS:
        log, secs = desk_run(seed)
        lam = boundary_lambdas(log)
        flags.append(lam[CHECKPOINT_EPOCH] >= 2 * lam[0] and secs < 1800)
        rows.append(f"seed {seed} {lam[0]:.1f}->{lam[CHECKPOINT_EPOCH]:.1f} ({secs:.0f}s)")
    report("C5", "sharpness growth", majority(flags), f"{sum(flags)}/3 seeds; " + "; ".join(rows))


def test_c6_larger_step_peaks_lower():
    rows, flags = [], []
    for seed in SEEDS:
        small = max(boundary_lambdas(desk_run(seed)[0]))
        large = max(boundary_lambdas(desk_run(seed, eta=0.1)[0]))
        flags.append(small > large)
        rows.append(f"seed {seed} peak {small:.1f} (0.01) vs {large:.1f} (0.1)")
    report("C6", "learning-rate ordering of peak sharpness", majority(flags), f"{sum(flags)}/3 seeds; " + "; ".join(rows))


def test_c7_gradient_aligns_with_top_subspace():
    rows, flags = [], []
    for seed in SEEDS:
        log, _ = desk_run(seed)
        recs = log.boundary_records()
        lam = [r.lambdas[0] for r in recs]
        peak = int(np.argmax(lam))
        growth = [r.alignment for r in recs[1:peak + 1]] or [recs[peak].alignment]
        base = spectral.random_alignment_baseline(models.build_simple_cnn((16, 16, 3), 10).n_params)
        mean = float(np.mean(growth))
        flags.append(mean >= 5 * base)
        rows.append(f"seed {seed} {mean:.3f} vs baseline {base:.5f}")
    report("C7", "gradient alignment", majority(flags), f"{sum(flags)}/3 seeds; " + "; ".join(rows))


def test_c8_probe_signs_at_peak_curvature():
    rows, flags = [], []
    for seed in SEEDS:
        log, _ = desk_run(seed)
        assert len(log.probes) >= 10
        half = float(np.mean([p.deltas[0.5] for p in log.probes]))
        double = float(np.mean([p.deltas[2.0] for p in log.probes]))
        flags.append(double > 0 and half < 0)
        rows.append(f"seed {seed} a=0.5 {half:+.4f} a=2 {double:+.4f}")
    report("C8", "loss-change probe signs", majority(flags), f"{sum(flags)}/3 seeds; " + "; ".join(rows))


def test_c9_nsgd_trains_faster_and_sharper():
    rows, flags = [], []
    for seed in SEEDS:
        sgd, nsgd = desk_run(seed)[0], desk_run(seed, variant="nsgd")[0]
        acc_s = [r.train_acc for r in sgd.boundary_records()]
        acc_n = [r.train_acc for r in nsgd.boundary_records()]
        peak_s, peak_n = max(boundary_lambdas(sgd)), max(boundary_lambdas(nsgd))
        flags.append(acc_n[CHECKPOINT_EPOCH] > acc_s[CHECKPOINT_EPOCH] and peak_n > peak_s)
        rows.append(f"seed {seed} acc {fmt(acc_n, 3)} vs {fmt(acc_s, 3)}, peak {peak_n:.1f} vs {peak_s:.1f}")
    report("C9", f"NSGD vs SGD at epoch {CHECKPOINT_EPOCH}", majority(flags),
           f"{sum(flags)}/3 seeds; " + "; ".join(rows))


# -- 10: determinism and file formats --------------------------------------------

def small_run(seed):
    ds = data.synth_gaussian(4, 200, 6, 2.0, seed=1)
    cfg = trainer.ExperimentConfig(models.build_mlp(6, (10,), 4), OptimizerConfig(eta=0.05, batch_size=32),
                                   train=ds, epochs=2, k_track=3, seed=seed, hessian_fraction=0.25,
                                   probe=probes.ProbeConfig(n_batches=2, batch_size=16), probe_steps=(3,))
    return trainer.run_experiment(cfg).to_ndjson().encode()


def test_c10_determinism_and_formats(tmp_path):
    checks = {}
    checks["identical logs"] = small_run(7) == small_run(7)

    cifar = cifar_fixture(tmp_path / "b.bin")
    data.write_cifar10_bin(tmp_path / "c.bin", data.load_cifar10_bin(cifar))
    checks["cifar round trip"] = (tmp_path / "c.bin").read_bytes() == cifar.read_bytes()
    img, lab, _ = idx_fixture(tmp_path)
    data.write_idx(tmp_path / "i2", tmp_path / "l2", data.load_idx(img, lab))
    checks["idx round trip"] = ((tmp_path / "i2").read_bytes() == img.read_bytes()
                                and (tmp_path / "l2").read_bytes() == lab.read_bytes())

    malformed = 0
    (tmp_path / "short.bin").write_bytes(cifar.read_bytes()[:-1])
    (tmp_path / "label.bin").write_bytes(bytes([10]) + cifar.read_bytes()[1:])
    cases = [lambda: data.load_cifar10_bin(tmp_path / "short.bin"),
             lambda: data.load_cifar10_bin(tmp_path / "label.bin"),
             lambda: data.load_idx(lab, img)]
    for case in cases:
        try:
            case()
        except FormatError:
            malformed += 1
    checks["malformed files rejected"] = malformed == len(cases)
    report("C10", "determinism and formats", all(checks.values()),
           ", ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in checks.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
