import numpy as np
import pytest

from sharppath import data, models, optim, probes, spectral, trainer
from sharppath.errors import ConfigError
from sharppath.trainer import CurvatureRecord, ExperimentConfig, TrainingLog


def quad_cfg(eta=0.1, epochs=15, **kw):
    spec = models.build_quadratic([8.0, 3.0, 1.0], start=[1.0, -1.0, 2.0])
    return ExperimentConfig(spec, optim.OptimizerConfig(eta=eta), epochs=epochs, k_track=2, **kw)


def small_mlp_cfg(seed=0, **kw):
    ds = data.synth_gaussian(4, 200, 6, 2.0, seed=1)
    spec = models.build_mlp(6, (10,), 4)
    base = dict(train=ds, epochs=2, k_track=3, seed=seed, hessian_fraction=0.25)
    base.update(kw)
    opt = base.pop("optimizer", optim.OptimizerConfig(eta=0.05, batch_size=32))
    return ExperimentConfig(spec, opt, **base)


def test_quadratic_sgd_loss_decreases_every_step():
    log = trainer.run_experiment(quad_cfg(eta=0.2))  # 2 / lambda_max = 0.25
    losses = [r.loss for r in log.records]
    assert len(losses) == 16
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_quadratic_records_report_the_true_top_eigenvalue():
    log = trainer.run_experiment(quad_cfg(epochs=4))
    for r in log.records:
        assert r.lambdas[0] == pytest.approx(8.0, rel=1e-10)
        assert r.lambdas[1] == pytest.approx(3.0, rel=1e-10)


def test_first_record_is_at_init_and_frobenius_matches_lambdas():
    log = trainer.run_experiment(small_mlp_cfg())
    assert log.records[0].t == 0 and log.records[0].dist_from_init == 0.0
    for r in log.records:
        assert r.frob_trunc == spectral.frobenius_trunc(r.lambdas)
    assert log.records[-1].dist_from_init > 0


def test_identical_configs_give_identical_logs():
    a = trainer.run_experiment(small_mlp_cfg(seed=3)).to_ndjson()
    b = trainer.run_experiment(small_mlp_cfg(seed=3)).to_ndjson()
    assert a == b
    assert a != trainer.run_experiment(small_mlp_cfg(seed=4)).to_ndjson()


def test_mlp_sharpness_grows_in_the_first_epochs():
    # two-dimensional inputs keep the initial curvature low enough for growth to show
    ds = data.synth_gaussian(10, 1000, 2, 3.0, seed=0)
    spec = models.build_mlp(2, (64,), 10)
    cfg = ExperimentConfig(spec, optim.OptimizerConfig(eta=0.01, batch_size=128), train=ds, epochs=5,
                           k_track=1, hessian_fraction=0.1, seed=0)
    lam = [r.lambdas[0] for r in trainer.run_experiment(cfg).boundary_records()]
    assert lam[5] > lam[0]


def test_divergence_is_logged_not_raised():
    log = trainer.run_experiment(quad_cfg(eta=1.0, epochs=40, divergence_threshold=1e3))
    assert log.diverged and "divergence threshold" in log.divergence
    assert log.records
    assert '"type": "divergence"' in log.to_ndjson()


def test_per_iteration_cadence_records_each_early_step():
    log = trainer.run_experiment(small_mlp_cfg(spectrum_cadence="per_iteration", per_iteration_steps=5))
    ts = [r.t for r in log.records]
    assert ts[:5] == [0, 1, 2, 3, 4]
    assert sum(r.boundary for r in log.records) == 3


def test_nsgd_run_with_probes():
    opt = optim.OptimizerConfig(eta=0.05, batch_size=32, variant="nsgd", gamma=0.1, k_top=2)
    cfg = small_mlp_cfg(optimizer=opt, probe=probes.ProbeConfig(n_batches=2, batch_size=16), probe_steps=(1, 3))
    log = trainer.run_experiment(cfg)
    assert not log.diverged
    assert [p.step for p in log.probes] == [1, 3]
    assert all(p.meta == {} and len(p.scan) == 21 for p in log.probes)


def test_nsgd_needs_enough_tracked_pairs():
    opt = optim.OptimizerConfig(variant="nsgd", k_top=5)
    with pytest.raises(ConfigError):
        small_mlp_cfg(optimizer=opt, k_track=3)


def test_log_round_trip_preserves_summary(tmp_path):
    log = trainer.run_experiment(small_mlp_cfg(val=data.synth_gaussian(4, 40, 6, 2.0, seed=9)))
    path = tmp_path / "run.ndjson"
    log.save(path)
    back = TrainingLog.load(path)
    assert back.to_ndjson() == log.to_ndjson()
    assert trainer.summarize(back) == log.summary


def _log_with_val(accs):
    recs = [CurvatureRecord(t=i, epoch=i, loss=1.0, lr=0.1, lambdas=[2.0], frob_trunc=2.0, train_acc=a,
                            val_acc=a, boundary=True) for i, a in enumerate(accs)]
    return TrainingLog(config={}, records=recs)


def test_summary_best_epoch():
    assert trainer.summarize(_log_with_val([0.4]))["best_epoch"] == 0
    assert trainer.summarize(_log_with_val([0.1, 0.2, 0.3, 0.5]))["best_epoch"] == 3
    assert trainer.summarize(_log_with_val([0.1, 0.6, 0.3]))["best_epoch"] == 1


def test_config_validation():
    spec = models.build_mlp(3, (4,), 2)
    with pytest.raises(ConfigError):
        ExperimentConfig(spec, optim.OptimizerConfig())  # no training data
    with pytest.raises(ConfigError):
        quad_cfg(spectrum_cadence="hourly")
