"""Shrinking the step along the sharpest directions.

NSGD rescales the gradient component inside the top-K eigenvector subspace by
gamma and leaves the rest alone. On a quadratic whose curvature is 100 on five
axes and 1 elsewhere, gamma = 0.01 turns that into exactly a Newton step, which
the first part checks. The second part runs NSGD and SGD side by side on the
small MLP from track_sharpness.py. On that problem NSGD settles in sharper
regions but trains no faster than SGD; the speed comparison that matters is
the CNN one in tests/test_acceptance.py.
"""
import numpy as np

from sharppath import data, models, optim, trainer

h = np.array([100.0] * 5 + [1.0, 1.0])
cfg = optim.OptimizerConfig(eta=0.01, variant="nsgd", gamma=0.01, k_top=5)
state = optim.OptimizerState()
state.set_basis(np.eye(7)[:5], step=0)
rng = np.random.default_rng(0)
theta, g = rng.normal(size=(2, 7))
damped = optim.nsgd_step(theta, g, cfg, state)
newton = optim.newton_step(theta, g, h, eta=cfg.eta)
print("largest gap between the damped step and the Newton step:", np.max(np.abs(damped - newton)))

ds = data.synth_gaussian(10, 1000, 2, 3.0, seed=0)
spec = models.build_mlp(2, (64,), 10)
for variant in ("sgd", "nsgd"):
    opt = optim.OptimizerConfig(eta=0.01, batch_size=128, variant=variant, gamma=0.01, k_top=3)
    run = trainer.ExperimentConfig(spec, opt, train=ds, epochs=5, k_track=3, hessian_fraction=0.1, seed=0)
    recs = trainer.run_experiment(run).boundary_records()
    acc = " ".join(f"{r.train_acc:.3f}" for r in recs)
    lam = " ".join(f"{r.lambdas[0]:.1f}" for r in recs)
    print(f"\n{variant:5s} train acc by epoch: {acc}\n      lambda_1 by epoch:  {lam}")
