"""Why a large step along a sharp direction hurts.

On L(x) = lam * x^2 / 2 a plain gradient step maps x to (1 - eta*lam) x.
The iterate jumps past the minimum once eta*lam > 1 and lands higher than it
started once eta*lam > 2. The loss-change probe measures the same effect in a
trained network by stretching the step along the top Hessian eigenvector by
a factor alpha; on a quadratic it has a closed form we can print side by side.
"""
import numpy as np

from sharppath import models, optim, probes

lam = 160.0
print("eta*lam   x after one step   loss ratio")
for eta_lam in (0.5, 1.0, 1.5, 2.0, 2.5):
    x = optim.sgd_step(np.array([1.0]), np.array([lam]), optim.OptimizerConfig(eta=eta_lam / lam),
                       optim.OptimizerState())[0]
    print(f"{eta_lam:7.1f}   {x:+17.2f}   {x ** 2:10.2f}")

# Probe the same quadratic at eta = 0.005, so eta*lam = 0.8 for the unscaled step.
spec = models.build_quadratic([lam], start=[1.0])
cfg = probes.ProbeConfig(eta=0.005, n_batches=1)
deltas = probes.loss_change_probe(spec, np.array([1.0]), np.array([1.0]), cfg)
print("\nalpha   measured delta   0.5*lam*((1-alpha*eta*lam)^2 - 1)")
for alpha, d in deltas.items():
    closed = 0.5 * lam * ((1 - alpha * cfg.eta * lam) ** 2 - 1)
    print(f"{alpha:5.2f}   {d:14.2f}   {closed:10.2f}")

# A scan of the loss along the eigenvector, in units of the expected step length,
# is a parabola with its minimum at k = -1 / (eta*lam).
step = probes.expected_step_norm(spec, np.array([1.0]), np.array([1.0]), cfg)
scan = probes.surface_scan(spec, np.array([1.0]), np.array([1.0]), step, np.linspace(-5, 5, 21))
lowest = sorted(scan, key=lambda kv: kv[1])[:2]
print(f"\nexpected step length {step:.2f}, so the vertex sits at k = {-1 / 0.8:+.2f}")
print("the two lowest grid points straddle it:", ", ".join(f"k={k:+.1f} loss {v:.3f}" for k, v in lowest))
