import numpy as np
import pytest

from sharppath import models, spectral
from sharppath.data import Dataset, random_subsample
from sharppath.errors import AlignmentUndefined, ConfigError
from sharppath.rng import make_rng
from sharppath.spectral import EigenEstimate, LanczosConfig, lanczos_topk


def random_symmetric(d, seed):
    a = np.random.default_rng(seed).normal(size=(d, d))
    return (a + a.T) / 2


def dense_top(h, k):
    w, v = np.linalg.eigh(h)
    order = np.argsort(-np.abs(w), kind="stable")[:k]
    return w[order], v[:, order].T


def fake_estimate(vectors, lambdas=None):
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    lam = np.ones(len(vectors)) if lambdas is None else np.asarray(lambdas, dtype=float)
    return EigenEstimate(lam, vectors, np.zeros(len(lam)), np.ones(len(lam), dtype=bool))


def test_identity_top3():
    est = lanczos_topk(lambda v: v, 5, LanczosConfig(k=3))
    np.testing.assert_allclose(est.lambdas, 1.0, atol=1e-12)


def test_repeated_top_eigenvalue_found_with_multiplicity():
    diag = np.array([100.0] * 5 + [1.0, 1.0])
    est = lanczos_topk(lambda v: diag * v, 7, LanczosConfig(k=5))
    np.testing.assert_allclose(est.lambdas, 100.0, rtol=1e-12)
    # the five vectors span the first five axes
    np.testing.assert_allclose(np.linalg.norm(est.vectors[:, :5], axis=1), 1.0, atol=1e-10)


def test_random_symmetric_matches_dense_oracle():
    h = random_symmetric(100, 0)
    est = lanczos_topk(lambda v: h @ v, 100, LanczosConfig(k=10, max_iters=100, tol=1e-10))
    lam, vec = dense_top(h, 10)
    np.testing.assert_allclose(est.lambdas, lam, rtol=1e-8)
    cos = np.abs(np.sum(est.vectors * vec, axis=1))
    assert np.all(np.arccos(np.clip(cos, -1, 1)) < 1e-6)


def test_estimate_invariants():
    h = random_symmetric(60, 3)
    est = lanczos_topk(lambda v: h @ v, 60, LanczosConfig(k=6, max_iters=60))
    assert np.all(np.diff(np.abs(est.lambdas)) <= 0)
    np.testing.assert_allclose(np.linalg.norm(est.vectors, axis=1), 1.0, atol=1e-10)
    gram = est.vectors @ est.vectors.T
    assert np.max(np.abs(gram - np.eye(6))) < 1e-6
    res = np.linalg.norm(est.vectors @ h - est.lambdas[:, None] * est.vectors, axis=1)
    np.testing.assert_allclose(est.residuals, res, atol=1e-9)
    pivots = np.argmax(np.abs(est.vectors), axis=1)
    assert np.all(est.vectors[np.arange(6), pivots] > 0)


def test_negative_eigenvalues_ranked_by_magnitude():
    diag = np.array([3.0, -10.0, 1.0, 0.5])
    est = lanczos_topk(lambda v: diag * v, 4, LanczosConfig(k=2))
    np.testing.assert_allclose(est.lambdas, [-10.0, 3.0], rtol=1e-10)


def test_k_larger_than_dimension_is_rejected():
    with pytest.raises(ConfigError):
        lanczos_topk(lambda v: v, 3, LanczosConfig(k=4))


def test_zero_operator_returns_zero_pairs():
    est = lanczos_topk(lambda v: 0 * v, 6, LanczosConfig(k=2))
    np.testing.assert_array_equal(est.lambdas, 0.0)
    assert est.converged.all()


def test_unconverged_pairs_are_flagged():
    h = random_symmetric(200, 1)
    est = lanczos_topk(lambda v: h @ v, 200, LanczosConfig(k=10, max_iters=12, tol=1e-10))
    assert not est.converged.all()
    assert est.converged_subset().k == int(est.converged.sum())


def test_quadratic_spectrum():
    a = np.array([4.0, 1.0, 1.0, 0.5, 0.2])
    spec = models.build_quadratic(a)
    est = spectral.estimate_spectrum(spec, np.ones(5), None, LanczosConfig(k=1))
    assert est.lambdas[0] == pytest.approx(4.0, rel=1e-12)
    assert abs(est.vectors[0, 0]) == pytest.approx(1.0, abs=1e-10)


def test_mlp_spectrum_matches_dense_hessian():
    spec = models.build_mlp(6, (12,), 4)
    theta = models.init_params(spec, make_rng(0, "init"))
    rng = np.random.default_rng(0)
    batch = models.Batch(rng.normal(size=(40, 6)), rng.integers(0, 4, 40))
    d = spec.n_params
    h = np.stack([models.hvp(spec, theta, batch, e) for e in np.eye(d)])
    h = (h + h.T) / 2
    est = spectral.estimate_spectrum(spec, theta, batch, LanczosConfig(k=5, max_iters=d, tol=1e-10))
    np.testing.assert_allclose(est.lambdas, dense_top(h, 5)[0], rtol=1e-6)


def test_five_percent_subsample_size():
    ds = Dataset(np.zeros((50_000, 1)), np.zeros(50_000, dtype=int))
    assert len(random_subsample(ds, 0.05, make_rng(0, "subsample"))) == 2500


def test_frobenius_trunc_examples():
    assert spectral.frobenius_trunc([3.0, 4.0]) == 5.0
    est = lanczos_topk(lambda v: v, 50, LanczosConfig(k=50))
    assert spectral.frobenius_trunc(est) == pytest.approx(np.sqrt(50), rel=1e-12)


def test_frobenius_trunc_gap_is_the_spectral_tail():
    h = random_symmetric(100, 0)
    est = lanczos_topk(lambda v: h @ v, 100, LanczosConfig(k=50, max_iters=100, tol=1e-10))
    w = np.linalg.eigvalsh(h)
    tail = np.sort(np.abs(w))[:50]
    full = np.linalg.norm(h, "fro")
    trunc = spectral.frobenius_trunc(est)
    assert trunc <= full
    assert full ** 2 - trunc ** 2 == pytest.approx(np.sum(tail ** 2), rel=1e-8)


def test_alignment_extremes():
    e = np.eye(4)[:2]
    assert spectral.alignment(np.array([2.0, 0, 0, 0]), fake_estimate(e), m=1) == 1.0
    assert spectral.alignment(np.array([0, 0, 1.0, -1.0]), fake_estimate(e), m=2) == 0.0


def test_alignment_errors():
    with pytest.raises(AlignmentUndefined):
        spectral.alignment(np.zeros(4), fake_estimate(np.eye(4)[:1]), m=1)
    with pytest.raises(ConfigError):
        spectral.alignment(np.ones(4), fake_estimate(np.eye(4)[:1]), m=2)


def _monte_carlo_abs_cos(d, n, seed):
    rng = np.random.default_rng(seed)
    total = 0.0
    for lo in range(0, n, 10_000):
        u = rng.standard_normal((min(10_000, n - lo), d))
        total += np.sum(np.abs(u[:, 0]) / np.linalg.norm(u, axis=1))
    return total / n


def test_alignment_of_random_gradient_matches_baseline():
    d = 1000
    est = fake_estimate(np.eye(d)[:1])
    rng = np.random.default_rng(7)
    vals = [spectral.alignment(rng.standard_normal(d), est, m=1) for _ in range(4000)]
    assert np.mean(vals) == pytest.approx(0.02523, rel=0.03)


def test_baseline_closed_form_and_limit():
    assert spectral.random_alignment_baseline(2) == pytest.approx(np.sqrt(1 / np.pi))
    vals = [spectral.random_alignment_baseline(d) for d in (2, 10, 100, 10_000, 10**8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-4


def test_baseline_matches_monte_carlo_at_d_1000():
    mc = _monte_carlo_abs_cos(1000, 100_000, 0)
    assert mc == pytest.approx(spectral.random_alignment_baseline(1000), rel=0.01)


def test_estimate_json_round_trip():
    est = lanczos_topk(lambda v: np.arange(1.0, 6.0) * v, 5, LanczosConfig(k=2))
    est.step, est.subsample_seed = 7, 3
    back = EigenEstimate.from_json(est.to_json())
    np.testing.assert_array_equal(back.lambdas, est.lambdas)
    np.testing.assert_array_equal(back.residuals, est.residuals)
    assert (back.step, back.subsample_seed) == (7, 3)
