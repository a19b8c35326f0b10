import numpy as np
import pytest

from phi4ml.lattice import (CouplingSet, TargetActionSpec, action_S,
                            build_square_lattice, couplings_from_target_g)
from phi4ml.mcmc import SampleEnsemble, SamplerConfig, make_rng, sample_ensemble
from phi4ml.oracle import exact_kl, exact_variational_gradient
from phi4ml.variational import (TrainingDivergedError, default_random_init,
                                estimate_kl, estimate_kl_with_error,
                                train_variational, variational_gradient)


@pytest.fixture(scope="module")
def small_target():
    return TargetActionSpec((-0.4, 1.0, 0.25, 0.0, 0.0), frozenset({1, 2, 3}))


def test_gradient_exactly_zero_when_model_equals_target(geom2):
    target = TargetActionSpec((-0.3, 0.8, 0.2, 0.0, 0.0), frozenset({1, 2, 3}))
    c = couplings_from_target_g(-0.3, 0.8, 0.2, geom2)
    ens = sample_ensemble(c, geom2, SamplerConfig(burn_in_sweeps=200,
                                                  thinning_sweeps=2,
                                                  n_samples=500, rng_seed=0,
                                                  n_chains=10))
    grad = variational_gradient(ens, target)
    assert np.all(grad == 0.0)          # per-sample S - A is identically zero
    assert estimate_kl(ens, target) == 0.0


def test_covariance_form_equals_four_term_form(canon_ensemble, small_target):
    g_cov = variational_gradient(canon_ensemble, small_target, form="covariance")
    g_four = variational_gradient(canon_ensemble, small_target, form="four_term")
    assert np.allclose(g_cov, g_four, atol=1e-10)


def test_tied_gradient_sums_components(canon_ensemble, small_target):
    full = variational_gradient(canon_ensemble, small_target)
    tied = variational_gradient(canon_ensemble, small_target, tie=True)
    g = canon_ensemble.geometry
    nl, V = g.n_links, g.volume
    assert tied[0] == pytest.approx(full[:nl].sum(), rel=1e-10)
    assert tied[1] == pytest.approx(full[nl:nl + V].sum(), rel=1e-10)
    assert tied[2] == pytest.approx(full[nl + V:nl + 2 * V].sum(), rel=1e-10)
    assert tied[3] == pytest.approx(full[nl + 2 * V:].sum(), rel=1e-10)


def test_gradient_matches_oracle(geom2, canon_couplings, canon_ensemble,
                                 small_target, quad):
    """Monte Carlo gradient is unbiased against the quadrature gradient."""
    exact = exact_variational_gradient(canon_couplings, small_target, geom2, quad)
    n = len(canon_ensemble)
    half = n // 2
    halves = []
    for sl in (slice(0, half), slice(half, n)):
        sub = SampleEnsemble(configs=canon_ensemble.configs[sl],
                             per_sample_S=canon_ensemble.per_sample_S[sl],
                             per_sample_terms=canon_ensemble.per_sample_terms[sl],
                             geometry=geom2, couplings=canon_couplings)
        halves.append(variational_gradient(sub, small_target))
    est = 0.5 * (halves[0] + halves[1])
    spread = 0.5 * np.abs(halves[0] - halves[1])   # ~ 1 sigma of the mean
    tol = 3 * np.maximum(spread, 0.03 * np.abs(exact) + 1e-3)
    assert np.all(np.abs(est - exact) < tol)


def test_kl_estimate_matches_oracle(geom2, canon_couplings, canon_ensemble,
                                    small_target, quad):
    exact = exact_kl(canon_couplings, small_target, geom2, quad)
    est, err = estimate_kl_with_error(canon_ensemble, small_target)
    assert abs(est - exact) < 3 * err


def test_kl_estimator_asymmetry(geom2, quad):
    cfg = SamplerConfig(burn_in_sweeps=500, thinning_sweeps=2, n_samples=20000,
                        rng_seed=1, n_chains=100)
    c_p = CouplingSet.homogeneous(geom2, w=0.2, a=0.6, b=0.2)
    c_q = CouplingSet.homogeneous(geom2, w=-0.1, a=1.1, b=0.3)
    t_p = TargetActionSpec((-0.2, 0.6, 0.2, 0.0, 0.0), frozenset({1, 2, 3}))
    t_q = TargetActionSpec((0.1, 1.1, 0.3, 0.0, 0.0), frozenset({1, 2, 3}))
    kl_pq = estimate_kl(sample_ensemble(c_p, geom2, cfg), t_q)
    kl_qp = estimate_kl(sample_ensemble(c_q, geom2, cfg), t_p)
    exact_pq = exact_kl(c_p, t_q, geom2, quad)
    exact_qp = exact_kl(c_q, t_p, geom2, quad)
    assert abs(exact_pq - exact_qp) > 0.01      # genuinely asymmetric pair
    assert (kl_pq - kl_qp) * (exact_pq - exact_qp) > 0


def test_complex_target_rejected(canon_ensemble):
    complex_target = TargetActionSpec((-0.3, 0.8, 0.2, 0.0, 0.15))
    with pytest.raises(ValueError):
        variational_gradient(canon_ensemble, complex_target)


def test_zero_learning_rate_leaves_couplings_unchanged(geom2, small_target):
    init = CouplingSet.homogeneous(geom2, w=0.1, a=0.6, b=0.1)
    cfg = SamplerConfig(burn_in_sweeps=100, thinning_sweeps=0, n_samples=200,
                        rng_seed=2, n_chains=200)
    rep = train_variational(init, small_target, geom2, cfg, epochs=5,
                            learning_rate=0.0)
    assert np.array_equal(rep.final_couplings.as_vector(), init.as_vector())
    assert np.std(rep.kl_trace) < 5 * np.mean(np.abs(rep.kl_trace))


def test_training_reduces_kl(geom2, small_target):
    init = default_random_init(geom2, make_rng(3))
    cfg = SamplerConfig(burn_in_sweeps=200, thinning_sweeps=0, n_samples=500,
                        rng_seed=3, n_chains=500)
    rep = train_variational(init, small_target, geom2, cfg, epochs=150,
                            learning_rate=5e-3, tie=True, sweeps_per_epoch=10)
    assert np.mean(rep.kl_trace[-20:]) < 0.2 * np.mean(rep.kl_trace[:20])
    assert len(rep.kl_trace) == 150
    assert rep.coupling_error is not None


def test_divergence_guard(geom2, small_target):
    init = CouplingSet.homogeneous(geom2, w=0.1, a=0.6, b=0.1)
    cfg = SamplerConfig(burn_in_sweeps=50, thinning_sweeps=0, n_samples=100,
                        rng_seed=4, n_chains=100)
    with pytest.raises(TrainingDivergedError):
        train_variational(init, small_target, geom2, cfg, epochs=100,
                          learning_rate=1e-3, grad_ceiling=1.0)


def test_random_init_ranges(geom4):
    c = default_random_init(geom4, make_rng(5))
    assert np.all((c.w > -0.1) & (c.w < 0.1))
    assert np.all((c.a > 0.4) & (c.a < 0.6))
    assert np.all((c.b > 0.05) & (c.b < 0.15))
    assert np.all((c.r > -0.1) & (c.r < 0.1))


def test_b_floor_projection(geom2):
    """Updates that would push b negative are clamped to keep the
    distribution normalizable."""
    target = TargetActionSpec((0.0, 0.5, 0.0, 0.0, 0.0), frozenset({1, 2}))
    init = CouplingSet.homogeneous(geom2, w=0.0, a=0.5, b=0.01)
    cfg = SamplerConfig(burn_in_sweeps=100, thinning_sweeps=0, n_samples=300,
                        rng_seed=6, n_chains=300)
    rep = train_variational(init, target, geom2, cfg, epochs=200,
                            learning_rate=5e-3, tie=True, sweeps_per_epoch=5)
    assert np.all(rep.final_couplings.b >= 1e-6 - 1e-15)
