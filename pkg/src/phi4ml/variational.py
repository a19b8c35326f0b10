"""Data-free training: minimize the variational free energy bound.

For a target Boltzmann distribution q = exp(-A)/Z_A, the bound

    F_A <= <A - S>_p + F  ==  F_var(theta)

is minimized by gradient descent on the coupling constants.  The gradient
of F_var is the sample covariance Cov_p(S - A, dS/dtheta), equivalently the
four-expectation form <A><dS> - <A dS> + <S dS> - <S><dS>; both are
implemented and agree exactly on identical samples.

Training follows plain gradient descent theta <- theta - eta * grad with no
hidden momentum or decay.  Model expectations come from persistent Metropolis
chains advanced a fixed number of sweeps between epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import (CouplingSet, LatticeGeometry, TargetActionSpec,
                      action_S, action_terms, action_gradient_theta,
                      couplings_from_target_g)
from .mcmc import (SampleEnsemble, SamplerConfig, SiteNeighborTable,
                   binned_error_analysis, make_rng, run_chains, sweep_chains,
                   _adapt_width)

B_FLOOR = 1e-6  # quartic couplings are clamped here to keep Z finite


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainState:
    couplings: CouplingSet
    epoch: int = 0
    learning_rate: float = 1e-3
    history: list = field(default_factory=list)


@dataclass
class VariationalReport:
    kl_trace: np.ndarray
    grad_norm_trace: np.ndarray
    final_couplings: CouplingSet
    converged: bool
    coupling_error: dict | None = None   # per-family |homogenized - target|
    history: list = field(default_factory=list)


def per_sample_target(ensemble: SampleEnsemble, target: TargetActionSpec) -> np.ndarray:
    """Real target action values, evaluated through the same reduction as the
    cached per-sample S so that an in-family model matching the target gives
    a bitwise-zero difference (and hence an exactly zero gradient)."""
    if target.is_complex:
        raise ValueError("training targets must be real (no active g5 term)")
    g = target.effective_g
    mapped = couplings_from_target_g(g[0], g[1], g[2], ensemble.geometry)
    vals = action_S(ensemble.configs, mapped, ensemble.geometry)
    if g[3] != 0.0:
        vals = vals + g[3] * ensemble.per_sample_terms[:, 3]
    return vals


def _sufficient_stats(ensemble: SampleEnsemble, tie: bool) -> np.ndarray:
    """Per-sample dS/dtheta, either the full (N, P) layout or the tied
    (N, 4) layout [-t1, t2, t3, sum phi]."""
    if tie:
        t = ensemble.per_sample_terms
        return np.stack([-t[:, 0], t[:, 1], t[:, 2],
                         ensemble.configs.sum(axis=1)], axis=1)
    return action_gradient_theta(ensemble.configs, ensemble.geometry)


def variational_gradient(ensemble: SampleEnsemble, target: TargetActionSpec,
                         tie: bool = False, form: str = "covariance") -> np.ndarray:
    """Sample estimate of dF_var/dtheta.

    ``form`` selects the covariance form Cov(S - A, dS/dtheta) or the
    equivalent four-expectation form; both use plain 1/N means and agree to
    rounding on the same ensemble.  With ``tie`` the gradient is taken with
    respect to one shared coupling per family (w, a, b, r).
    """
    s = ensemble.per_sample_S
    a = per_sample_target(ensemble, target)
    ds = _sufficient_stats(ensemble, tie)
    if form == "covariance":
        x = (s - a) - (s - a).mean()
        return x @ ds / len(s)
    if form == "four_term":
        return (a.mean() * ds.mean(axis=0) - (a @ ds) / len(s)
                + (s @ ds) / len(s) - s.mean() * ds.mean(axis=0))
    raise ValueError(f"unknown gradient form {form!r}")


def estimate_kl(ensemble: SampleEnsemble, target: TargetActionSpec) -> float:
    """KL(p || q) estimate <A - S>_p + ln <exp(S - A)>_p.

    The second term reweights the sample to estimate F - F_A; the maximum of
    S - A is subtracted before exponentiating.  Small negative values are
    possible at finite N.
    """
    d = ensemble.per_sample_S - per_sample_target(ensemble, target)
    shift = d.max()
    return float(-d.mean() + shift + np.log(np.mean(np.exp(d - shift))))


def estimate_kl_with_error(ensemble: SampleEnsemble, target: TargetActionSpec,
                           n_bins: int = 20):
    """KL estimate plus a jackknife-over-bins standard error."""
    n = len(ensemble)
    bin_size = max(n // n_bins, 1)
    n_bins = n // bin_size
    d = ensemble.per_sample_S - per_sample_target(ensemble, target)
    d = d[:n_bins * bin_size]
    shift = d.max()
    e = np.exp(d - shift)

    def kl_of(mask):
        dd, ee = d[mask], e[mask]
        return -dd.mean() + shift + np.log(ee.mean())

    full = kl_of(np.ones(len(d), dtype=bool))
    loo = np.empty(n_bins)
    for k in range(n_bins):
        mask = np.ones(len(d), dtype=bool)
        mask[k * bin_size:(k + 1) * bin_size] = False
        loo[k] = kl_of(mask)
    err = np.sqrt((n_bins - 1) / n_bins * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(err)


def default_random_init(geometry: LatticeGeometry, rng: np.random.Generator) -> CouplingSet:
    """Random initialization keeping every intermediate model normalizable:
    w, r ~ U(-0.1, 0.1), a ~ U(0.4, 0.6), b ~ U(0.05, 0.15)."""
    V, n = geometry.volume, geometry.n_links
    return CouplingSet(w=rng.uniform(-0.1, 0.1, n), a=rng.uniform(0.4, 0.6, V),
                       b=rng.uniform(0.05, 0.15, V), r=rng.uniform(-0.1, 0.1, V))


def _tied_vector(c: CouplingSet) -> np.ndarray:
    return np.array(c.homogenized())


def _apply_update(c: CouplingSet, grad: np.ndarray, eta: float, tie: bool,
                  geometry: LatticeGeometry) -> CouplingSet:
    if tie:
        v = _tied_vector(c) - eta * grad
        out = CouplingSet.homogeneous(geometry, w=v[0], a=v[1], b=v[2], r=v[3])
    else:
        out = CouplingSet.from_vector(c.as_vector() - eta * grad, geometry)
    np.clip(out.b, B_FLOOR, None, out=out.b)
    return out


def _epoch_ensemble(state: np.ndarray, couplings: CouplingSet,
                    geometry: LatticeGeometry) -> SampleEnsemble:
    configs = state.copy()
    return SampleEnsemble(configs=configs,
                          per_sample_S=action_S(configs, couplings, geometry),
                          per_sample_terms=action_terms(configs, geometry),
                          geometry=geometry, couplings=couplings.copy())


def coupling_error_vs_target(couplings: CouplingSet, target: TargetActionSpec) -> dict:
    """Per-family deviation of the homogenized couplings from the mapped
    in-family target (w = -g1, a = g2, b = g3, r = 0)."""
    g = target.effective_g
    w, a, b, r = couplings.homogenized()
    return {"w": abs(w - (-g[0])), "a": abs(a - g[1]),
            "b": abs(b - g[2]), "r": abs(r)}


def train_variational(initial: CouplingSet, target: TargetActionSpec,
                      geometry: LatticeGeometry, sampler_config: SamplerConfig,
                      epochs: int, learning_rate: float = 1e-3,
                      resample_every: int = 0, tie: bool = False,
                      sweeps_per_epoch: int = 50, grad_ceiling: float = 1e6,
                      tail_average: float = 0.0, log_every: int = 0,
                      log_fn=print) -> VariationalReport:
    """Gradient-descent minimization of the variational free energy.

    One persistent chain per ensemble sample is advanced ``sweeps_per_epoch``
    Metropolis sweeps per epoch; ``resample_every`` > 0 forces a full
    re-equilibration every that many epochs.  With ``tail_average`` > 0 the
    reported final couplings are the mean over the last fraction of epochs,
    which strips residual stochastic-gradient jitter.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    if target.is_complex:
        raise ValueError("training targets must be real (no active g5 term)")
    initial.validate_against(geometry)

    rng = make_rng(sampler_config.rng_seed)
    couplings = initial.copy()
    n_chains = sampler_config.n_samples
    width = sampler_config.proposal_width

    # initial equilibration at theta^(0)
    burn_cfg = SamplerConfig(burn_in_sweeps=sampler_config.burn_in_sweeps,
                             thinning_sweeps=0, n_samples=n_chains,
                             proposal_width=width,
                             adapt_proposal=sampler_config.adapt_proposal,
                             rng_seed=sampler_config.rng_seed, n_chains=n_chains)
    _, state, width = run_chains(SiteNeighborTable.from_couplings(couplings, geometry),
                                 burn_cfg, rng=rng)

    kl_trace, grad_norms, history = [], [], []
    tail_start = int(np.floor(epochs * (1.0 - tail_average)))
    tail_sum, tail_n = None, 0

    for epoch in range(epochs):
        if resample_every and epoch and epoch % resample_every == 0:
            _, state, width = run_chains(
                SiteNeighborTable.from_couplings(couplings, geometry),
                burn_cfg, rng=rng)
        table = SiteNeighborTable.from_couplings(couplings, geometry)
        acc = sweep_chains(state, table, width, rng, n_sweeps=sweeps_per_epoch)
        if sampler_config.adapt_proposal:
            width = _adapt_width(width, acc)

        ensemble = _epoch_ensemble(state, couplings, geometry)
        grad = variational_gradient(ensemble, target, tie=tie)
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(gnorm) or gnorm > grad_ceiling:
            raise TrainingDivergedError(
                f"gradient norm {gnorm:.3e} exceeded ceiling {grad_ceiling:.3e} "
                f"at epoch {epoch}")
        kl = estimate_kl(ensemble, target)
        kl_trace.append(kl)
        grad_norms.append(gnorm)
        history.append({"epoch": epoch, "kl": kl, "grad_norm": gnorm,
                        "couplings_mean": couplings.homogenized(),
                        "acceptance": acc})
        if log_every and epoch % log_every == 0:
            w_m, a_m, b_m, r_m = couplings.homogenized()
            log_fn(f"epoch {epoch:6d}  kl {kl: .4e}  |grad| {gnorm:.3e}  "
                   f"w {w_m:+.4f} a {a_m:+.4f} b {b_m:+.4f} r {r_m:+.4f}")

        couplings = _apply_update(couplings, grad, learning_rate, tie, geometry)
        if epoch >= tail_start:
            vec = couplings.as_vector()
            tail_sum = vec if tail_sum is None else tail_sum + vec
            tail_n += 1

    if tail_n:
        final = CouplingSet.from_vector(tail_sum / tail_n, geometry)
    else:
        final = couplings
    converged = bool(grad_norms and grad_norms[-1] < 1e-3)
    err = None
    if target.active_terms <= {1, 2, 3}:
        err = coupling_error_vs_target(final, target)
    return VariationalReport(kl_trace=np.asarray(kl_trace),
                             grad_norm_trace=np.asarray(grad_norms),
                             final_couplings=final, converged=converged,
                             coupling_error=err, history=history)
