"""Learning from data: maximum likelihood for the phi^4 Markov random field.

The log-likelihood gradient is

    d ln p / d theta = <dS/dtheta>_model - dS/dtheta|_data

so gradient descent with L = -d ln p / d theta matches the model moments of
every sufficient statistic (-phi_i phi_j per link, phi^2, phi^4, phi per
site) to the data moments.  Model expectations come from persistent
contrastive-divergence chains (PCD) advanced a few sweeps per epoch.

The optional symmetry-breaking couplings r_i * phi_i let the model pick one
of the two Z2-related modes; with r frozen at zero the learned marginal is
symmetric under phi -> -phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import (CouplingSet, LatticeGeometry, action_S, action_terms,
                      action_gradient_theta)
from .mcmc import (SampleEnsemble, SamplerConfig, SiteNeighborTable,
                   make_rng, run_chains, sweep_chains, _adapt_width)
from .variational import B_FLOOR, TrainingDivergedError, _apply_update


@dataclass
class Dataset:
    """Field configurations sharing one geometry, one per row."""

    samples: np.ndarray        # (N, V)
    source: str = ""

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if len(self.samples) == 0:
            raise ValueError("dataset must be non-empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return len(self.samples)


@dataclass
class LikelihoodHyperparams:
    epochs: int = 1000
    learning_rate: float = 0.1
    cd_steps: int = 10
    n_chains: int = 64
    batch_size: int | None = None   # None: full batch (datasets <= 1e4)
    tie: bool = False
    freeze_r: bool = False
    proposal_width: float = 1.0
    burn_in_sweeps: int = 500
    adapt_proposal: bool = True
    rng_seed: int = 0
    grad_ceiling: float = 1e6

    def __post_init__(self):
        if self.cd_steps < 1 or self.n_chains < 1:
            raise ValueError("cd_steps and n_chains must be >= 1")


@dataclass
class LikelihoodReport:
    couplings: CouplingSet
    loss_trace: np.ndarray          # moment-mismatch norm per epoch
    final_chains: np.ndarray        # (n_chains, V) PCD state
    history: list = field(default_factory=list)


def _stats(configs: np.ndarray, geometry: LatticeGeometry, tie: bool) -> np.ndarray:
    if tie:
        t = action_terms(configs, geometry)
        return np.stack([-t[..., 0], t[..., 1], t[..., 2],
                         configs.sum(axis=-1)], axis=-1)
    return action_gradient_theta(configs, geometry)


def data_gradient(batch: np.ndarray, model_ensemble: SampleEnsemble,
                  geometry: LatticeGeometry, tie: bool = False,
                  freeze_r: bool = False) -> np.ndarray:
    """L = -d ln p / d theta averaged over the batch:
    mean_data[dS/dtheta] - mean_model[dS/dtheta]."""
    batch = np.atleast_2d(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    g = (_stats(batch, geometry, tie).mean(axis=0)
         - _stats(model_ensemble.configs, geometry, tie).mean(axis=0))
    if freeze_r:
        if tie:
            g[3] = 0.0
        else:
            g[geometry.n_links + 2 * geometry.volume:] = 0.0
    return g


def train_on_data(dataset: Dataset, geometry: LatticeGeometry,
                  initial: CouplingSet, hyper: LikelihoodHyperparams,
                  log_every: int = 0, log_fn=print) -> LikelihoodReport:
    """PCD maximum-likelihood training of the coupling constants."""
    initial.validate_against(geometry)
    if dataset.samples.shape[1] != geometry.volume:
        raise ValueError("dataset configuration length does not match geometry")

    rng = make_rng(hyper.rng_seed)
    couplings = initial.copy()
    width = hyper.proposal_width

    burn_cfg = SamplerConfig(burn_in_sweeps=hyper.burn_in_sweeps,
                             thinning_sweeps=0, n_samples=hyper.n_chains,
                             proposal_width=width,
                             adapt_proposal=hyper.adapt_proposal,
                             rng_seed=hyper.rng_seed, n_chains=hyper.n_chains)
    _, chains, width = run_chains(SiteNeighborTable.from_couplings(couplings, geometry),
                                  burn_cfg, rng=rng)

    n = len(dataset)
    batch_size = hyper.batch_size or n
    loss_trace, history = [], []
    for epoch in range(hyper.epochs):
        if batch_size >= n:
            batch = dataset.samples
        else:
            batch = dataset.samples[rng.choice(n, size=batch_size, replace=False)]

        table = SiteNeighborTable.from_couplings(couplings, geometry)
        acc = sweep_chains(chains, table, width, rng, n_sweeps=hyper.cd_steps)
        if hyper.adapt_proposal:
            width = _adapt_width(width, acc)

        model = SampleEnsemble(configs=chains.copy(),
                               per_sample_S=action_S(chains, couplings, geometry),
                               per_sample_terms=action_terms(chains, geometry),
                               geometry=geometry, couplings=couplings.copy())
        grad = data_gradient(batch, model, geometry, tie=hyper.tie,
                             freeze_r=hyper.freeze_r)
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(gnorm) or gnorm > hyper.grad_ceiling:
            raise TrainingDivergedError(
                f"gradient norm {gnorm:.3e} exceeded ceiling at epoch {epoch}")
        loss_trace.append(gnorm)
        history.append({"epoch": epoch, "moment_mismatch": gnorm,
                        "couplings_mean": couplings.homogenized(),
                        "acceptance": acc})
        if log_every and epoch % log_every == 0:
            w_m, a_m, b_m, r_m = couplings.homogenized()
            log_fn(f"epoch {epoch:6d}  mismatch {gnorm:.4e}  "
                   f"w {w_m:+.4f} a {a_m:+.4f} b {b_m:+.4f} r {r_m:+.4f}  acc {acc:.2f}")

        couplings = _apply_update(couplings, grad, hyper.learning_rate,
                                  hyper.tie, geometry)

    return LikelihoodReport(couplings=couplings,
                            loss_trace=np.asarray(loss_trace),
                            final_chains=chains, history=history)


def moment_matched_init(dataset: Dataset, geometry: LatticeGeometry,
                        symmetric: bool = False) -> CouplingSet:
    """Data-moment initialization of the site couplings (the analogue of
    initializing RBM visible biases from data statistics).

    Asymmetric: Gaussian fit per site value, a = 1/(2 var), r = -2 a mean.
    Symmetric (r frozen): double-well fit with minima at +-m and well width
    sigma, using b = 1/(16 sigma^2 m^2), a = -2 b m^2.  Link couplings start
    at zero; training refines everything.
    """
    v = dataset.samples.ravel()
    if symmetric:
        m = float(np.abs(v).mean())
        sig2 = max(float(np.var(np.abs(v))), 1e-6)
        m = max(m, 1e-3)
        b = 1.0 / (16.0 * sig2 * m ** 2)
        return CouplingSet.homogeneous(geometry, w=0.0, a=-2.0 * b * m ** 2, b=b)
    mean = float(v.mean())
    var = max(float(v.var()), 1e-6)
    a = 1.0 / (2.0 * var)
    return CouplingSet.homogeneous(geometry, w=0.0, a=a, b=B_FLOOR,
                                   r=-2.0 * a * mean)


def equilibration_rollout(couplings: CouplingSet, geometry: LatticeGeometry,
                          start: np.ndarray, checkpoints: list[int],
                          proposal_width: float = 0.5,
                          rng_seed: int = 0) -> list[np.ndarray]:
    """Snapshots of one Metropolis chain at the requested sweep counts,
    starting from ``start`` (checkpoint 0 returns the start unchanged)."""
    if sorted(checkpoints) != list(checkpoints):
        raise ValueError("checkpoints must be non-decreasing")
    table = SiteNeighborTable.from_couplings(couplings, geometry)
    rng = make_rng(rng_seed)
    phi = np.array(start, dtype=float).reshape(1, -1)
    out, done = [], 0
    for ckpt in checkpoints:
        if ckpt > done:
            sweep_chains(phi, table, proposal_width, rng, n_sweeps=ckpt - done)
            done = ckpt
        out.append(phi[0].copy())
    return out


def pixels_to_field(pixels: np.ndarray) -> np.ndarray:
    """Map grayscale [0, 255] to the field's symmetric range [-1, 1]."""
    return 2.0 * np.asarray(pixels, dtype=float) / 255.0 - 1.0


def field_to_pixels(phi: np.ndarray) -> np.ndarray:
    """Inverse of pixels_to_field, clipped and rounded to [0, 255]."""
    v = np.rint((np.asarray(phi, dtype=float) + 1.0) * 255.0 / 2.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def site_marginal_histogram(configs: np.ndarray, n_bins: int = 80,
                            value_range: tuple[float, float] | None = None):
    """Normalized histogram of all site values (the marginal density plot).
    Returns (bin_centers, density)."""
    values = np.asarray(configs).ravel()
    hist, edges = np.histogram(values, bins=n_bins, range=value_range, density=True)
    return 0.5 * (edges[1:] + edges[:-1]), hist
