"""Metropolis sampling of the phi^4 Boltzmann distribution and error analysis.

The update kernel is a plain single-site Metropolis sweep with uniform
symmetric proposals phi' = phi + U(-delta, delta), accepted with
min(1, exp(-dS)).  Internally the kernel is vectorized over independent
chains (one numpy op set per site, all chains at once); the public
``metropolis_sweep`` is the single-chain case of the same kernel.

Randomness comes from a counter-based Philox generator seeded from the
sampler seed, so every trajectory is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import (CouplingSet, LatticeGeometry, TargetActionSpec,
                      action_S, action_terms)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; the shared RNG contract for all sampling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class SamplerConfig:
    burn_in_sweeps: int = 1000
    thinning_sweeps: int = 10
    n_samples: int = 1000
    proposal_width: float = 1.0
    adapt_proposal: bool = True
    rng_seed: int = 0
    n_chains: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.proposal_width <= 0:
            raise ValueError("proposal_width must be > 0")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class SampleEnsemble:
    """Retained configurations with cached action values and term sums."""

    configs: np.ndarray          # (N, V)
    per_sample_S: np.ndarray     # (N,)
    per_sample_terms: np.ndarray  # (N, 5)
    geometry: LatticeGeometry
    couplings: CouplingSet       # provenance: generator of the ensemble

    def __post_init__(self):
        n = len(self.configs)
        if not (len(self.per_sample_S) == n and len(self.per_sample_terms) == n):
            raise ValueError("ensemble arrays must have equal length")

    def __len__(self):
        return len(self.configs)


@dataclass(frozen=True)
class ObservableEstimate:
    mean: float | complex
    std_error: float            # standard error of the real part
    n_effective: float
    std_error_imag: float = 0.0
    low_overlap: bool = False

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be >= 0")


class SiteNeighborTable:
    """Per-site padded neighbor index/weight arrays for local updates.

    A link (i, j) with coupling w contributes -w phi_i phi_j to the action,
    so the local linear coefficient at site i is -sum_nb w phi_nb.
    """

    def __init__(self, geometry: LatticeGeometry, link_lists, a, b, r):
        V = geometry.volume
        nbrs = [[] for _ in range(V)]
        for links, weights in link_lists:
            for (i, j), w in zip(links, weights):
                nbrs[i].append((j, w))
                nbrs[j].append((i, w))
        deg = max((len(n) for n in nbrs), default=0)
        self.idx = np.zeros((V, max(deg, 1)), dtype=np.intp)
        self.wt = np.zeros((V, max(deg, 1)))
        for i, n in enumerate(nbrs):
            for k, (j, w) in enumerate(n):
                self.idx[i, k] = j
                self.wt[i, k] = w
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.volume = V

    @classmethod
    def from_couplings(cls, couplings: CouplingSet, geometry: LatticeGeometry):
        couplings.validate_against(geometry)
        return cls(geometry, [(geometry.links, couplings.w)],
                   couplings.a, couplings.b, couplings.r)

    @classmethod
    def from_target(cls, target: TargetActionSpec, geometry: LatticeGeometry):
        """Sampling table for a *real* target action (g5 must be inactive)."""
        if target.is_complex:
            raise ValueError("cannot sample a complex target action directly")
        g = target.effective_g
        V = geometry.volume
        return cls(geometry,
                   [(geometry.links, np.full(len(geometry.links), -g[0])),
                    (geometry.nnn_links, np.full(len(geometry.nnn_links), -g[3]))],
                   np.full(V, g[1]), np.full(V, g[2]), np.zeros(V))


def sweep_chains(phi: np.ndarray, table: SiteNeighborTable, proposal_width: float,
                 rng: np.random.Generator, n_sweeps: int = 1) -> float:
    """Run Metropolis sweeps in place on a (n_chains, V) state block.

    Each sweep visits sites 0..V-1 in order; returns the acceptance fraction
    over all proposals.
    """
    n_chains, V = phi.shape
    accepted = 0
    for _ in range(n_sweeps):
        steps = rng.uniform(-proposal_width, proposal_width, size=(V, n_chains))
        u = rng.random(size=(V, n_chains))
        for i in range(V):
            old = phi[:, i]
            new = old + steps[i]
            nb = phi[:, table.idx[i]] @ table.wt[i]
            d_s = (-nb * (new - old)
                   + table.a[i] * (new ** 2 - old ** 2)
                   + table.b[i] * (new ** 4 - old ** 4)
                   + table.r[i] * (new - old))
            acc = u[i] < np.exp(np.minimum(-d_s, 0.0))
            phi[:, i] = np.where(acc, new, old)
            accepted += int(acc.sum())
    return accepted / (n_sweeps * V * n_chains)


def metropolis_sweep(config: np.ndarray, couplings: CouplingSet,
                     geometry: LatticeGeometry, proposal_width: float,
                     rng: np.random.Generator) -> float:
    """One in-place Metropolis sweep over a single configuration; returns
    the fraction of accepted proposals."""
    if proposal_width <= 0:
        raise ValueError("proposal_width must be > 0")
    table = SiteNeighborTable.from_couplings(couplings, geometry)
    block = config.reshape(1, -1)
    return sweep_chains(block, table, proposal_width, rng)


def _adapt_width(width: float, acceptance: float) -> float:
    # target window 50-70% acceptance
    if acceptance < 0.5:
        return max(width * 0.85, 1e-4)
    if acceptance > 0.7:
        return min(width * 1.15, 50.0)
    return width


def run_chains(table: SiteNeighborTable, cfg: SamplerConfig,
               rng: np.random.Generator | None = None,
               initial: np.ndarray | None = None):
    """Burn in n_chains chains and collect thinned samples.

    Returns (samples (N, V), final_state (n_chains, V), frozen proposal width).
    Proposal-width adaptation happens only during burn-in; the post-burn-in
    kernel is fixed so retained samples come from a stationary chain.
    """
    rng = rng if rng is not None else make_rng(cfg.rng_seed)
    V = table.volume
    if initial is None:
        phi = rng.normal(0.0, 1.0, size=(cfg.n_chains, V))
    else:
        phi = np.array(initial, dtype=float).reshape(cfg.n_chains, V)

    width = cfg.proposal_width
    adapt_block = 20
    done = 0
    while done < cfg.burn_in_sweeps:
        n = min(adapt_block, cfg.burn_in_sweeps - done)
        acc = sweep_chains(phi, table, width, rng, n_sweeps=n)
        done += n
        if cfg.adapt_proposal:
            width = _adapt_width(width, acc)

    per_chain = -(-cfg.n_samples // cfg.n_chains)  # ceil
    out = np.empty((cfg.n_chains, per_chain, V))
    for k in range(per_chain):
        sweep_chains(phi, table, width, rng, n_sweeps=max(cfg.thinning_sweeps, 1))
        out[:, k] = phi
    samples = out.reshape(-1, V)[:cfg.n_samples]
    return samples, phi, width


def sample_ensemble(couplings: CouplingSet, geometry: LatticeGeometry,
                    cfg: SamplerConfig) -> SampleEnsemble:
    """Draw a thinned, burned-in ensemble from exp(-S(phi; theta))."""
    table = SiteNeighborTable.from_couplings(couplings, geometry)
    samples, _, _ = run_chains(table, cfg)
    return SampleEnsemble(configs=samples,
                          per_sample_S=action_S(samples, couplings, geometry),
                          per_sample_terms=action_terms(samples, geometry),
                          geometry=geometry, couplings=couplings.copy())


def sample_target_ensemble(target: TargetActionSpec, geometry: LatticeGeometry,
                           cfg: SamplerConfig) -> SampleEnsemble:
    """Direct simulation of a real target action (terms 1-4).  The cached
    per_sample_S is the target action value; provenance couplings are the
    equivalent nearest-neighbor set only where one exists."""
    table = SiteNeighborTable.from_target(target, geometry)
    samples, _, _ = run_chains(table, cfg)
    terms = action_terms(samples, geometry)
    g = target.effective_g
    s_vals = terms[:, :4] @ g[:4]
    equivalent = CouplingSet.homogeneous(geometry, w=-g[0], a=g[1], b=g[2])
    return SampleEnsemble(configs=samples, per_sample_S=s_vals,
                          per_sample_terms=terms, geometry=geometry,
                          couplings=equivalent)


def magnetization(config: np.ndarray) -> float | np.ndarray:
    """Volume-averaged field value m = sum_i phi_i / V."""
    out = np.mean(np.asarray(config, dtype=float), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _binned_means(values: np.ndarray, bin_size: int) -> np.ndarray:
    n_bins = len(values) // bin_size
    return values[:n_bins * bin_size].reshape(n_bins, bin_size).mean(axis=1)


def jackknife_error(bin_means: np.ndarray) -> float:
    """Jackknife standard error of the mean over pre-binned data."""
    n = len(bin_means)
    if n < 2:
        return 0.0
    total = bin_means.sum()
    loo = (total - bin_means) / (n - 1)
    center = loo.mean()
    var = (n - 1) / n * np.sum(np.abs(loo - center) ** 2)
    return float(np.sqrt(var))


def binned_error_analysis(values: np.ndarray, min_bins: int = 16):
    """Standard error via binning: double the bin size until the jackknife
    error stops growing (autocorrelation plateau).  Returns (error, bin_size)."""
    values = np.asarray(values)
    errors, sizes = [], []
    size = 1
    while len(values) // size >= min_bins:
        errors.append(jackknife_error(_binned_means(values, size)))
        sizes.append(size)
        size *= 2
    if not errors:
        return jackknife_error(values), 1
    pick = 0
    for k in range(1, len(errors)):
        if errors[k] > errors[pick] * 1.05:
            pick = k
        else:
            break
    return errors[pick], sizes[pick]


def estimate_observable(ensemble: SampleEnsemble, per_config_function) -> ObservableEstimate:
    """Mean and binning/jackknife standard error of a per-configuration
    observable over the ensemble."""
    if len(ensemble) < 2:
        raise ValueError("need at least 2 samples for an error estimate")
    try:
        values = np.asarray(per_config_function(ensemble.configs))
        if values.shape != (len(ensemble),):
            raise ValueError
    except (ValueError, TypeError, IndexError):
        values = np.asarray([per_config_function(c) for c in ensemble.configs])
    err, _ = binned_error_analysis(values)
    var = float(np.var(values.real) + (np.var(values.imag) if np.iscomplexobj(values) else 0.0))
    n_eff = len(values) if err == 0 else min(len(values), var / err ** 2)
    mean = values.mean()
    mean = complex(mean) if np.iscomplexobj(values) else float(mean)
    return ObservableEstimate(mean=mean, std_error=err, n_effective=float(n_eff))
