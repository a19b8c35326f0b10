import numpy as np
import pytest

from phi4ml.lattice import CouplingSet, TargetActionSpec, build_square_lattice
from phi4ml.mcmc import SamplerConfig, sample_ensemble
from phi4ml.oracle import QuadratureSpec


@pytest.fixture(scope="session")
def geom2():
    return build_square_lattice(2)


@pytest.fixture(scope="session")
def geom4():
    return build_square_lattice(4)


@pytest.fixture(scope="session")
def quad():
    return QuadratureSpec()


@pytest.fixture(scope="session")
def canon_couplings(geom2):
    """Small-lattice model used for oracle cross-checks."""
    return CouplingSet.homogeneous(geom2, w=0.3, a=0.8, b=0.2, r=0.0)


@pytest.fixture(scope="session")
def a3_target():
    return TargetActionSpec(g=(-1.0, 1.52425, 0.175, 0.0, 0.0),
                            active_terms=frozenset({1, 2, 3}))


@pytest.fixture(scope="session")
def canon_ensemble(geom2, canon_couplings):
    """100k-sample ensemble from the canonical 2x2 model."""
    cfg = SamplerConfig(burn_in_sweeps=2000, thinning_sweeps=5,
                        n_samples=100000, rng_seed=7, n_chains=500)
    return sample_ensemble(canon_couplings, geom2, cfg)


def ks_statistic(samples, x, density):
    """Kolmogorov-Smirnov statistic of samples against a gridded 1D density."""
    dx = x[1] - x[0]
    cdf = np.cumsum(density) * dx
    cdf /= cdf[-1]
    s = np.sort(np.asarray(samples))
    model = np.interp(s, x, cdf)
    n = len(s)
    empirical_hi = np.arange(1, n + 1) / n
    empirical_lo = np.arange(0, n) / n
    return float(max(np.abs(empirical_hi - model).max(),
                     np.abs(model - empirical_lo).max()))
