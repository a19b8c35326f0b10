"""Lattice phi^4 scalar field theory as a trainable Markov random field.

Sampling, variational self-training against target actions, complex-action
reweighting with overlap diagnostics, maximum-likelihood learning from data,
bipartite quartic networks, and quadrature oracles for exact small-lattice
ground truth.
"""

from .lattice import (CouplingSet, DegenerateLatticeError, LatticeGeometry,
                      StandardCouplings, TargetActionSpec, action_S,
                      action_gradient_theta, action_target, action_terms,
                      build_square_lattice, clique_log_potentials,
                      couplings_from_target_g, local_action_delta,
                      map_standard_couplings)
from .mcmc import (ObservableEstimate, SampleEnsemble, SamplerConfig,
                   SiteNeighborTable, binned_error_analysis,
                   estimate_observable, jackknife_error, magnetization,
                   make_rng, metropolis_sweep, run_chains, sample_ensemble,
                   sample_target_ensemble, sweep_chains)
from .variational import (TrainingDivergedError, VariationalReport,
                          default_random_init, estimate_kl,
                          estimate_kl_with_error, train_variational,
                          variational_gradient)
from .reweight import (ReweightRequest, WeightFunction, build_weight_function,
                       effective_sample_size, overlap_diagnostic,
                       reweight_observable)
from .likelihood import (Dataset, LikelihoodHyperparams, LikelihoodReport,
                         data_gradient, equilibration_rollout,
                         field_to_pixels, moment_matched_init,
                         pixels_to_field, site_marginal_histogram,
                         train_on_data)
from .phi4nn import (BipartiteCouplings, LayerState, RBMHyperparams,
                     RBMReport, bipartite_action, bipartite_action_gradient,
                     extract_features, gibbs_update_hidden,
                     gibbs_update_visible, ising_limit_check,
                     sample_quartic_array, sample_quartic_site, train_rbm)
from .oracle import (GridTooLargeError, QuadratureSpec, TruncationError,
                     exact_expectation, exact_kl, exact_log_Z,
                     exact_variational_free_energy,
                     exact_variational_gradient, site_density_grid)

__version__ = "1.0.0"
