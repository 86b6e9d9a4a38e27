"""Learning RBM-backed quantum-state magnitudes from computational-basis
measurements: two-hop structure learning plus Alphatron regression."""

__version__ = "0.1.0"

from .errors import CapacityError, DomainError, RbmTomoError, StructuralError
from .models import (DistributionTable, MrfPotential, ModelClassReport, RbmModel,
                     TwoHopGraph, induced_mrf_from_distribution, load_model,
                     load_potential, mrf_distribution, mrf_partial_potential,
                     mrf_potential_eval, rbm_marginal_distribution, rbm_two_hop,
                     rbm_validate, save_model, save_potential)
from .sampling import (NoiseSpec, SampleSet, apply_bitflip, perturb_linf,
                       sample_exact, sample_gibbs)
from .structure import (LearnThresholds, NeighborhoodEstimate, RobustnessLimits,
                        SampleBounds, StructureConfig, StructureResult,
                        compute_robustness_limits, compute_sample_bounds,
                        compute_thresholds, empirical_cond_covariance_avg,
                        empirical_influence, exact_cond_covariance_avg,
                        exact_influence, learn_full_structure,
                        learn_structure_ferro, learn_structure_ferro_exact,
                        learn_structure_lc, learn_structure_lc_exact)
from .regression import (AlphatronConfig, NodeRegressionResult, alphatron_fit,
                         assemble_potential, build_node_features,
                         conditional_query, learn_node_potential,
                         learn_node_potential_exact, neighbor_subsets,
                         reconstruct_distribution)
from .metrics import (EvalReport, evaluate_tables, fidelity, lp_distance,
                      structure_score)
from .harness import (ExperimentConfig, ExperimentReport, GibbsSpec, ModelSpec,
                      Targets, gen_chain_model, gen_random_lc_rbm, load_config,
                      run_partial_learning_experiment, run_state_learning_experiment,
                      run_structure_experiment)
