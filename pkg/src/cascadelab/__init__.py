"""cascadelab: hashtag cascade simulation, calibration, and evaluation.

Simulates hashtag spread over a weighted reciprocal social network under
three mechanisms (network+identity, network-only, identity-only), calibrates
per-hashtag stickiness to empirical cascade size, and scores simulated
against empirical cascades with a ten-metric Cascade Match Index.
"""

__version__ = "0.1.0"

from .calibrate import CalibrationResult, fit_stickiness
from .cmi import CmiBatch, CmiRow, compose_cmi
from .engine import (IDENTITY_ONLY, NETWORK_IDENTITY, NETWORK_ONLY, VARIANTS,
                     AgentState, Cascade, DeltaCaches, SimulationConfig,
                     build_delta_caches, novelty, run_simulation)
from .experiment import (MODELS, CombinedModelReport, CovariateRow, ExperimentResult,
                         HashtagTask, RegressionResult, TrialResult, combined_models,
                         detect_initial_adopters, fit_interaction_regression,
                         make_task, run_experiment, run_trial, semantic_covariates)
from .graph import (GraphError, Network, NodePositionFeatures, adopter_edge_density,
                    eigencentrality, load_edge_list, local_transitivity,
                    louvain_communities, modularity, nearest_seed_distances,
                    node_position_features, pagerank, rewire_configuration_model,
                    save_edge_list)
from .identity import (CategorySchema, HashtagSpec, IdentityMatrix, delta_agent_hashtag,
                       delta_edge, edge_affinity, hashtag_affinity,
                       infer_hashtag_identity, load_identity_csv, save_identity_csv,
                       seed_similarity)
from .metrics import (CascadeSizeRegressor, MetricContext, MetricVector, RegionMap,
                      compute_metrics, dtw_distance, early_adopter_features,
                      lee_l, log_ratio_error, propensity_kl, relative_error)
from .worldio import (HashtagEntry, PlantedCascade, SynthWorldParams, World,
                      generate_world, load_world, plant_cascade, read_cascade,
                      read_hashtag_list, save_world, write_cascade,
                      write_hashtag_list)
