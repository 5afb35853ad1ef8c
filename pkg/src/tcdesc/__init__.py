"""tcdesc: topology-consistent descriptor learning at desk scale.

Neighborhood topology weights (hard, heat-kernel, closed-form linear
combination), sparse global topology vectors with an l1 topology
distance, an adaptive-lambda fused triplet loss with hardest-negative
mining, analytic gradients with a finite-difference verifier, a toy
SGD trainer, and matching-evaluation metrics.
"""

from .core import (DescriptorBatch, NeighborSet, knn, load_descriptors,
                   normalize_batch, pairwise_distances, save_descriptors)
from .grad import (GradientBatch, finite_difference_check, loss_gradient)
from .loss import (LossConfig, LossReport, adaptive_lambda,
                   fused_positive_distance, hardest_negative, matching_count,
                   tcdesc_loss)
from .metrics import (MetricReport, VerificationSample, evaluate_batch,
                      fpr95, matching_score, neighborhood_report)
from .topology import (TopologyDistanceReport, TopologyVector,
                       batch_topology_distance, global_mapping,
                       topology_distance)
from .trainer import (EmbeddingNet, SyntheticPairSet, TrainConfig,
                      generate_pairs, load_model, run_experiment, save_model,
                      train)
from .weights import (TopologyWeights, hard_proxy_weights, hard_weights,
                      heat_kernel_weights, linear_combination_weights)

__version__ = "0.1.0"

__all__ = [
    "DescriptorBatch", "NeighborSet", "knn", "normalize_batch",
    "pairwise_distances", "load_descriptors", "save_descriptors",
    "TopologyWeights", "hard_weights", "hard_proxy_weights",
    "heat_kernel_weights", "linear_combination_weights",
    "TopologyVector", "TopologyDistanceReport", "global_mapping",
    "topology_distance", "batch_topology_distance",
    "LossConfig", "LossReport", "matching_count", "adaptive_lambda",
    "fused_positive_distance", "hardest_negative", "tcdesc_loss",
    "GradientBatch", "loss_gradient", "finite_difference_check",
    "EmbeddingNet", "TrainConfig", "SyntheticPairSet", "generate_pairs",
    "train", "run_experiment", "save_model", "load_model",
    "MetricReport", "VerificationSample", "fpr95", "matching_score",
    "neighborhood_report", "evaluate_batch",
]
