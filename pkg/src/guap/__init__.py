"""Universal adversarial patching of graphs for node-classification attacks.

A small set of patch nodes and trained patch edges is computed once;
afterwards any single node is attacked by flipping its connections to the
patch, changing that node's prediction while leaving all others intact.
"""

from .config import AttackHyper, TrainConfig
from .data import (DatasetDescriptor, EvalReport, PatchArtifact, descriptor_for,
                   load_dataset, load_model, load_patch, save_model, save_patch,
                   write_report)
from .errors import (ConfigError, DegenerateGradientError, FormatError,
                     GuapError, ParseError, ValidationError)
from .features import (FeatureStats, binarized_one_probability,
                       fit_feature_stats, sample_patch_features)
from .gcn import (GcnParams, forward, masked_loss, predict_labels,
                  predicted_label, train)
from .graph import (Graph, NormalizedAdjacency, PatchedAdjacency, attack_flip,
                    binarize, clip01_and_zero_diag, l2_project_patch_columns,
                    largest_connected_component, normalize)
from .attack import IgpResult, asr, guap, igp, sample_training_nodes
from .evaluate import (baseline_no_edges, baseline_random_edges, evaluate_patch,
                       patch_edge_count, regenerate_features_eval, sweep,
                       transfer_retrain_check)

__version__ = "0.1.0"
