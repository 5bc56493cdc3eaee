"""Differentially private sequential recommendation.

Local-DP perturbation of user features, behavior-graph construction, a
gated graph neural network with privately perturbed aggregation, an
RDP-based privacy accountant, and an evaluation harness.
"""

from .accountant import (
    PrivacySpec,
    RdpCurve,
    calibrate_sigma,
    delta_default,
    epsilon2,
    rdp_of_gaussian,
    rdp_to_dp,
)
from .features import FeatureField, FeatureSchema, FeatureVector
from .gnn import (
    Batch,
    ForwardState,
    ModelDims,
    ModelParams,
    PredictionOutput,
    clip_rows,
    init_embeddings,
    init_params,
    load_checkpoint,
    noisy_aggregate,
    predict_and_loss,
    propagate_step,
    readout,
    save_checkpoint,
)
from .ldp import (
    PerturbedFeatureVector,
    perturb_features,
    perturb_number,
    perturb_onehot,
    pm_interval,
    pm_range_constant,
    select_k,
)
from .metrics import mrr_at_k, rank_items, recall_at_k
from .pipeline import (
    BehaviorGraph,
    InteractionLog,
    SplitDataset,
    SplitSample,
    build_graph,
    chronological_split,
    load_manifest,
    read_interactions,
    save_manifest,
    ten_core_filter,
    write_interactions,
)
from .experiment import EvalReport, ExperimentConfig, run_experiment
from .training import (
    GraphSample,
    TrainConfig,
    apply_edgerand,
    evaluate_samples,
    make_batches,
    materialize_samples,
    train_model,
)

__version__ = "0.1.0"
