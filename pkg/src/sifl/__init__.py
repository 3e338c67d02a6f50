"""Federated learning on affinely immersion-encoded parameters.

Clients train on encoded weights, an untrusted third party averages them,
and the server decodes, with per-element differential-privacy guarantees
from the kernel noise and no accuracy cost relative to plain training.
"""

from .coding import (
    AggregatorKeys,
    DenseServerKeys,
    KeyGenConfig,
    StructuredServerKeys,
    decode_aggregate,
    decode_model,
    encode_aggregate,
    encode_model,
    encode_model_matrix,
    gen_aggregator_keys,
    gen_server_keys,
    validate_keys,
)
from .dp import (
    NormProfile,
    PrivacyParams,
    gaussian_check,
    gaussian_solve_sigma,
    laplace_eps,
    make_sensitivity,
    norm_profile,
    privacy_report,
    q_function,
    q_inverse,
    sample_gaussian,
    sample_laplace,
    sensitivity,
)
from .harness import (
    ExperimentConfig,
    emit_config,
    equivalence_report,
    load_config,
    parse_config,
    run_experiment,
)
from .keyio import load_keys, save_keys
from .models import (
    Dataset,
    LinearRegression,
    LogisticRegression,
    Mlp,
    accuracy,
    flatten_params,
    load_csv,
    loss_and_grad,
    partition_iid,
    synth_dataset,
    unflatten_params,
)
from .optim import (
    Adam,
    LocalRunConfig,
    Momentum,
    OptimizerState,
    Sgd,
    init_state,
    plain_local_run,
    step_g,
    target_local_run,
)
from .protocol import Mode, TrainingTrace, run_training

__version__ = "0.1.0"
