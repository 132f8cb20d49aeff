"""Surrogate-assisted negatively correlated search for policy optimization.

Parallel negatively correlated search over flat neural-network weight
vectors, with a random-embedding dimensionality reducer and a fuzzy k-NN
pre-selection surrogate that screens candidates before the one true
(expensive) fitness evaluation each process spends per iteration.
"""

from .config import RunConfig, load_config, parse_config_text, save_config
from .embedding import IdentityEmbedding, RandomEmbedding, generate
from .environments import (
    BenchmarkEvaluator,
    CartPole,
    EffectiveSphere,
    EpisodicEvaluator,
    FitnessBudget,
    effective_sphere,
    evaluate,
    evaluate_episodes,
    run_episode,
)
from .errors import (
    BudgetExhaustedError,
    CheckpointError,
    ConfigurationError,
    EnvProtocolError,
    InputError,
    NcskitError,
    NumericError,
)
from .ncs import (
    EmbeddingConfig,
    IterationReport,
    NcsConfig,
    NcsEngine,
    SearchProcess,
    accept_offspring,
    adapt_sigma,
    bhattacharyya,
    diversity,
    sample_candidates,
)
from .policy import (
    Conv2d,
    Dense,
    NetworkSpec,
    PolicyVector,
    flatten,
    format_network_spec,
    forward,
    forward_logits,
    param_count,
    parse_network_spec,
    unflatten,
)
from .runner import RunResult, compare, resume, run, sweep, test_policy
from .surrogate import (
    EvaluationArchive,
    EvaluationRecord,
    FcpsConfig,
    label,
    membership,
    preselect,
)

__version__ = "0.1.0"
