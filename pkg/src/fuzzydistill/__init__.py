"""Distill deep-Q policies on classic-control tasks into compact,
interpretable neuro-fuzzy controllers."""

from .distill import (
    DistillConfig,
    distill,
    kl_loss,
    merge_regularizer,
    naive_substitution,
    temperature_softmax,
    tnorm_regularizer,
    total_loss,
)
from .envs import CartPole, MountainCar, make_env
from .gmminit import DistillSample, GmmModel, collect_dataset, fit_gmm, rules_from_gmm
from .harness import (
    RunConfig,
    default_run_config,
    evaluate,
    render_report,
    render_rule_table,
    run_experiment,
)
from .nfc import FuzzySetParams, NeuroFuzzyController
from .postproc import jaccard, merge_sets, postprocess, prune_weights
from .qnet import DqnConfig, MlpQNetwork, ReplayBuffer, Transition, train_teacher

__version__ = "0.1.0"
