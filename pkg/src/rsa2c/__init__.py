"""Kernel actor-critic with attribution-gated (RKHS-SHAP) Mahalanobis kernels."""

from .actor import PolicyParams, actor_update, log_prob, policy_mean, sample_action, score_atom
from .config import RunConfig, load_config
from .critics import AdvantageCritic, ValueCritic, advantage_eval, fit_advantage, td_step, value_eval
from .dictionary import SparseDictionary, ald_project, insert_or_replace
from .kernels import KernelSpec, mahalanobis_eval, ovk_eval, product_kernel_eval, rbf_eval
from .shap import EmbeddingBuffer, coalition_value_cme, coalition_value_kme, gate_weights, shapley_exact, shapley_sampled
from .trainer import EpochRecord, evaluate, run_epoch, run_experiment, stepsize

__version__ = "0.1.0"
