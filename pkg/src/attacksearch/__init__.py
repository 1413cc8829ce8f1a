"""Automatic design of composite adversarial attacks by memetic multi-objective search."""

__version__ = "0.1.0"

from .attacks import AttackBudget, AttackOp, cw, ddn, fgsm, mi, mt, pgd, project, run_operator
from .diffmodel import Classifier, Dataset, TrainConfig, accuracy, forward, input_gradient, make_desk_dataset, train_adversarial, train_standard
from .evaluator import (
    EvalOutcome, Evaluator, RoughEvaluator, kendall_tau, rank_fidelity, restart_ablation, select_representative,
)
from .losses import LossSpec, all_loss_specs, loss_value, softmax
from .search import SearchConfig, local_search, memetic_search
from .sequence import AttackCell, AttackSequence, ExecutionOptions, SearchSpace, decode, encode, execute, parse_listing, validate

__all__ = [
    "AttackBudget", "AttackCell", "AttackOp", "AttackSequence", "Classifier", "accuracy", "all_loss_specs", "Dataset", "EvalOutcome",
    "Evaluator", "ExecutionOptions", "LossSpec", "RoughEvaluator", "SearchConfig", "SearchSpace", "TrainConfig",
    "cw", "ddn", "decode", "encode", "execute", "fgsm", "forward", "input_gradient", "kendall_tau",
    "local_search", "loss_value", "make_desk_dataset", "memetic_search", "mi", "mt", "parse_listing", "pgd", "project", "rank_fidelity", "restart_ablation",
    "run_operator", "select_representative", "softmax", "train_adversarial", "train_standard", "validate",
]
