"""Training text classifiers under label noise: injection, noise-handling
strategies, early stopping on noisy validation, and loss-separability
diagnostics."""

from .data import (
    Dataset,
    Example,
    SplitSpec,
    featurize,
    load_jsonl,
    split,
    synth_dataset,
    write_jsonl,
)
from .noise import (
    RuleSet,
    TransitionMatrix,
    diag_dominant,
    fdr,
    inject,
    inject_rules,
    matrix_from_pairs,
    single_flip_matrix,
    uniform_matrix,
)
from .model import Params, ce_loss, evaluate, forward, grad_step, init_params, ls_loss
from .strategies import (
    CoTeaching,
    LabelSmoothing,
    NMat,
    NMwR,
    NoValidation,
    Strategy,
    Vanilla,
    coteach_select,
    keep_fraction,
    nmat_loss,
    nmwr_loss,
)
from .trainer import RunRecord, TrainConfig, compare_val_policies, train
from .diagnostics import LossSnapshot, RocCurve, histogram, roc, snapshot_losses

__all__ = [
    "Dataset",
    "Example",
    "SplitSpec",
    "featurize",
    "load_jsonl",
    "split",
    "synth_dataset",
    "write_jsonl",
    "RuleSet",
    "TransitionMatrix",
    "diag_dominant",
    "fdr",
    "inject",
    "inject_rules",
    "matrix_from_pairs",
    "single_flip_matrix",
    "uniform_matrix",
    "Params",
    "ce_loss",
    "evaluate",
    "forward",
    "grad_step",
    "init_params",
    "ls_loss",
    "CoTeaching",
    "LabelSmoothing",
    "NMat",
    "NMwR",
    "NoValidation",
    "Strategy",
    "Vanilla",
    "coteach_select",
    "keep_fraction",
    "nmat_loss",
    "nmwr_loss",
    "RunRecord",
    "TrainConfig",
    "compare_val_policies",
    "train",
    "LossSnapshot",
    "RocCurve",
    "histogram",
    "roc",
    "snapshot_losses",
]
