"""Hierarchical spectral label filtering for extreme classification.

A routing tree learned from balance-constrained top-eigenvector problems
maps each example to a small candidate label set; a shared linear classifier
restricted to that set produces the final prediction, at a cost independent
of the total number of labels.
"""

from ._backend import COMPILED, backend_name
from .classifier import (
    ClassifierModel,
    TrainConfig,
    deserialize_model,
    predict,
    predict_batch,
    restricted_softmax,
    serialize_model,
    train,
)
from .dataio import (
    Dataset,
    SynthConfig,
    hash_features,
    hellinger_transform,
    make_synthetic,
    parse_svmlight,
    rehash_features,
    serialize_svmlight,
)
from .metrics import benchmark_inference, evaluate, purity_balance, split_diagnostics
from .sparsecore import SparseMatrix, SparseRow, spmv, spmv_t_weighted, weighted_median
from .spectral import (
    DegenerateNodeError,
    RouterSolution,
    SolverParams,
    hat_apply_multiclass,
    hat_apply_multilabel,
    node_sigma,
    routing_probability,
    solve_node,
)
from .tree import (
    ArtifactFormatError,
    BuildReport,
    LabelTree,
    TreeConfig,
    TreeNode,
    build_tree,
    deserialize_tree,
    estimate_recall,
    route_deterministic,
    route_deterministic_batch,
    route_sampled,
    serialize_tree,
)

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "ArtifactFormatError",
    "BuildReport",
    "ClassifierModel",
    "Dataset",
    "DegenerateNodeError",
    "LabelTree",
    "RouterSolution",
    "SolverParams",
    "SparseMatrix",
    "SparseRow",
    "SynthConfig",
    "TrainConfig",
    "TreeConfig",
    "TreeNode",
    "backend_name",
    "benchmark_inference",
    "build_tree",
    "deserialize_model",
    "deserialize_tree",
    "estimate_recall",
    "evaluate",
    "hash_features",
    "hat_apply_multiclass",
    "hat_apply_multilabel",
    "hellinger_transform",
    "make_synthetic",
    "node_sigma",
    "parse_svmlight",
    "predict",
    "predict_batch",
    "purity_balance",
    "rehash_features",
    "restricted_softmax",
    "route_deterministic",
    "route_deterministic_batch",
    "route_sampled",
    "routing_probability",
    "serialize_model",
    "serialize_svmlight",
    "serialize_tree",
    "solve_node",
    "spmv",
    "spmv_t_weighted",
    "split_diagnostics",
    "train",
    "weighted_median",
]
