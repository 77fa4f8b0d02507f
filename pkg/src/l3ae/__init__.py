"""Linear autoencoder recommenders with semantic distillation.

The main entry points are re-exported here; see the submodules for details.
"""

from .datasets import (FeatureMatrix, InteractionMatrix, SplitBundle, build_tag_matrix,
                       k_core_filter, load_embeddings, load_interactions, load_split, prepare,
                       split)
from .errors import DataError, L3AEError, ParameterError, SolverError
from .eval import EvalReport, evaluate, ndcg_at_k, recall_at_k, topk
from .linalg import GramMatrix, gram, ridge_inverse, spectrum
from .models import (MODEL_NAMES, Hyperparams, ItemWeightMatrix, fit_additive, fit_collective,
                     fit_ease, fit_l3ae, fit_model, fit_semantic_ease)

__version__ = "0.1.0"

__all__ = [
    "DataError", "EvalReport", "FeatureMatrix", "GramMatrix", "Hyperparams", "InteractionMatrix",
    "ItemWeightMatrix", "L3AEError", "MODEL_NAMES", "ParameterError", "SolverError",
    "SplitBundle", "build_tag_matrix", "evaluate", "fit_additive", "fit_collective", "fit_ease",
    "fit_l3ae", "fit_model", "fit_semantic_ease", "gram", "k_core_filter", "load_embeddings",
    "load_interactions", "load_split", "ndcg_at_k", "prepare", "recall_at_k", "ridge_inverse",
    "spectrum", "split", "topk",
]
