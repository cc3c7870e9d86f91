"""Few-shot classification from class prototypes alone.

Novel-class prototypes are estimated by projecting few-shot means onto the
extrinsic mean of local subspaces spanned by nearby base prototypes, and
test samples are classified with an absorbing Markov chain on a k'-NN graph
of all prototypes.
"""

__version__ = "0.1.0"

from .errors import (DegenerateMean, DimensionMismatch, EmptyClass, FormatError, InsufficientPool,
                     InsufficientShots, IsolatedTransient, RankDeficient, SplitError, StateUnreachable,
                     ValidationError)
from .markov import (AbsorbingChain, TwoPassClassifier, build_chain, build_graph, classify_nn,
                     classify_two_pass, equilibrium, initial_state)
from .subspace import (Subspace, build_local_subspace, direct_contribution, estimate_prototype,
                       estimate_prototypes, extrinsic_mean, grassmann_distance, knn, project_onto)
from .types import PROFILES, DatasetSplit, FeatureMatrix, HyperParams, PrototypeSet, mean_shot, validate_episode

__all__ = [
    "AbsorbingChain", "DatasetSplit", "DegenerateMean", "DimensionMismatch", "EmptyClass", "FeatureMatrix",
    "FormatError", "HyperParams", "InsufficientPool", "InsufficientShots", "IsolatedTransient", "PROFILES",
    "PrototypeSet", "RankDeficient", "SplitError", "StateUnreachable", "Subspace", "TwoPassClassifier",
    "ValidationError", "build_chain", "build_graph", "build_local_subspace", "classify_nn",
    "classify_two_pass", "direct_contribution", "equilibrium", "estimate_prototype", "estimate_prototypes",
    "extrinsic_mean", "grassmann_distance", "initial_state", "knn", "mean_shot", "project_onto",
    "validate_episode",
]
