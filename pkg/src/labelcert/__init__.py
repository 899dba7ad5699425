"""Pointwise-certified linear classification under adversarial label flips.

Train a regularized least-squares classifier on user-supplied features and,
for each test point, emit a prediction plus a deterministic certificate: the
number of training-label flips under which the prediction provably cannot
change. Certification is analytic (a one-dimensional convex tail-bound
minimization per point); sampling and exhaustive enumeration live in
labelcert.sampling purely as validation oracles.
"""

from .attack import (
    AttackResult,
    RobustnessCurve,
    greedy_attack_smoothed,
    greedy_attack_undefended,
    robustness_curve,
)
from .certify import (
    Certificate,
    ChernoffResult,
    certify_point,
    chernoff_objective,
    kl_divergence,
    kl_radius,
    solve_chernoff,
)
from .data import (
    Dataset,
    FeatureMatrix,
    LabelVector,
    SmoothingConfig,
    load_dataset,
    one_hot,
    pca_reduce,
    save_dataset,
)
from .errors import SolverError, ValidationError
from .multiclass import (
    MultiCertificate,
    PairwiseBound,
    pairwise_chernoff,
    predict_and_certify_multiclass,
)
from .regression import (
    AlphaVector,
    RidgeModel,
    alpha_for,
    estimate_lambda,
    load_artifact,
    precompute,
    save_artifact,
    train,
)
from .sampling import (
    McEstimate,
    exact_binary_tails,
    exact_class_probs,
    exact_g,
    exact_pairwise_prob,
    mc_estimate,
    sample_labels,
)
from .tight import (
    LikelihoodRegion,
    TightTable,
    build_table,
    get_or_build_table,
    load_table,
    min_rho_measure,
    regions,
    save_table,
    tight_radius,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaVector",
    "AttackResult",
    "Certificate",
    "ChernoffResult",
    "Dataset",
    "FeatureMatrix",
    "LabelVector",
    "LikelihoodRegion",
    "McEstimate",
    "MultiCertificate",
    "PairwiseBound",
    "RidgeModel",
    "RobustnessCurve",
    "SmoothingConfig",
    "SolverError",
    "TightTable",
    "ValidationError",
    "alpha_for",
    "build_table",
    "certify_point",
    "chernoff_objective",
    "estimate_lambda",
    "exact_binary_tails",
    "exact_class_probs",
    "exact_g",
    "exact_pairwise_prob",
    "get_or_build_table",
    "greedy_attack_smoothed",
    "greedy_attack_undefended",
    "kl_divergence",
    "kl_radius",
    "load_artifact",
    "load_dataset",
    "load_table",
    "mc_estimate",
    "min_rho_measure",
    "one_hot",
    "pairwise_chernoff",
    "pca_reduce",
    "precompute",
    "predict_and_certify_multiclass",
    "regions",
    "robustness_curve",
    "sample_labels",
    "save_artifact",
    "save_dataset",
    "save_table",
    "solve_chernoff",
    "tight_radius",
    "train",
]
