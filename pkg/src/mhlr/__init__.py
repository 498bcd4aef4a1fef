"""Multiview Hessian-regularized logistic regression for semi-supervised
classification, with Laplacian, concatenation and single-view baselines."""

from .dataset import (
    MultiviewDataset,
    generate_planar_embedding,
    generate_two_moons_multiview,
    load_dataset,
    mask_labeled_fraction,
    save_dataset,
)
from .evaluation import (
    EvalReport,
    average_precision,
    evaluate,
    fraction_sweep,
    grid_search,
    mean_average_precision,
)
from .kernels import KernelSpec, combine_matrices, cross_kernel, gram_matrix
from .manifold import graph_laplacian, hessian_energy_matrix, knn_graph
from .model import (
    BinaryModel,
    MethodSpec,
    MulticlassModel,
    decision_values,
    load_model,
    method_family,
    predict,
    predict_proba,
    save_model,
    train_binary,
    train_one_vs_rest,
)
from .optimize import Hyperparams, ProblemInstance, alternate, objective, project_simplex

__version__ = "0.1.0"
