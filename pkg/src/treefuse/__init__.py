"""Convex clustering with tree-structured fused-lasso penalties.

The solver alternates an exact dynamic program for the weighted fused lasso
on a spanning tree with a tree-contraction cluster-fusion step, producing a
complete split-free clusterpath and dendrogram. Biclustering and sparse
clustering variants run the same machinery inside a Dykstra-like proximal
loop.
"""

from .clusterpath import (
    Clusterpath,
    ClusterState,
    Dendrogram,
    MergeEvent,
    auto_lambda_grid,
    cut_dendrogram,
    dendrogram_leaf_order,
    dendrogram_from_dict,
    dendrogram_to_dict,
    dendrogram_to_newick,
    fit_labels,
    fuse_clusters,
    naive_path_oracle,
    relative_difference,
    fit_clusterpath,
    update_aggregates,
)
from .data import DataMatrix, read_csv, write_csv
from .datasets import MODELS, LabeledDataset, generate
from .dp import (
    NodeProblem,
    PwlDerivative,
    kkt_residual,
    objective_value,
    solve_1d,
    solve_matrix,
)
from .errors import (
    ConfigurationError,
    InvalidDataError,
    InvalidProblemError,
    InvalidStateError,
    NumericError,
    TreefuseError,
)
from .extensions import (
    BiclusterConfig,
    BiclusterResult,
    DykstraResult,
    SparseResult,
    fit_bicluster,
    default_config,
    dykstra_solve,
    prox_col_clustering,
    prox_group_columns,
    prox_row_clustering,
    fit_sparse,
)
from .metrics import accuracy, adjusted_rand_index
from .tree import (
    RootedTree,
    WeightedTree,
    build_euclidean_mst,
    leaf_proximity_depths,
    read_edgelist,
    root_tree,
    write_edgelist,
)
from .weights import (
    GAMMA_CANDIDATES,
    WeightConfig,
    apply_outlier_threshold,
    compute_weights,
    gaussian_weights,
    kappa_edge_normalizer,
    tau_normalizer,
)

__version__ = "0.1.0"
