"""Learning high-dimensional probability densities with tree tensor networks."""

from .bases import CanonicalBasis, LegendreBasis, basis_from_json_dict
from .dimension_tree import (
    DimensionTree,
    TreeError,
    build_balanced_tree,
    build_linear_tree,
    random_binary_tree,
    storage_complexity,
    swap_nodes,
    uniform_ranks,
)
from .tree_tensor import (
    FullTensor,
    TreeTensor,
    add,
    alpha_rank_of_full,
    alpha_singular_values,
    evaluate,
    evaluate_many,
    full_tensor,
    full_to_tree,
    load_tensor,
    norm,
    orthonormalize_at,
    psi_alpha,
    random_tree_tensor,
    save_tensor,
    scale,
    truncate,
    zero_tree_tensor,
)

__version__ = "0.1.0"
