"""Fixed-budget width scaling of MLPs via static random sparsity."""

from .allocator import (
    AllocationPlan,
    BudgetExceedsWeights,
    EmptyLayerList,
    InvalidCombination,
    LayerSizes,
    plan_from_layer_connectivities,
    proportional_allocate,
    staggered_allocate,
)
from .masks import SparsityMask, apply_mask, mask_statistics, sample_mask
from .models import (
    Dense,
    LinearBottleneck,
    MlpArch,
    MlpModel,
    NonlinearBottleneck,
    Sparse,
    backward,
    factorize_layer,
    forward,
    init_model,
    param_count,
    solve_width_for_budget,
)
from .kernels import (
    KernelEstimate,
    approx_kernel_distance,
    arccos_kernel,
    empirical_distance,
    empirical_gp_kernel,
    expected_kernel_distance,
    optimal_connectivity,
    sparse_arccos_kernel,
)
from .data import Dataset, load_mnist, subset
from .training import RunRecord, TrainConfig, train

__version__ = "0.1.0"
