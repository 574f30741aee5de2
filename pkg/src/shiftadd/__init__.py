"""shiftadd: compress small feed-forward networks into multiplier-free adder programs.

The toolkit combines structured pruning (group lasso), weight sharing
(affinity-propagation clustering with tied retraining), and sparse
power-of-two matrix factorization, then counts the additions of the compiled
shift-add programs against a canonically-signed-digit baseline.
"""

from .numerics import (
    CostReport,
    CsdForm,
    FixedPointConfig,
    csd_encode,
    csd_matrix_cost,
    quantize_fixed,
    sqnr_db,
)
from .lcc import (
    AdderProgram,
    FactorMatrix,
    LccConfig,
    LccDecomposition,
    PowTerm,
    count_additions,
    decompose,
    decompose_fp,
    decompose_fs,
    default_slice_width,
    execute_program,
    load_decomposition,
    reconstruct,
    save_decomposition,
    slice_matrix,
    to_adder_program,
)
from .pruning import (
    GroupStructure,
    RegConfig,
    block_soft_threshold,
    compact_pruned,
    group_lasso_penalty,
    proximal_step,
)
from .sharing import (
    ClusterModel,
    SharedLayer,
    affinity_propagation,
    build_equivalent,
    cluster_columns,
    column_similarity,
    retrain_shared,
    shared_cost,
)
from .convlower import (
    ConvSpec,
    LoweredConv,
    conv_addition_cost,
    conv_forward,
    conv_group_matrix,
    fk_matrices,
    lower_conv,
    pk_matrices,
)
from .nncore import (
    Dataset,
    ModelParams,
    TrainConfig,
    init_conv_net,
    init_mlp,
    load_mnist_idx,
    synthetic_dataset,
    top1_accuracy,
    train,
)
from .pipeline import (
    CompressionReport,
    PipelineConfig,
    compression_ratio,
    load_checkpoint,
    run_pipeline,
    run_sweep,
    save_checkpoint,
)

__version__ = "0.1.0"
