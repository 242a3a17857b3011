"""Hyperspectral anomaly detection toolkit.

Dictionary-learnable low-rank-plus-column-sparse decomposition solved two
ways (a classical alternating solver and its multi-stage unfolded,
trainable counterpart), Mahalanobis baselines, synthetic scene generation,
ENVI raster IO, and ROC/AUC evaluation.
"""

from .admm import (
    AdmmConfig,
    AdmmResult,
    LrrState,
    NumericalAbort,
    admm_run,
    anomaly_scores,
    augmented_lagrangian,
    normalize_atoms,
    objective,
    reconstruction,
    update_d,
    update_j,
    update_l,
    update_multiplier,
    update_s,
)
from .dictionary import KmeansResult, init_dictionary, kmeans
from .evaluation import (
    AnomalyScoreMap,
    DegenerateMaskError,
    RocCurve,
    metric_mse,
    metric_pre,
    roc,
)
from .hsi_io import (
    DataFormatError,
    DataMatrix,
    GroundTruthMask,
    HsiCube,
    SyntheticSceneSpec,
    cube_to_matrix,
    generate_synthetic_scene,
    load_envi,
    load_mask,
    matrix_to_cube,
    save_envi,
    save_mask,
)
from .numerics import (
    SingularSystemError,
    SvdFactors,
    prox_l21_columns,
    ridge_solve,
    svd_factors,
    svt,
)
from .rx import LocalRxConfig, global_rx, local_rx
from .unfolded import (
    StageParams,
    UnfoldedModel,
    forward,
    init_from_admm,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
