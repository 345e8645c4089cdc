"""Rank-revealing block-term tensor decomposition, batch and streaming."""

from .batch import (
    BatchConfig,
    BatchResult,
    RankEstimate,
    btd_irls,
    estimate_ranks,
    objective,
    prune,
)
from .linalg import NumericalError
from .tensor import (
    BtdFactors,
    Mode,
    khatri_rao,
    khatri_rao_cw,
    load_factors,
    load_tensor,
    model_slice,
    reconstruct,
    save_factors,
    save_tensor,
    slice_design,
    unfold,
)

__version__ = "0.1.0"
