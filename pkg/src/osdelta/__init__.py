"""Budgeted compression of fine-tuning updates with sparsified relaxed-rank SVD."""
from .budget import BitCost, BudgetSpec, assert_within_budget, sparse_cost, sparsity_levels, svd_cost
from .errors import (ArgumentError, DataError, EvaluationError, FormatError, IntegrityError,
                     NumericError, OSDError, StructuralError)
from .linalg import FactorPair, reconstruct, truncated_svd
from .matio import LayerSet, delta, load_layer_set, save_layer_set
from .osd import (EvaluationHook, SensitivityPair, SweepResult, compress_mag, compress_osd,
                  compress_sparse_only, compress_truncsvd, importance_from_gradient, joint_select,
                  ones_importance, sensitivity, sweep_c)
from .sparsify import SparseFactorPair, SparseMatrix, decode, densify, encode, top_s

__version__ = "0.1.0"
