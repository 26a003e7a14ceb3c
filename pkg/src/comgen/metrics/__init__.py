from .assignment import min_cost_assignment, munkres_assign
from .dci import (
    DEFAULT_SAMPLE_SIZE,
    DisentanglementReport,
    build_coefficient_matrix,
    dci_completeness,
    dci_disentanglement,
    dci_informativeness,
    read_hinton_csv,
    write_hinton_csv,
)
from .lasso import DEFAULT_ALPHA, LassoFit, lasso_fit, lasso_objective, soft_threshold
from .regression import r_squared

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_SAMPLE_SIZE",
    "DisentanglementReport",
    "LassoFit",
    "build_coefficient_matrix",
    "dci_completeness",
    "dci_disentanglement",
    "dci_informativeness",
    "lasso_fit",
    "lasso_objective",
    "min_cost_assignment",
    "munkres_assign",
    "r_squared",
    "read_hinton_csv",
    "soft_threshold",
    "write_hinton_csv",
]
