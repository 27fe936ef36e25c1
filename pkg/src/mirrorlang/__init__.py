"""Mirrored Langevin sampling on the probability simplex."""

__version__ = "0.1.0"

from .mirror_core import (  # noqa: E402
    BlockMap,
    BurgMap,
    DomainError,
    EntropicMap,
    block_map_apply,
    burg_calculus,
    entropic_grad_h,
    entropic_grad_h_star,
    entropic_grad_log_det_hess_h,
    entropic_h,
    entropic_h_star,
    entropic_hess_h_solve,
    entropic_log_det_hess_h,
)
from .targets import (  # noqa: E402
    DirichletModel,
    ObservationList,
    Potential,
    dirichlet_grad_V,
    dirichlet_grad_W,
    dirichlet_hess_W_apply,
    dirichlet_stochastic_grad_W,
    dirichlet_V,
    dirichlet_W,
    generic_dual_component,
    generic_dual_drift,
    synthetic_benchmark_model,
    product_simplex_target,
)
from .samplers import (  # noqa: E402
    ChainState,
    CirParams,
    NoiseStream,
    StepSchedule,
    cir_run,
    mld_run,
    mld_step_dual,
    mld_step_primal,
    run_ensemble,
    sample_dirichlet_exact,
    sgrld_step,
    smld_run,
    smld_step_size_bound,
)

__all__ = [
    "__version__",
    "BlockMap",
    "BurgMap",
    "DomainError",
    "EntropicMap",
    "block_map_apply",
    "burg_calculus",
    "entropic_grad_h",
    "entropic_grad_h_star",
    "entropic_grad_log_det_hess_h",
    "entropic_h",
    "entropic_h_star",
    "entropic_hess_h_solve",
    "entropic_log_det_hess_h",
    "DirichletModel",
    "ObservationList",
    "Potential",
    "dirichlet_grad_V",
    "dirichlet_grad_W",
    "dirichlet_hess_W_apply",
    "dirichlet_stochastic_grad_W",
    "dirichlet_V",
    "dirichlet_W",
    "generic_dual_component",
    "generic_dual_drift",
    "synthetic_benchmark_model",
    "product_simplex_target",
    "ChainState",
    "CirParams",
    "NoiseStream",
    "StepSchedule",
    "cir_run",
    "mld_run",
    "mld_step_dual",
    "mld_step_primal",
    "run_ensemble",
    "sample_dirichlet_exact",
    "sgrld_step",
    "smld_run",
    "smld_step_size_bound",
]
