"""Dense CP/Tucker ALS with dimension trees and pairwise perturbation."""
from .decomp_cp import KruskalModel, cp_als_run, init_factors, mttkrp_naive, sweep_mttkrp_dt
from .decomp_tucker import TuckerModel, hosvd, sweep_ttmc_dt, ttmc_naive, tucker_als_run
from .pp_engine import (
    MemoryBudgetError, PPRunConfig, build_pp_operators_cp, build_pp_operators_tucker,
    pp_cp_run, pp_tucker_run,
)
from .tensor_core import FlopCounter, counting

__version__ = "0.1.0"
