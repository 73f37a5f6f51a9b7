"""Hot kernels, dispatched to numba or numpy according to ``ROUGHPME_NUMBA``."""
from .._accel import USE_NUMBA, backend_name

if USE_NUMBA:
    from ._numba import pair_sum_1d, pair_sum_2d, phi_apply, rhs_1d, rhs_2d
else:
    from ._numpy import pair_sum_1d, pair_sum_2d, phi_apply, rhs_1d, rhs_2d

__all__ = [
    "backend_name",
    "pair_sum_1d",
    "pair_sum_2d",
    "phi_apply",
    "rhs_1d",
    "rhs_2d",
]
