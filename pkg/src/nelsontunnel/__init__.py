"""Tunneling-time distributions from Nelson stochastic mechanics."""

import numba

# The bundled TBB is too old for numba; prefer OpenMP, then the portable pool.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
