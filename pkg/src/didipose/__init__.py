"""Discrete-diffusion 3D pose estimation on a synthetic skeleton corpus."""
import os

# BLAS threads must be pinned before numpy is imported.
if "DIDIPOSE_THREADS" in os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["DIDIPOSE_THREADS"])

__version__ = "0.1.0"
