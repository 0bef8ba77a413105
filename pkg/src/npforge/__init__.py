"""Convolutional neural processes for 1D regression, with a GP oracle and a BO harness.

``NP_FORGE_THREADS`` caps BLAS worker threads when set before import.
``NP_FORGE_NUMBA=0`` selects the pure-numpy kernels.
"""

import os

_threads = os.environ.get("NP_FORGE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: E402
from .models import ConvCNP, ConvNP, NeuralProcess, build_model  # noqa: E402
from .synthproc import ProcessSpec, Task, TaskProtocol  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConvCNP",
    "ConvNP",
    "NeuralProcess",
    "ProcessSpec",
    "Task",
    "TaskProtocol",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
]
