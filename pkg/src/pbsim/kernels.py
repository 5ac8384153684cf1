"""Backend selection for the sequence-evolution kernel.

The compiled Cython kernel is used when it was built; otherwise the numpy
fallback. Set ``PBSIM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

python_evolve = _kernels_py.evolve

try:
    if os.environ.get("PBSIM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from ._kernels import evolve as compiled_evolve
except ImportError:
    compiled_evolve = None

if compiled_evolve is not None:
    evolve = compiled_evolve
    BACKEND = "cython"
else:
    evolve = python_evolve
    BACKEND = "python"
