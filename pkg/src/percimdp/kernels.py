"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback takes over.  Setting ``PERCIMDP_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if os.environ.get("PERCIMDP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

active = compiled_backend if compiled_backend is not None else python_backend
BACKEND = active.BACKEND

scc = active.scc
component_levels = active.component_levels
bellman_sweep = active.bellman_sweep
solve_reach = active.solve_reach
simulate_batch = active.simulate_batch
uniforms = active.uniforms

OUTCOME_COLLISION = python_backend.OUTCOME_COLLISION
OUTCOME_SAFE = python_backend.OUTCOME_SAFE
OUTCOME_UNFINISHED = python_backend.OUTCOME_UNFINISHED


def backends():
    """Available backend modules, compiled first."""
    found = [python_backend]
    if compiled_backend is not None:
        found.insert(0, compiled_backend)
    return found
