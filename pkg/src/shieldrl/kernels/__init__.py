"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from the ``SHIELDRL_NUMBA``
environment variable: any of ``0``, ``false`` or ``off`` (case-insensitive)
forces the numpy path, everything else (including unset) uses numba when it is
importable.  Both paths execute the same source (``shieldrl.kernels._impl``);
the jitted copy lives in a second module instance so the plain-numpy functions
stay importable for parity tests and ``benchmarks/bench_kernels.py``.
"""

import importlib.util
import os
import sys

from . import _impl as numpy_impl
from ._impl import (ACT_LINEAR, ACT_RELU, ACT_SIGMOID, ACT_TANH,
                    net_param_count)

_JIT_KERNELS = (
    "net_forward",
    "net_forward_cached",
    "net_cache_width",
    "net_backward",
    "net_input_grad",
    "adam_update",
    "ensemble_forward",
    "imagine_catastrophe",
    "ve_targets",
    "loo_divergence_batch",
    "loo_divergence_grad",
    "mpc_score",
    "mpc_grad",
)

_flag = os.environ.get("SHIELDRL_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "off")
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but be safe
        NUMBA_ENABLED = False


def _load_jit_instance():
    """Second instance of _impl whose functions are all njit-compiled.

    Compiled kernels resolve helpers through their module globals, so the
    rebinding happens on a private copy and the original module stays numpy.
    """
    src = importlib.util.find_spec("shieldrl.kernels._impl").origin
    spec = importlib.util.spec_from_file_location("shieldrl.kernels._impl_jit", src)
    mod = importlib.util.module_from_spec(spec)
    sys.modules["shieldrl.kernels._impl_jit"] = mod
    spec.loader.exec_module(mod)
    for name in _JIT_KERNELS:
        setattr(mod, name, njit(cache=True)(getattr(mod, name)))
    return mod


numba_impl = _load_jit_instance() if NUMBA_ENABLED else None
_active = numba_impl if NUMBA_ENABLED else numpy_impl
BACKEND = "numba" if NUMBA_ENABLED else "numpy"

net_forward = _active.net_forward
net_forward_cached = _active.net_forward_cached
net_cache_width = _active.net_cache_width
net_backward = _active.net_backward
net_input_grad = _active.net_input_grad
adam_update = _active.adam_update
ensemble_forward = _active.ensemble_forward
imagine_catastrophe = _active.imagine_catastrophe
ve_targets = _active.ve_targets
loo_divergence_batch = _active.loo_divergence_batch
loo_divergence_grad = _active.loo_divergence_grad
mpc_score = _active.mpc_score
mpc_grad = _active.mpc_grad

__all__ = [
    "ACT_LINEAR", "ACT_RELU", "ACT_TANH", "ACT_SIGMOID",
    "BACKEND", "NUMBA_ENABLED", "numpy_impl", "numba_impl", "net_param_count",
    "net_cache_width",
    "net_forward", "net_forward_cached", "net_backward", "net_input_grad",
    "adam_update", "ensemble_forward", "imagine_catastrophe", "ve_targets",
    "loo_divergence_batch", "loo_divergence_grad", "mpc_score", "mpc_grad",
]
