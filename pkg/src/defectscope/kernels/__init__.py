"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist:

* ``jit``   -- numba ``@njit``-compiled loops (default when numba imports).
* ``plain`` -- pure numpy/python fallback.

Set ``DEFECTSCOPE_NO_NUMBA=1`` to force the plain backend. Within a backend
every kernel is deterministic given its seed/inputs; across backends the
random-number streams differ (statistically equivalent results), so pick one
backend when byte-reproducibility matters.
"""

import os

_FLAG = os.environ.get("DEFECTSCOPE_NO_NUMBA", "").strip().lower()
_DISABLED = _FLAG in {"1", "true", "yes", "on"}

if _DISABLED:
    from . import plain as _impl

    BACKEND = "plain"
else:
    try:
        from . import jit as _impl

        BACKEND = "numba"
    except ImportError:  # numba not installed: degrade silently
        from . import plain as _impl

        BACKEND = "plain"

hagan_vol = _impl.hagan_vol
hagan_vol_array = _impl.hagan_vol_array
sabr_log_posterior = _impl.sabr_log_posterior
cn_psor_march = _impl.cn_psor_march
mcmc_chain = _impl.mcmc_chain
absorption_hits = _impl.absorption_hits
sabr_terminal_forwards = _impl.sabr_terminal_forwards


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "plain")."""
    return BACKEND
