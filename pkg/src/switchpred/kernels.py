"""Kernel backend selection.

The compiled extension is preferred; the pure-Python twin is the
fallback. Selection happens once at import time and can be forced with
the environment variable ``SWITCHPRED_BACKEND=compiled|python``.
"""

import logging
import os

import numpy as np

from .errors import PredictorDivergedError

logger = logging.getLogger(__name__)

_requested = os.environ.get("SWITCHPRED_BACKEND", "").strip().lower()

if _requested in ("", "compiled"):
    try:
        from . import _core as _backend

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "SWITCHPRED_BACKEND=compiled but the extension is not built; "
                "reinstall the package with a C compiler available"
            )
        from . import _core_py as _backend

        BACKEND = "python"
        logger.info("compiled core unavailable, using pure-Python kernels")
elif _requested == "python":
    from . import _core_py as _backend

    BACKEND = "python"
else:
    raise ImportError(f"unknown SWITCHPRED_BACKEND value: {_requested!r}")

# Kernel status codes shared by both backends.
STATUS_OK = 0
STATUS_DIVERGED = 1
STATUS_CHATTERING = 2
STATUS_PREDICTOR_NONFINITE = 3


def predictor_sweep(A, B, P, x0, u, h):
    """Run the fixed-step prediction sweep, returning (values, modes).

    ``values`` has shape (N+1, n) with ``values[0] == x0`` exactly;
    ``modes[j]`` is the active mode at grid point j under the pure
    largest-quadratic-form law.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    N, n = u.shape[0], x0.shape[0]
    vals = np.empty((N + 1, n), dtype=np.float64)
    vals[0] = x0
    modes = np.empty(N + 1, dtype=np.int64)
    bad = _backend.predictor_sweep(A, B, P, x0, u, float(h), vals, modes)
    if bad >= 0:
        mag = float(np.max(np.abs(vals[bad - 1]))) if bad > 0 else float("nan")
        raise PredictorDivergedError(
            f"predictor diverged at window step {bad} "
            f"(last finite magnitude {mag:.3e})"
        )
    return vals, modes


def closed_loop_sweep(A, B, K, P, Eh, method, u_all, X, U, sig_plant, Pt,
                      sig_pred, h, eps, max_rate, big):
    """Run the closed-loop sweep in place; returns the info vector.

    All output arrays are caller-allocated. ``info`` is
    [status, trip_step, switch_count, mode_disagreements].
    """
    info = np.zeros(4, dtype=np.int64)
    _backend.closed_loop_sweep(A, B, K, P, Eh, int(method), u_all, X, U,
                               sig_plant, Pt, sig_pred, float(h), float(eps),
                               float(max_rate), float(big), info)
    return info
