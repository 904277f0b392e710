"""Window prediction of the future state from buffered inputs.

Given the state X(t) and the inputs applied over [t - D, t], the value
X(t + D) is pinned down by integrating the switched dynamics forward
across the window: the anchor is P(t - D) = X(t) and each grid interval
evolves under the mode claimed by the current predictor value. Two
routes are provided:

* ``implicit_predictor_trace`` sweeps the window with the same
  left-endpoint Euler rule the simulator uses;
* ``semi_explicit_predictor`` walks the window segment by segment with
  exact mode-wise matrix exponentials, locating each region exit by
  bisection, and composes the per-segment solutions.

Both use the pure switching law (no hysteresis): the prediction
recursion is defined pointwise on the predictor value, and a hysteresis
band would smuggle a memory state into it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .errors import (
    ChatteringError,
    GridMismatchError,
    MatrixExponentialOverflowError,
    StateError,
)
from .model import InputHistory, QuadraticPartition, sigma_of

__all__ = [
    "PredictorTrace",
    "ModeSequence",
    "mat_exp",
    "implicit_predictor_trace",
    "detect_mode_sequence",
    "semi_explicit_predictor",
]

MAX_SWITCHES = 1000
#: Operator-norm cap before the exponential is refused outright.
EXP_OVERFLOW_NORM = 200.0


@dataclass(frozen=True, eq=False)
class PredictorTrace:
    """Predicted window trajectory on the uniform grid.

    ``theta[j] = t - D + j*h``; ``values[0]`` equals the anchoring state
    exactly and ``modes[j]`` is the pure-law mode at ``values[j]``.
    """

    theta: np.ndarray
    values: np.ndarray
    modes: np.ndarray

    @property
    def final(self) -> np.ndarray:
        """The predicted state one delay ahead of the anchor."""
        return self.values[-1]


@dataclass(frozen=True, eq=False)
class ModeSequence:
    """Mode itinerary of a predictor window.

    ``times`` are offsets into the window, starting at 0 and ending at
    the delay D; ``modes[i]`` is active on [times[i], times[i+1]).
    """

    times: np.ndarray
    modes: tuple[int, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if len(self.modes) != t.shape[0] - 1:
            raise ValueError("need exactly one mode per interval")
        if np.any(np.diff(t) <= 0):
            raise ValueError("switching offsets must be strictly increasing")

    @property
    def switch_count(self) -> int:
        return len(self.modes) - 1


def mat_exp(A: np.ndarray, s: float) -> np.ndarray:
    """Matrix exponential exp(A*s) via scaling-and-squaring.

    Refuses exponents with operator norm beyond ``EXP_OVERFLOW_NORM``,
    where double precision would overflow during squaring.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.isfinite(s):
        raise StateError("exponent time must be finite")
    M = A * float(s)
    if not np.all(np.isfinite(M)):
        raise StateError("non-finite matrix entries")
    if M.size and np.linalg.norm(M, 2) > EXP_OVERFLOW_NORM:
        raise MatrixExponentialOverflowError(
            f"exponent too large: operator norm {np.linalg.norm(M, 2):.3g} "
            f"exceeds {EXP_OVERFLOW_NORM}"
        )
    return scipy.linalg.expm(M)


def _check_window(system: QuadraticPartition, x_t, history: InputHistory):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (system.n,):
        raise StateError(f"invalid state: expected shape ({system.n},)")
    if not np.all(np.isfinite(x_t)):
        raise StateError("invalid state: non-finite entries")
    return x_t


def implicit_predictor_trace(system: QuadraticPartition, x_t,
                             history: InputHistory) -> PredictorTrace:
    """Predict the window by the left-endpoint Euler sweep.

    Step j advances grid point j-1 under that point's mode using the
    input sample of the same interval; the last row approximates the
    state one delay ahead. Raises ``PredictorDivergedError`` if the
    sweep leaves double range.
    """
    x_t = _check_window(system, x_t, history)
    u = history.window()
    vals, modes = kernels.predictor_sweep(
        system.A_stack, system.B_stack, system.P_stack, x_t, u, history.h
    )
    theta = history.t_now - history.delay + history.h * np.arange(len(u) + 1)
    return PredictorTrace(theta=theta, values=vals, modes=modes)


def detect_mode_sequence(system: QuadraticPartition, trace: PredictorTrace,
                         history: InputHistory, refine_tol: float | None = None,
                         max_switches: int = MAX_SWITCHES) -> ModeSequence:
    """Extract the switching itinerary from an implicit trace.

    Each grid-level mode change is sharpened by bisecting the boundary
    gap along the Euler segment that produced it, until the bracket is
    narrower than ``refine_tol`` (default ``1e-10 * delay``).
    """
    h, D = history.h, history.delay
    if trace.values.shape[0] != history.size:
        raise GridMismatchError("trace and history grids differ")
    if refine_tol is None:
        refine_tol = 1e-10 * D
    u = history.window()
    times = [0.0]
    modes = [int(trace.modes[0])]
    n_changes = 0
    for j in range(1, trace.values.shape[0]):
        m_prev = int(trace.modes[j - 1])
        m_next = int(trace.modes[j])
        if m_next == m_prev:
            continue
        n_changes += 1
        if n_changes > max_switches:
            raise ChatteringError(
                f"chattering predictor trajectory: more than {max_switches} "
                "mode changes in one window"
            )
        mode = system.modes[m_prev]
        v = trace.values[j - 1]
        f = mode.A @ v + mode.B * u[j - 1]
        Pi = system.modes[m_prev].P
        Pj = system.modes[m_next].P

        def gap(tau):
            x = v + tau * f
            return float(x @ Pi @ x) - float(x @ Pj @ x)

        lo, hi = 0.0, h
        glo = gap(lo)
        if glo <= 0.0:
            hi = lo  # boundary sits at the left grid point
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            if gap(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        s = (j - 1) * h + hi
        s = min(max(s, times[-1] + refine_tol), j * h)
        if s >= D - refine_tol:
            break  # change sits at the window edge; it owns no interval
        times.append(s)
        modes.append(m_next)
    times.append(D)
    return ModeSequence(times=np.array(times), modes=tuple(modes))


def semi_explicit_predictor(system: QuadraticPartition, x_t,
                            history: InputHistory,
                            refine_tol: float | None = None,
                            max_switches: int = MAX_SWITCHES,
                            ) -> tuple[np.ndarray, ModeSequence]:
    """Predict by exact mode-wise exponentials between detected exits.

    Within one input-grid cell under mode m the window value advances as
    ``exp(A_m * d) @ (z + d * B_m * u_cell)``: the homogeneous part is
    exact while the forcing uses the same left-endpoint rule as the
    implicit sweep, so the two routes differ only through mode-exit
    placement and the quadrature order. Region exits are located by
    in-cell bisection of the boundary gap, then the walk resumes from
    the refined exit point.

    When the window trajectory slides along a boundary (both mode fields
    point across it) the exit sequence has no transversal resolution; in
    that case the remainder of the cell is accepted under the current
    mode and the mode is re-elected at the next grid point, mirroring the
    cell-quantized behavior of the implicit sweep.

    Returns the predicted state one delay ahead and the mode itinerary.
    """
    x_t = _check_window(system, x_t, history)
    h, D = history.h, history.delay
    if refine_tol is None:
        refine_tol = 1e-10 * D
    slide_tol = 1e-3 * h
    u = history.window()
    N = u.shape[0]
    exp_full = [mat_exp(m.A, h) for m in system.modes]

    z = x_t.copy()
    m = sigma_of(system, z)
    times = [0.0]
    modes = [m]
    guard = 0

    def step(zv, mode_idx, d, u_cell, full):
        E = exp_full[mode_idx] if full else mat_exp(system.modes[mode_idx].A, d)
        return E @ (zv + d * (system.modes[mode_idx].B * u_cell))

    def emit(s, mode_new):
        nonlocal guard
        if mode_new == modes[-1]:
            return
        s = min(max(s, times[-1] + refine_tol), D)
        if s < D - refine_tol:
            times.append(s)
            modes.append(mode_new)
            guard += 1
            if guard > max_switches:
                raise ChatteringError(
                    f"chattering predictor trajectory: more than "
                    f"{max_switches} mode changes in one window"
                )

    cell = 0
    pos = 0.0  # offset inside the current cell, in [0, h)
    while cell < N:
        d = h - pos
        z_try = step(z, m, d, u[cell], pos == 0.0)
        w = sigma_of(system, z_try)
        if w == m:
            z = z_try
            cell += 1
            pos = 0.0
            continue
        Pi = system.modes[m].P
        Pw = system.modes[w].P

        def gap(tau):
            x = step(z, m, tau, u[cell], False)
            return float(x @ Pi @ x) - float(x @ Pw @ x)

        lo, hi = 0.0, d
        if gap(lo) <= 0.0:
            hi = 0.0
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            if gap(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        tau = hi
        if tau > slide_tol:
            # transversal exit: move to the refined boundary point
            z = step(z, m, tau, u[cell], False)
            pos += tau
            if pos >= h * (1.0 - 1e-12):
                cell += 1
                pos = 0.0
            m_new = sigma_of(system, z)
            if m_new == m:
                m_new = w  # grazing contact: adopt the detected winner
            emit(cell * h + pos, m_new)
            m = m_new
        else:
            # sliding or immediate re-entry: accept the whole remaining
            # cell under the current mode, exactly like one grid step of
            # the implicit sweep, and re-elect the mode at the boundary
            z = z_try
            cell += 1
            pos = 0.0
            m = sigma_of(system, z)
            emit(cell * h, m)
    times.append(D)
    seq = ModeSequence(times=np.array(times), modes=tuple(modes))
    return z, seq
