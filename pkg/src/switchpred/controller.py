"""Feedback laws: delay-compensating and delay-free nominal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .model import QuadraticPartition, sigma_of

__all__ = ["ControlDecision", "control_input", "nominal_input"]


@dataclass(frozen=True, eq=False)
class ControlDecision:
    """Input value together with the predictor data that produced it."""

    u: float
    mode_of_predictor: int
    predictor: np.ndarray


def control_input(system: QuadraticPartition, p_t) -> ControlDecision:
    """Delay-compensating feedback: the mode gain applied to the
    predicted state one delay ahead.

    The mode is selected by the pure law on the predicted state, so the
    input applied now is exactly the nominal feedback the plant will
    call for when this input arrives.
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    if not np.all(np.isfinite(p_t)):
        raise StateError("invalid state: non-finite predictor value")
    mode = sigma_of(system, p_t)
    u = float(system.modes[mode].K @ p_t)
    return ControlDecision(u=u, mode_of_predictor=mode, predictor=p_t)


def nominal_input(system: QuadraticPartition, x) -> float:
    """Delay-free feedback K_sigma(x) x."""
    x = np.asarray(x, dtype=np.float64)
    mode = sigma_of(system, x)
    return float(system.modes[mode].K @ x)
