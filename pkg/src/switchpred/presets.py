"""Bundled example configurations.

``two_mode_tod`` is a two-mode plant whose switching rule follows the
try-once-discard scheduling idea from networked control: the mode with
the largest weighted state energy owns the state. Both modes are
open-loop unstable; the gains stabilize the delay-free loop and the
delay-compensating controller recovers that behavior under a one-second
input delay.
"""

from __future__ import annotations

import copy

from .errors import ConfigError

__all__ = ["PRESETS", "preset_config", "TWO_MODE_TOD"]

TWO_MODE_TOD = {
    "n": 2,
    "modes": [
        {
            "A": [2.5, -1.0, 1.5, 1.3],
            "B": [1.0, 0.0],
            "K": [-5.6238, -6.6582],
            "P": [2.4764, -1.0101, -1.0101, 0.7256],
        },
        {
            "A": [0.1, -3.0, 1.7, 0.17],
            "B": [0.0, 1.0],
            "K": [2.4007, -2.2096],
            "P": [1.3121, 0.6749, 0.6749, 1.3572],
        },
    ],
    "partition": {"type": "quadratic-argmax", "hysteresis": 1e-3},
    "delay": 1.0,
    "step": 1e-3,
    "horizon": 10.0,
    "x0": [2.0, -1.0],
    "u0": 0.0,
    "predictor_method": "implicit",
    "max_switch_rate": 1000.0,
}

PRESETS = {"two_mode_tod": TWO_MODE_TOD}


def preset_config(name: str) -> dict:
    """Deep copy of a bundled configuration dictionary."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None
