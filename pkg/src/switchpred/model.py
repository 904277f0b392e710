"""Switched plant description, switching law, and delayed-input history.

A plant is a finite family of linear modes with scalar input. The active
mode is determined by the state: each mode i carries a weight matrix P_i
and claims the region where its quadratic form E_i(X) = X'P_iX is the
largest (exact ties go to the largest index, so for two modes the
boundary set belongs to the second one). An optional relative hysteresis
band suppresses chattering near the region boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, HistoryRangeError, StateError

__all__ = [
    "ModeDynamics",
    "QuadraticPartition",
    "InputHistory",
    "ValidationReport",
    "validate_system",
    "sigma_of",
    "sigma_hysteretic",
    "boundary_gap",
    "system_from_dict",
    "system_to_dict",
    "load_system",
]

DEFAULT_HYSTERESIS = 1e-3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _normalize(value, square: bool):
    """Coerce to float64; reshape flat row-major data to square if asked.

    Shapes that cannot be normalized are kept as given so that
    ``validate_system`` can report them instead of the constructor
    raising.
    """
    a = np.asarray(value, dtype=np.float64)
    if square and a.ndim == 1:
        k = math.isqrt(a.size)
        if k * k == a.size:
            a = a.reshape(k, k)
    if not square and a.ndim == 2 and 1 in a.shape:
        a = a.reshape(-1)
    return _frozen(a)


@dataclass(frozen=True, eq=False)
class ModeDynamics:
    """One linear mode: dynamics A, input map B, gain K, weights P and Q.

    B and K are stored as length-n vectors since the input is scalar.
    Q may be left unset; it is only needed for Lyapunov computations and
    can be filled in later (see ``analysis.with_default_decay``).
    """

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _normalize(self.A, square=True))
        object.__setattr__(self, "B", _normalize(self.B, square=False))
        object.__setattr__(self, "K", _normalize(self.K, square=False))
        object.__setattr__(self, "P", _normalize(self.P, square=True))
        if self.Q is not None:
            object.__setattr__(self, "Q", _normalize(self.Q, square=True))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def H(self) -> np.ndarray:
        """Delay-free closed-loop matrix A + B K."""
        return _frozen(self.A + np.outer(self.B, self.K))


@dataclass(frozen=True, eq=False)
class QuadraticPartition:
    """State partition by largest quadratic form, with hysteresis band.

    ``hysteresis`` is a dimensionless relative band width: a pending mode
    change is granted only once the winning form exceeds the current one
    by ``hysteresis * max(1, E_current)``. Zero disables the band. The
    tie-break rule is fixed: the largest tied index wins.
    """

    modes: tuple[ModeDynamics, ...]
    hysteresis: float = DEFAULT_HYSTERESIS

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if self.hysteresis < 0:
            raise ConfigError("hysteresis must be non-negative")

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def p(self) -> int:
        return len(self.modes)

    def energies(self, x: np.ndarray) -> np.ndarray:
        """All quadratic forms E_i(x), shape (p,)."""
        x = np.asarray(x, dtype=np.float64)
        return np.array([x @ m.P @ x for m in self.modes])

    # Stacked views consumed by the kernels.
    @cached_property
    def A_stack(self) -> np.ndarray:
        return np.ascontiguousarray([m.A for m in self.modes])

    @cached_property
    def B_stack(self) -> np.ndarray:
        return np.ascontiguousarray([m.B for m in self.modes])

    @cached_property
    def K_stack(self) -> np.ndarray:
        return np.ascontiguousarray([m.K for m in self.modes])

    @cached_property
    def P_stack(self) -> np.ndarray:
        return np.ascontiguousarray([m.P for m in self.modes])

    def with_hysteresis(self, eps: float) -> "QuadraticPartition":
        return replace(self, hysteresis=float(eps))


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self) -> str:
        return "valid" if self.ok else "; ".join(self.issues)


def _check_spd(M: np.ndarray, name: str, issues: list[str]):
    if not np.array_equal(M, M.T):
        issues.append(f"{name} not symmetric")
        return
    eigs = np.linalg.eigvalsh(M)
    if eigs[0] <= 0:
        issues.append(f"{name} not positive definite (min eigenvalue {eigs[0]:.3e})")


def validate_system(partition: QuadraticPartition) -> ValidationReport:
    """Check structural invariants of every mode; nothing is raised.

    The report lists one entry per violated invariant: dimension
    mismatches, non-scalar input maps, asymmetric or non-positive-definite
    weight matrices, and a cached closed-loop matrix that disagrees with
    A + B K.
    """
    issues: list[str] = []
    first = partition.modes[0].A
    n = first.shape[0] if first.ndim == 2 else 0
    for i, m in enumerate(partition.modes):
        tag = f"mode {i}"
        if m.A.ndim != 2 or m.A.shape[0] != m.A.shape[1]:
            issues.append(f"{tag}: A is not a square matrix (shape {m.A.shape})")
            continue
        if m.A.shape != (n, n):
            issues.append(f"{tag}: A shape {m.A.shape} != ({n}, {n})")
            continue
        if m.B.ndim != 1 or m.K.ndim != 1:
            issues.append(f"{tag}: input must be scalar (B shape {m.B.shape}, K shape {m.K.shape})")
            continue
        if m.B.shape != (n,) or m.K.shape != (n,) or m.P.shape != (n, n):
            issues.append(f"{tag}: dimension mismatch across A, B, K, P")
            continue
        _check_spd(m.P, f"{tag}: P", issues)
        if m.Q is not None:
            if m.Q.shape != (n, n):
                issues.append(f"{tag}: Q shape {m.Q.shape} != ({n}, {n})")
            else:
                _check_spd(m.Q, f"{tag}: Q", issues)
        if not np.array_equal(m.H, m.A + np.outer(m.B, m.K)):
            issues.append(f"{tag}: cached closed-loop matrix differs from A + B K")
    return ValidationReport(issues)


def _check_state(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise StateError(f"invalid state: expected shape ({n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise StateError("invalid state: non-finite entries")
    return x


def sigma_of(partition: QuadraticPartition, x) -> int:
    """Active mode index for state x under the pure switching law.

    Returns the index maximizing E_i(x); exact ties resolve to the
    largest tied index (the origin therefore maps to the last mode).
    """
    x = _check_state(x, partition.n)
    best = -math.inf
    winner = 0
    for i, m in enumerate(partition.modes):
        e = float(x @ m.P @ x)
        if e >= best:
            best = e
            winner = i
    return winner


def sigma_hysteretic(partition: QuadraticPartition, x, current: int) -> int:
    """Switching law with a relative hysteresis band around boundaries.

    Keeps ``current`` unless the pure law elects a different mode whose
    margin |E_winner - E_current| reaches ``hysteresis * max(1,
    E_current)``. With zero hysteresis this reduces exactly to
    ``sigma_of``.
    """
    if not 0 <= current < partition.p:
        raise ConfigError(f"current mode {current} out of range")
    winner = sigma_of(partition, x)
    if winner == current:
        return current
    x = np.asarray(x, dtype=np.float64)
    e_cur = float(x @ partition.modes[current].P @ x)
    e_win = float(x @ partition.modes[winner].P @ x)
    if abs(e_win - e_cur) >= partition.hysteresis * max(1.0, e_cur):
        return winner
    return current


def boundary_gap(partition: QuadraticPartition, x, i: int, j: int) -> float:
    """E_i(x) - E_j(x); zero exactly on the boundary between regions i, j."""
    if not (0 <= i < partition.p and 0 <= j < partition.p):
        raise ConfigError("mode index out of range")
    x = np.asarray(x, dtype=np.float64)
    return float(x @ partition.modes[i].P @ x) - float(x @ partition.modes[j].P @ x)


class InputHistory:
    """Uniform-grid buffer of the input signal over a sliding window.

    Holds N+1 samples at times ``t_now - delay + j*h``; ``values[j]`` is
    the input applied on the grid interval starting there, and the last
    entry is the most recently decided input. Pushing a new sample drops
    the oldest one and advances the window by one step. Single writer;
    not thread-safe.
    """

    __slots__ = ("_values", "h", "delay", "t_now")

    def __init__(self, values, h: float, delay: float, t_now: float = 0.0):
        self.h = float(h)
        self.delay = float(delay)
        if self.h <= 0 or self.delay <= 0:
            raise ConfigError("step and delay must be positive")
        steps = self.delay / self.h
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("delay must be an integer multiple of the step")
        n_samples = int(round(steps)) + 1
        v = np.array(values, dtype=np.float64)
        if v.shape != (n_samples,):
            raise ConfigError(
                f"history needs {n_samples} samples for delay/step "
                f"{self.delay}/{self.h}, got {v.shape}"
            )
        self._values = v
        self.t_now = float(t_now)

    @classmethod
    def constant(cls, value: float, h: float, delay: float,
                 t_now: float = 0.0) -> "InputHistory":
        steps = int(round(delay / h))
        return cls(np.full(steps + 1, float(value)), h, delay, t_now)

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    @property
    def size(self) -> int:
        return self._values.shape[0]

    def window(self) -> np.ndarray:
        """The N samples feeding left-endpoint quadrature over the window."""
        return self._values[:-1].copy()

    def push(self, u: float) -> None:
        """Append the input decided now; drops the oldest sample."""
        self._values[:-1] = self._values[1:]
        self._values[-1] = float(u)
        self.t_now += self.h

    def at(self, theta: float) -> float:
        """Stored sample at time theta within [t_now - delay, t_now].

        Uses the left-endpoint convention: between grid points the sample
        of the interval containing theta is returned.
        """
        t0 = self.t_now - self.delay
        slop = 0.5 * self.h
        if theta < t0 - slop or theta > self.t_now + slop:
            raise HistoryRangeError(
                f"history out of range: {theta} not in [{t0}, {self.t_now}]"
            )
        idx = int(math.floor((theta - t0) / self.h + 1e-9))
        return float(self._values[min(max(idx, 0), self.size - 1)])


def system_from_dict(data: dict) -> tuple[QuadraticPartition, dict]:
    """Build a partition from a parsed system definition.

    Returns the partition and the remaining keys (delay, step, scenario
    settings) untouched, so callers can layer run configuration on top.
    """
    if "modes" not in data or "n" not in data:
        raise ConfigError("system definition needs 'n' and 'modes'")
    n = int(data["n"])
    modes = []
    for i, md in enumerate(data["modes"]):
        try:
            modes.append(
                ModeDynamics(A=md["A"], B=md["B"], K=md["K"], P=md["P"],
                             Q=md.get("Q"))
            )
        except KeyError as exc:
            raise ConfigError(f"mode {i} missing key {exc}") from exc
        if modes[-1].A.shape != (n, n):
            raise ConfigError(f"mode {i}: A does not match declared n={n}")
    part_cfg = data.get("partition", {})
    ptype = part_cfg.get("type", "quadratic-argmax")
    if ptype != "quadratic-argmax":
        raise ConfigError(f"unsupported partition type {ptype!r}")
    hysteresis = float(part_cfg.get("hysteresis", DEFAULT_HYSTERESIS))
    partition = QuadraticPartition(tuple(modes), hysteresis)
    report = validate_system(partition)
    if not report.ok:
        raise ConfigError(f"invalid system: {report}")
    rest = {k: v for k, v in data.items() if k not in ("n", "modes", "partition")}
    return partition, rest


def system_to_dict(partition: QuadraticPartition, **extra) -> dict:
    """Serialize a partition back to the file format."""
    out = {
        "n": partition.n,
        "modes": [
            {
                "A": m.A.flatten().tolist(),
                "B": m.B.tolist(),
                "K": m.K.tolist(),
                "P": m.P.flatten().tolist(),
                **({"Q": m.Q.flatten().tolist()} if m.Q is not None else {}),
            }
            for m in partition.modes
        ],
        "partition": {"type": "quadratic-argmax", "hysteresis": partition.hysteresis},
    }
    out.update(extra)
    return out


def load_system(path) -> tuple[QuadraticPartition, dict]:
    """Read a JSON system definition from disk."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level JSON object expected")
    return system_from_dict(data)
