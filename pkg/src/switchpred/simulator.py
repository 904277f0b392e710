"""Closed-loop, open-loop, and delay-free simulation.

All integrators share one fixed-step left-endpoint Euler scheme on a
grid that divides the delay exactly, so the delayed input lookup is
always a stored sample and never interpolated. The closed loop
recomputes the predictor from scratch at every step, which keeps the
logged predictor snapshots honest: they depend only on data available
at decision time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, kernels
from .errors import ConfigError
from .model import QuadraticPartition, system_from_dict
from .predictor import mat_exp

__all__ = [
    "SimConfig",
    "Diagnostics",
    "SimulationResult",
    "simulate_closed_loop",
    "simulate_open_loop",
    "simulate_nominal",
    "switching_instants",
    "ConvergenceStudy",
    "convergence_study",
    "predictor_exactness_error",
]

DIVERGENCE_NORM = 1e12
PREDICTOR_METHODS = ("implicit", "semiexplicit")


@dataclass(frozen=True, eq=False)
class SimConfig:
    """One simulation scenario: plant, delay grid, horizon, and data."""

    system: QuadraticPartition
    delay: float
    step: float
    horizon: float
    x0: np.ndarray
    u0: float | np.ndarray = 0.0
    hysteresis: float | None = None  # None: use the partition's band
    predictor_method: str = "implicit"
    max_switch_rate: float = 1000.0
    divergence_norm: float = DIVERGENCE_NORM

    def __post_init__(self):
        if self.horizon <= 0 or self.step <= 0 or self.delay <= 0:
            raise ConfigError("delay, step, and horizon must be positive")
        for name, span in (("delay", self.delay), ("horizon", self.horizon)):
            steps = span / self.step
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigError(f"{name} must be an integer multiple of the step")
        if self.predictor_method not in PREDICTOR_METHODS:
            raise ConfigError(
                f"predictor_method must be one of {PREDICTOR_METHODS}"
            )
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
        if x0.shape != (self.system.n,) or not np.all(np.isfinite(x0)):
            raise ConfigError(f"x0 must be a finite vector of length {self.system.n}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if not np.isscalar(self.u0):
            u0 = np.asarray(self.u0, dtype=np.float64).reshape(-1)
            if u0.shape != (self.n_delay_steps,):
                raise ConfigError(
                    f"u0 needs {self.n_delay_steps} samples covering the "
                    "interval before start"
                )
            u0.setflags(write=False)
            object.__setattr__(self, "u0", u0)

    @property
    def n_delay_steps(self) -> int:
        return int(round(self.delay / self.step))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    def effective_partition(self) -> QuadraticPartition:
        if self.hysteresis is None:
            return self.system
        return self.system.with_hysteresis(self.hysteresis)

    def initial_inputs(self) -> np.ndarray:
        if np.isscalar(self.u0):
            return np.full(self.n_delay_steps, float(self.u0))
        return np.asarray(self.u0, dtype=np.float64).copy()

    @classmethod
    def from_dict(cls, data: dict, fill_decay: bool = True) -> "SimConfig":
        """Build a scenario from a parsed configuration file.

        Unless ``fill_decay`` is off, missing Q weights are auto-selected
        so that Lyapunov bookkeeping is always available.
        """
        system, rest = system_from_dict(data)
        auto_q = None
        assumption_ok = None
        if fill_decay and any(m.Q is None for m in system.modes):
            system, auto_q, ok = analysis.with_default_decay(system)
            assumption_ok = ok
        try:
            cfg = cls(
                system=system,
                delay=float(rest["delay"]),
                step=float(rest["step"]),
                horizon=float(rest.get("horizon", 10.0)),
                x0=rest["x0"],
                u0=rest.get("u0", 0.0),
                hysteresis=rest.get("hysteresis"),
                predictor_method=rest.get("predictor_method", "implicit"),
                max_switch_rate=float(rest.get("max_switch_rate", 1000.0)),
                divergence_norm=float(rest.get("divergence_norm", DIVERGENCE_NORM)),
            )
        except KeyError as exc:
            raise ConfigError(f"configuration missing key {exc}") from exc
        object.__setattr__(cfg, "_auto_decay_weight", auto_q)
        object.__setattr__(cfg, "_assumption_check_passed", assumption_ok)
        return cfg

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class Diagnostics:
    diverged: bool = False
    chattering: bool = False
    predictor_failed: bool = False
    trip_time: float | None = None
    switch_count: int = 0
    mode_disagreements: int = 0
    auto_decay_weight: float | None = None
    assumption_check_passed: bool | None = None

    @property
    def guard_tripped(self) -> bool:
        return self.diverged or self.chattering or self.predictor_failed

    def as_dict(self) -> dict:
        return {
            "diverged": self.diverged,
            "chattering": self.chattering,
            "predictor_failed": self.predictor_failed,
            "trip_time": self.trip_time,
            "switch_count": self.switch_count,
            "mode_disagreements": self.mode_disagreements,
            "auto_decay_weight": self.auto_decay_weight,
            "assumption_check_passed": self.assumption_check_passed,
        }


@dataclass(eq=False)
class SimulationResult:
    """Logged trajectory of one run.

    States are continuous across switches (mode changes alter dynamics
    only). ``predictor`` rows are the snapshots used for the input
    decided at the same time; in closed loop the logged input is exactly
    the predictor-mode gain applied to that snapshot.
    """

    config: SimConfig
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    initial_inputs: np.ndarray
    plant_modes: np.ndarray
    diagnostics: Diagnostics
    predictor: np.ndarray | None = None
    predictor_modes: np.ndarray | None = None
    energies: np.ndarray | None = None
    lyapunov: np.ndarray | None = None
    w_initial: np.ndarray | None = None
    certificate: analysis.StabilityCertificate | None = None
    switches: list[tuple[float, int, int]] = field(default_factory=list)

    @property
    def u_all(self) -> np.ndarray:
        return np.concatenate([self.initial_inputs, self.inputs])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _switches_from_modes(times: np.ndarray, modes: np.ndarray):
    out = []
    for j in np.nonzero(np.diff(modes) != 0)[0] + 1:
        out.append((float(times[j]), int(modes[j - 1]), int(modes[j])))
    return out


def switching_instants(result: SimulationResult):
    """Times where the logged plant mode changes, with the mode pair."""
    return _switches_from_modes(result.times, result.plant_modes)


def _prepare_certificate(config: SimConfig):
    system = config.system
    auto_q = getattr(config, "_auto_decay_weight", None)
    assumption_ok = getattr(config, "_assumption_check_passed", None)
    if any(m.Q is None for m in system.modes):
        system, auto_q, ok = analysis.with_default_decay(system)
        assumption_ok = ok
    cert = analysis.stability_constants(system, config.delay)
    return system, cert, auto_q, assumption_ok


def simulate_closed_loop(config: SimConfig) -> SimulationResult:
    """Run the delay-compensating loop over the whole horizon.

    Per step: recompute the predictor from the current state and the
    buffered inputs, apply the predictor-mode gain, push the input, then
    advance the plant one Euler step using the input from one delay ago.
    The plant switches under the hysteretic law; the predictor always
    uses the pure law, and the number of steps on which the two disagree
    is reported. Guard trips (divergence, chattering, non-finite
    predictor) truncate the run and set flags instead of raising.
    """
    part = config.effective_partition()
    qsystem, cert, auto_q, assumption_ok = _prepare_certificate(config)
    N, M = config.n_delay_steps, config.n_steps
    h = config.step
    n = part.n

    u_all = np.zeros(M + N + 1)
    u_all[:N] = config.initial_inputs()
    X = np.zeros((M + 1, n))
    X[0] = config.x0
    U = np.zeros(M + 1)
    Pt = np.zeros((M + 1, n))
    sig_plant = np.zeros(M + 1, dtype=np.int64)
    sig_pred = np.zeros(M + 1, dtype=np.int64)

    method = 0 if config.predictor_method == "implicit" else 1
    if method == 1:
        Eh = np.ascontiguousarray([mat_exp(m.A, h) for m in part.modes])
    else:
        Eh = part.A_stack

    info = kernels.closed_loop_sweep(
        part.A_stack, part.B_stack, part.K_stack, part.P_stack, Eh, method,
        u_all, X, U, sig_plant, Pt, sig_pred, h, part.hysteresis,
        config.max_switch_rate, config.divergence_norm,
    )
    status, trip = int(info[0]), int(info[1])

    # rows with a complete decision record
    if status == kernels.STATUS_OK:
        rows = M + 1
    elif status == kernels.STATUS_CHATTERING:
        rows = trip + 1
    else:  # diverged state or non-finite predictor
        rows = max(trip, 1)

    diag = Diagnostics(
        diverged=status == kernels.STATUS_DIVERGED,
        chattering=status == kernels.STATUS_CHATTERING,
        predictor_failed=status == kernels.STATUS_PREDICTOR_NONFINITE,
        trip_time=None if status == kernels.STATUS_OK else trip * h,
        switch_count=int(info[2]),
        mode_disagreements=int(info[3]),
        auto_decay_weight=auto_q,
        assumption_check_passed=assumption_ok,
    )

    times = np.arange(rows) * h
    X = X[:rows]
    U = U[:rows]
    Pt = Pt[:rows]
    sig_plant = sig_plant[:rows]
    sig_pred = sig_pred[:rows]

    # first-window transform values: inputs before start plus the first decision
    u0 = u_all[:N]
    p0_vals, p0_modes = kernels.predictor_sweep(
        part.A_stack, part.B_stack, part.P_stack, X[0], u0, h
    )
    u0_ext = np.concatenate([u0, [U[0] if rows > 0 else 0.0]])
    gains = part.K_stack[p0_modes]
    w_initial = u0_ext - np.einsum("ij,ij->i", gains, p0_vals)

    S = analysis.window_energy_series(w_initial, rows - 1, h)
    quad = np.einsum("ij,ijk,ik->i", X, part.P_stack[sig_plant], X)
    V = quad + cert.b * S
    energies = np.einsum("ij,mjk,ik->im", X, part.P_stack, X)

    return SimulationResult(
        config=config, times=times, states=X, inputs=U,
        initial_inputs=u_all[:N].copy(), plant_modes=sig_plant,
        diagnostics=diag, predictor=Pt, predictor_modes=sig_pred,
        energies=energies, lyapunov=V, w_initial=w_initial,
        certificate=cert, switches=_switches_from_modes(times, sig_plant),
    )


def _simulate_simple(config: SimConfig, drive: np.ndarray,
                     external: np.ndarray | None,
                     feedback: np.ndarray | None) -> SimulationResult:
    """Shared Euler loop for the open-loop and delay-free systems.

    ``drive`` stacks the per-mode dynamics matrices. The input is either
    the precomputed ``external`` signal or the ``feedback`` gain applied
    to the state. Scalar arithmetic mirrors the closed-loop kernel op
    for op, so runs solving the same recursion coincide bitwise.
    """
    from ._core_py import _argmax_mode, _quad_form

    part = config.effective_partition()
    n, p = part.n, part.p
    M = config.n_steps
    h = float(config.step)
    eps = float(part.hysteresis)
    X = np.zeros((M + 1, n))
    X[0] = config.x0
    U = np.zeros(M + 1)
    sig = np.zeros(M + 1, dtype=np.int64)
    diag = Diagnostics()

    Al = drive.tolist()
    Bl = part.B_stack.tolist()
    Pl = part.P_stack.tolist()
    Kl = None if feedback is None else feedback.tolist()
    ext = None if external is None else [float(v) for v in external]
    x = [float(v) for v in X[0]]
    nxt = [0.0] * n
    cur = _argmax_mode(Pl, x, p, n)
    rows = M + 1
    bucket = None
    bucket_count = 0
    for j in range(M + 1):
        w = _argmax_mode(Pl, x, p, n)
        if w != cur:
            ec = _quad_form(Pl, x, cur, n)
            ew = _quad_form(Pl, x, w, n)
            if abs(ew - ec) >= eps * (ec if ec > 1.0 else 1.0):
                cur = w
                diag.switch_count += 1
                b = int(math.floor(j * h))
                if b != bucket:
                    bucket, bucket_count = b, 0
                bucket_count += 1
                if bucket_count > config.max_switch_rate:
                    diag.chattering = True
                    diag.trip_time = j * h
                    rows = j + 1
                    sig[j] = cur
                    break
        sig[j] = cur
        if ext is not None:
            u = ext[j]
        else:
            Km = Kl[cur]
            u = 0.0
            for r in range(n):
                u = u + Km[r] * x[r]
        U[j] = u
        if j < M:
            Ac, Bc = Al[cur], Bl[cur]
            for r in range(n):
                Acr = Ac[r]
                acc = 0.0
                for c in range(n):
                    acc = acc + Acr[c] * x[c]
                nxt[r] = x[r] + h * (acc + Bc[r] * u)
            x, nxt = nxt, x
            X[j + 1] = x
            nrm = 0.0
            for r in range(n):
                nrm = nrm + x[r] * x[r]
            if not math.isfinite(nrm) or nrm > config.divergence_norm**2:
                diag.diverged = True
                diag.trip_time = (j + 1) * h
                rows = j + 1
                break
    times = np.arange(rows) * h
    X, U, sig = X[:rows], U[:rows], sig[:rows]
    return SimulationResult(
        config=config, times=times, states=X, inputs=U,
        initial_inputs=np.zeros(0), plant_modes=sig, diagnostics=diag,
        switches=_switches_from_modes(times, sig),
    )


def simulate_open_loop(config: SimConfig, d) -> SimulationResult:
    """Integrate the plant driven by a given disturbance signal d(t).

    This is also the closed loop's behavior over the first delay
    interval, with d replaying the pre-start input history.
    """
    part = config.effective_partition()
    signal = np.array([float(d(j * config.step))
                       for j in range(config.n_steps + 1)])
    return _simulate_simple(config, part.A_stack, signal, None)


def simulate_nominal(config: SimConfig) -> SimulationResult:
    """Integrate the delay-free loop under the mode gain.

    The dynamics matrix is the per-mode closed-loop A + B K, split as
    A x + B (K x) so the arithmetic matches the delayed loop exactly
    once the predictor compensates the delay.
    """
    part = config.effective_partition()
    return _simulate_simple(config, part.A_stack, None, part.K_stack)


def predictor_exactness_error(result: SimulationResult) -> float:
    """Worst normalized gap between the logged predictor snapshot and the
    state one delay later, over all times where both exist."""
    N = result.config.n_delay_steps
    rows = result.states.shape[0]
    if result.predictor is None or rows <= N:
        return math.nan
    d = result.predictor[: rows - N] - result.states[N:]
    num = np.linalg.norm(d, axis=1)
    den = 1.0 + np.linalg.norm(result.states[N:], axis=1)
    return float(np.max(num / den))


@dataclass
class ConvergenceStudy:
    steps: list[float]
    errors: list[float]
    orders: list[float]

    @property
    def exact(self) -> bool:
        return all(e < 1e-13 for e in self.errors)


def convergence_study(config: SimConfig, levels: int) -> ConvergenceStudy:
    """Rerun the scenario while halving the step, tracking predictor
    exactness; the order estimate is the log2 ratio of successive errors."""
    if levels < 2:
        raise ConfigError("need at least 2 refinement levels")
    steps, errors = [], []
    for k in range(levels):
        cfg = replace(config, step=config.step / 2**k)
        res = simulate_closed_loop(cfg)
        steps.append(cfg.step)
        errors.append(predictor_exactness_error(res))
    orders = []
    for a, b in zip(errors, errors[1:]):
        if a < 1e-300 or b < 1e-300:
            orders.append(math.nan)
        else:
            orders.append(math.log2(a / b))
    return ConvergenceStudy(steps=steps, errors=errors, orders=orders)
