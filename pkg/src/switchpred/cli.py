"""Command-line front end.

Subcommands: simulate, predict, check-assumptions, constants, verify,
convergence. Exit codes: 0 success or all checks passed, 1 usage or
configuration error, 2 a verification check failed, 3 a runtime guard
tripped. All emitted files are byte-deterministic for a given
configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, kernels, model, presets, simulator
from .errors import SwitchpredError
from .model import InputHistory, sigma_of
from .predictor import detect_mode_sequence, implicit_predictor_trace, semi_explicit_predictor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_GUARD = 3


def _fmt(x: float) -> str:
    return repr(float(x))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config_dict(path_or_preset: str, overrides) -> dict:
    if path_or_preset in presets.PRESETS:
        data = presets.preset_config(path_or_preset)
    else:
        p = Path(path_or_preset)
        if not p.exists():
            raise SwitchpredError(
                f"config {path_or_preset!r} is neither a file nor a preset "
                f"(presets: {sorted(presets.PRESETS)})"
            )
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise SwitchpredError(f"cannot parse {p}: {exc}") from exc
    for item in overrides or ():
        if "=" not in item:
            raise SwitchpredError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                target[part] = {}
            target = target[part]
        target[parts[-1]] = value
    return data


def _apply_common_overrides(args, data: dict) -> dict:
    if getattr(args, "hysteresis", None) is not None:
        data.setdefault("partition", {})["hysteresis"] = args.hysteresis
    method = getattr(args, "method", None)
    if method is not None:
        data["predictor_method"] = method
    return data


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               allow_nan=True) + "\n")


def write_trace_csv(result: simulator.SimulationResult, path: Path) -> None:
    """Full trace: t, states, input, mode, energies, functional, predictor."""
    n = result.states.shape[1]
    p = result.energies.shape[1]
    header = (
        ["t"] + [f"x{i+1}" for i in range(n)] + ["u", "sigma"]
        + [f"E{i+1}" for i in range(p)] + ["V"] + [f"p{i+1}" for i in range(n)]
    )
    rows = []
    for j in range(result.states.shape[0]):
        row = [_fmt(result.times[j])]
        row += [_fmt(v) for v in result.states[j]]
        row += [_fmt(result.inputs[j]), str(int(result.plant_modes[j]))]
        row += [_fmt(v) for v in result.energies[j]]
        row += [_fmt(result.lyapunov[j])]
        row += [_fmt(v) for v in result.predictor[j]]
        rows.append(row)
    _write_csv(path, header, rows)


def read_trace_csv(path: Path) -> dict:
    """Parse a trace written by ``write_trace_csv`` back into arrays."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    cols = {name: i for i, name in enumerate(header)}
    n = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    p = sum(1 for c in header if c.startswith("E") and c[1:].isdigit())
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return {
        "t": data[:, cols["t"]],
        "x": data[:, [cols[f"x{i+1}"] for i in range(n)]],
        "u": data[:, cols["u"]],
        "sigma": data[:, cols["sigma"]].astype(np.int64),
        "E": data[:, [cols[f"E{i+1}"] for i in range(p)]],
        "V": data[:, cols["V"]],
        "p": data[:, [cols[f"p{i+1}"] for i in range(n)]],
    }


def _summary(result: simulator.SimulationResult) -> dict:
    fit = analysis.fit_decay_rate(result)
    return {
        "backend": kernels.BACKEND,
        "final_state_norm": float(np.linalg.norm(result.final_state)),
        "final_time": float(result.times[-1]),
        "switch_count": result.diagnostics.switch_count,
        "switches": [
            {"t": t, "from": a, "to": b} for t, a, b in result.switches
        ],
        "guards": result.diagnostics.as_dict(),
        "fitted_decay": {"rho_hat": fit.rho_hat, "xi_hat": fit.xi_hat,
                         "decaying": fit.decaying},
        "predictor_exactness": simulator.predictor_exactness_error(result),
        "mode_disagreements": result.diagnostics.mode_disagreements,
    }


def _figure_files(result: simulator.SimulationResult, out: Path) -> None:
    # mode vs time
    _write_csv(out / "fig_mode.csv", ["t", "sigma"],
               ([_fmt(t), str(int(s))] for t, s in
                zip(result.times, result.plant_modes)))
    # states and input vs time
    n = result.states.shape[1]
    _write_csv(out / "fig_states.csv",
               ["t"] + [f"x{i+1}" for i in range(n)] + ["u"],
               ([_fmt(result.times[j])] + [_fmt(v) for v in result.states[j]]
                + [_fmt(result.inputs[j])]
                for j in range(result.states.shape[0])))
    # phase portrait: trajectory plus a classified grid of sample states
    part = result.config.effective_partition()
    _write_csv(out / "fig_phase_trajectory.csv",
               [f"x{i+1}" for i in range(n)] + ["sigma"],
               ([_fmt(v) for v in result.states[j]] + [str(int(result.plant_modes[j]))]
                for j in range(result.states.shape[0])))
    if n == 2:
        lo = result.states.min(axis=0)
        hi = result.states.max(axis=0)
        span = np.maximum(hi - lo, 1e-6)
        lo = lo - 0.1 * span
        hi = hi + 0.1 * span
        grid = 101
        xs = np.linspace(lo[0], hi[0], grid)
        ys = np.linspace(lo[1], hi[1], grid)
        rows = []
        eps = part.hysteresis
        for y in ys:
            for x in xs:
                v = np.array([x, y])
                s = sigma_of(part, v)
                energies = part.energies(v)
                others = [energies[i] for i in range(part.p) if i != s]
                in_band = 0
                if others:
                    e2 = max(others)
                    in_band = int(abs(energies[s] - e2) <= eps * max(1.0, e2))
                rows.append([_fmt(x), _fmt(y), str(s), str(in_band)])
        _write_csv(out / "fig_phase_regions.csv",
                   ["x1", "x2", "sigma", "band"], rows)


def run_simulate(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    config = simulator.SimConfig.from_dict(data)
    result = simulator.simulate_closed_loop(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result, out / "trace.csv")
    _write_csv(out / "switches.csv", ["t", "from_mode", "to_mode"],
               ([_fmt(t), str(a), str(b)] for t, a, b in result.switches))
    _write_json(out / "summary.json", _summary(result))
    _figure_files(result, out)
    print(f"final |X| = {np.linalg.norm(result.final_state):.6e}, "
          f"{result.diagnostics.switch_count} switches, backend={kernels.BACKEND}")
    if result.diagnostics.guard_tripped:
        print(f"guard tripped at t={result.diagnostics.trip_time}: "
              f"{result.diagnostics.as_dict()}", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def _history_from_csv(path: Path, step: float, delay: float) -> InputHistory:
    lines = Path(path).read_text().strip().splitlines()
    rows = []
    for line in lines:
        parts = line.replace(";", ",").split(",")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue  # header
    if not rows:
        raise SwitchpredError(f"no samples in history file {path}")
    thetas = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows])
    N = int(round(delay / step))
    if len(values) == N:
        values = np.concatenate([values, [0.0]])
    elif len(values) != N + 1:
        raise SwitchpredError(
            f"history must carry {N} or {N+1} samples at spacing {step}, "
            f"got {len(values)}"
        )
    dt = np.diff(thetas)
    if dt.size and (np.abs(dt - step) > 1e-9 * max(1.0, step)).any():
        raise SwitchpredError("history grid spacing does not match the step")
    t_now = float(thetas[0]) + delay
    return InputHistory(values, step, delay, t_now=t_now)


def run_predict(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    config = simulator.SimConfig.from_dict(data)
    part = config.system
    x_t = np.array([float(v) for v in args.state.split(",")])
    if args.history is not None:
        history = _history_from_csv(Path(args.history), config.step, config.delay)
    else:
        u0 = config.initial_inputs()
        history = InputHistory(np.concatenate([u0, [0.0]]), config.step,
                               config.delay, t_now=0.0)
    trace = implicit_predictor_trace(part, x_t, history)
    if args.method == "semiexplicit":
        p_t, seq = semi_explicit_predictor(part, x_t, history)
    else:
        p_t = trace.values[-1]
        seq = detect_mode_sequence(part, trace, history)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = part.n
    _write_csv(out / "predictor_trace.csv",
               ["theta"] + [f"p{i+1}" for i in range(n)] + ["mode"],
               ([_fmt(trace.theta[j])] + [_fmt(v) for v in trace.values[j]]
                + [str(int(trace.modes[j]))]
                for j in range(trace.values.shape[0])))
    _write_csv(out / "mode_sequence.csv", ["start", "end", "mode"],
               ([_fmt(seq.times[i]), _fmt(seq.times[i + 1]), str(seq.modes[i])]
                for i in range(len(seq.modes))))
    print(f"predicted state: {' '.join(_fmt(v) for v in p_t)} "
          f"({len(seq.modes) - 1} window switches)")
    return EXIT_OK


def run_check(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    part, _ = model.system_from_dict(data)
    if any(m.Q is None for m in part.modes):
        part, _, _ = analysis.with_default_decay(
            part, n_directions=args.directions, seed=args.seed)
    report = analysis.check_assumption2(part, n_directions=args.directions,
                                        seed=args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "assumption_report.json", report.as_dict())
    print(f"regional decay inequality: {'pass' if report.regional_ok else 'FAIL'}")
    for mc in report.per_mode:
        print(f"  mode {mc.mode}: {mc.samples} directions, worst value "
              f"{mc.worst_value:.6e} at {tuple(round(v, 6) for v in mc.worst_direction)}")
    print(f"eigenvalue bounds: {'pass' if report.eigen_ok else 'FAIL'}")
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def run_constants(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    config = simulator.SimConfig.from_dict(data)
    system, cert, auto_q, assumption_ok = simulator._prepare_certificate(config)
    payload = cert.as_dict()
    payload["auto_decay_weight"] = auto_q
    payload["assumption_check_passed"] = assumption_ok
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "certificate.json", payload)
    for key in ("M_A", "M_B", "M_K", "M_H", "nu1", "nu2", "b", "mu",
                "kappa1", "kappa2", "rho", "xi", "rho_conservative"):
        print(f"{key} = {payload[key]:.6g}")
    return EXIT_OK


def run_verify(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    config = simulator.SimConfig.from_dict(data)
    trace = read_trace_csv(Path(args.trace))
    system, cert, auto_q, assumption_ok = simulator._prepare_certificate(config)
    part = config.effective_partition()

    # rebuild the first-window transform from the logged start state
    N = config.n_delay_steps
    u0 = config.initial_inputs()
    p0_vals, p0_modes = kernels.predictor_sweep(
        part.A_stack, part.B_stack, part.P_stack, trace["x"][0], u0, config.step
    )
    gains = part.K_stack[p0_modes]
    w_initial = np.concatenate([u0, [trace["u"][0]]]) - np.einsum(
        "ij,ij->i", gains, p0_vals)

    class _View:
        pass

    view = _View()
    view.config = config
    view.times = trace["t"]
    view.states = trace["x"]
    view.inputs = trace["u"]
    view.initial_inputs = u0
    view.plant_modes = trace["sigma"]
    view.w_initial = w_initial
    view.u_all = np.concatenate([u0, trace["u"]])
    report = analysis.verify_decay(view, cert, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "decay_report.json", report.as_dict())
    print(f"functional decay: {'pass' if report.lyapunov_ok else 'FAIL'} "
          f"(margin {report.lyapunov_margin:.4f})")
    print(f"overall bound:    {'pass' if report.bound_ok else 'FAIL'} "
          f"(margin {report.bound_margin:.4f})")
    print(f"switch continuity: {'pass' if report.continuity_ok else 'FAIL'} "
          f"(max jump {report.max_jump:.3e} over {len(report.switch_jumps)} switches)")
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def run_convergence(args) -> int:
    data = _apply_common_overrides(args, _load_config_dict(args.config, args.set))
    config = simulator.SimConfig.from_dict(data)
    study = simulator.convergence_study(config, args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(len(study.steps)):
        order = "" if k == 0 else (
            "exact" if math.isnan(study.orders[k - 1]) else _fmt(study.orders[k - 1]))
        rows.append([str(k), _fmt(study.steps[k]), _fmt(study.errors[k]), order])
    _write_csv(out / "convergence.csv", ["level", "h", "error", "order"], rows)
    for row in rows:
        print("level {} h={} error={} order={}".format(*row))
    if study.exact:
        print("predictor reproduces the discrete plant exactly; no measurable "
              "discretization error at any level")
        return EXIT_OK
    ok = all(0.7 <= o <= 1.5 for o in study.orders if not math.isnan(o))
    if not ok:
        print("convergence order outside [0.7, 1.5]", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="switchpred",
                     description="Predictor feedback for switched linear "
                                 "systems with input delay")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, method_flag=True):
        p.add_argument("--config", required=True,
                       help="path to a JSON configuration or a preset name "
                            f"({', '.join(sorted(presets.PRESETS))})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration entry (repeatable, "
                            "dotted keys reach nested objects)")
        p.add_argument("--hysteresis", type=float, default=None,
                       help="override the switching band width")
        if method_flag:
            p.add_argument("--method", choices=("implicit", "semiexplicit"),
                           default=None, help="predictor computation route")

    p = sub.add_parser("simulate", help="run the closed loop and export traces")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("predict", help="compute one predictor window")
    common(p)
    p.add_argument("--state", required=True,
                   help="comma-separated current state")
    p.add_argument("--history", default=None,
                   help="CSV of theta,u samples over the past window "
                        "(defaults to the configured pre-start input)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_predict)

    p = sub.add_parser("check-assumptions",
                       help="sample the regional decay inequality")
    common(p, method_flag=False)
    p.add_argument("--directions", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=run_check)

    p = sub.add_parser("constants", help="print the stability certificate")
    common(p, method_flag=False)
    p.add_argument("--out", default=None)
    p.set_defaults(func=run_constants)

    p = sub.add_parser("verify", help="check decay properties of a trace")
    common(p, method_flag=False)
    p.add_argument("--trace", required=True, help="trace.csv from simulate")
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_verify)

    p = sub.add_parser("convergence", help="step-refinement study")
    common(p)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=run_convergence)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SwitchpredError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
