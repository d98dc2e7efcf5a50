"""Command-line interface: synthesize gains, simulate loops, run demos.

Three subcommands:

* ``synthesize``: read a system file and a config file, run the synthesis
  pipeline, write a gain file with the certificate and iterate history.
* ``simulate``: roll out a gain from a gain file against a system file
  and write the trajectory CSV.
* ``demo``: one-command reproduction of the built-in examples, producing
  gain file, CSV, per-channel plots and a run manifest per case.

Exit codes: 0 success, 2 infeasible initialization, 1 anything else
(I/O, parsing, dimension mismatches, divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .simulation import (
    Trajectory,
    estimate_equilibrium,
    fit_exponential_decay,
    simulate_closed_loop,
    simulate_tracking,
    write_trajectory_csv,
)
from .synthesis import (
    InitializationInfeasibleError,
    SynthesisConfig,
    SynthesisError,
    SynthesisOutcome,
    synthesize_gain,
)
from .system_model import (
    AugmentedSystem,
    ContinuousSystem,
    LipschitzSystem,
    augment_for_tracking,
    euler_discretize,
    get_nonlinearity,
    load_system_file,
)

logger = logging.getLogger("lipsyn.cli")

DEMO_IDS = ("example1", "example2")
DEMO_STEPS = {"example1": 5000, "example2": 40000}
DEMO_X0 = {"example1": (-2.0, -1.0), "example2": (-1.5, 1.0, 0.5, -2.0)}
DEMO_REFERENCE = {"example1": -1.5, "example2": 1.5}
TRACKING_E = 1e-3


# ---------------------------------------------------------------------------
# built-in example plants (single source of truth: continuous matrices,
# discretized at runtime)


def example1_system() -> LipschitzSystem:
    """Two-state plant with a bounded cosine nonlinearity, T = 0.01."""
    cont = ContinuousSystem(
        A=np.array([[-2.0, 3.0], [3.0, 1.0]]),
        B=np.array([[0.0], [1.0]]),
        G=np.eye(2),
        C=np.array([[1.0, 0.0]]),
        f=get_nonlinearity("example1_cosine"),
        gamma_x=1.0,
        gamma_u=0.1,
        f_name="example1_cosine",
    )
    return euler_discretize(cont, 0.01)


def example2_system() -> LipschitzSystem:
    """Four-state flexible-joint arm with a sine nonlinearity, T = 0.001."""
    cont = ContinuousSystem(
        A=np.array([
            [0.0, 1.0, 0.0, 0.0],
            [-48.6, -1.25, 48.6, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.95, 0.0, -1.95, 0.0],
        ]),
        B=np.array([[0.0], [21.6], [0.0], [0.0]]),
        G=np.eye(4),
        C=np.array([[0.0, 0.0, 1.0, 0.0]]),
        f=get_nonlinearity("example2_sine"),
        gamma_x=0.25,
        gamma_u=0.0,
        f_name="example2_sine",
    )
    return euler_discretize(cont, 0.001)


_SYSTEM_BUILDERS = {"example1": example1_system, "example2": example2_system}

# Per-case tuning.  The stabilization cases pin the Step-1 result to unit
# scale; the tracking cases work at the solver's native (small) scale,
# where the augmented problems are feasible, with sigma lowered to match.
_DEMO_CONFIGS = {
    ("example1", False): SynthesisConfig(alpha_init=1e-2, rho=-20.0,
                                         kappa0=10.0, q0_scale=1.0,
                                         sigma=1.0),
    ("example1", True): SynthesisConfig(alpha_init=7e-4, rho=-20.0,
                                        kappa0=40.0, q0_scale=None,
                                        sigma=1e-8),
    ("example2", False): SynthesisConfig(alpha_init=1e-3, rho=-5.0,
                                         kappa0=1.0, q0_scale=1.0,
                                         sigma=1.0),
    ("example2", True): SynthesisConfig(alpha_init=1e-4, rho=-5.0,
                                        kappa0=1.0, q0_scale=5e-5,
                                        sigma=1e-8),
}


def demo_config(example_id: str, tracking: bool) -> SynthesisConfig:
    try:
        return _DEMO_CONFIGS[(example_id, tracking)]
    except KeyError:
        raise ValueError(
            f"unknown demo case {example_id!r}; available ids: "
            f"{', '.join(DEMO_IDS)}"
        ) from None


def demo_plant(example_id: str,
               tracking: bool) -> Union[LipschitzSystem, AugmentedSystem]:
    if example_id not in _SYSTEM_BUILDERS:
        raise ValueError(
            f"unknown demo case {example_id!r}; available ids: "
            f"{', '.join(DEMO_IDS)}"
        )
    base = _SYSTEM_BUILDERS[example_id]()
    if not tracking:
        return base
    p = base.p
    ref = [DEMO_REFERENCE[example_id]] * p
    return augment_for_tracking(base, TRACKING_E * np.eye(p), ref)


# ---------------------------------------------------------------------------
# serialization helpers (12 significant digits, bit-stable across reruns)


def _round12(x: float) -> float:
    return float(f"{float(x):.12g}")


def _jsonify(obj):
    if isinstance(obj, (bool, int, str)) or obj is None:
        return obj
    if isinstance(obj, (float, np.floating)):
        return _round12(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    raise TypeError(f"cannot serialize value of type {type(obj).__name__}")


def _gain_payload(outcome: SynthesisOutcome) -> dict:
    final = outcome.history[-1]
    return _jsonify({
        "K": final.K,
        "kappa": final.kappa,
        "alpha": final.alpha,
        "epsilon": final.epsilon,
        "w": final.w,
        "t": final.t,
        "converged": outcome.converged,
        "stop_reason": outcome.stop_reason,
        "certificate": {
            "lhs_eigs": list(outcome.certificate.lhs_eigs),
            "max_lhs_eig": max(outcome.certificate.lhs_eigs),
            "norm_gap": outcome.certificate.norm_gap,
            "scalar_checks": outcome.certificate.scalar_checks,
            "closed_loop_radius": outcome.certificate.closed_loop_radius,
            "valid": outcome.certificate.valid,
            "within_tolerance": outcome.certificate.within_tolerance(),
        },
        "history": [
            {"k": k, "t": it.t, "alpha": it.alpha}
            for k, it in enumerate(outcome.history)
        ],
    })


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_hash(params: dict) -> str:
    canon = json.dumps(_jsonify(params), sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_manifest(path, command: str, inputs: list, params: dict,
                    outputs: list, duration: float,
                    history_summary: Optional[dict] = None) -> None:
    payload = {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "config_sha256": _config_hash(params),
        "outputs": [str(p) for p in outputs],
        "duration_seconds": _round12(duration),
        "history_summary": _jsonify(history_summary),
    }
    _write_json(path, payload)


def _history_summary(outcome: SynthesisOutcome) -> dict:
    return {
        "iterations": outcome.iterations,
        "t_first": outcome.history[0].t,
        "t_final": outcome.history[-1].t,
        "alpha_final": outcome.history[-1].alpha,
        "kappa": outcome.kappa,
        "converged": outcome.converged,
    }


# ---------------------------------------------------------------------------
# plotting (matplotlib used without pyplot so worker threads stay safe)


def _plot_channel(values: np.ndarray, path, title: str, ylabel: str,
                  reference: Optional[float] = None) -> None:
    from matplotlib.backends.backend_agg import FigureCanvasAgg
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7.0, 3.2), dpi=110)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.plot(np.arange(len(values)), values, linewidth=1.0)
    if reference is not None:
        ax.axhline(reference, linestyle="--", linewidth=1.0, color="tab:red")
    ax.set_xlabel("k")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)


def _reference_overlay(plant, tracking: bool) -> dict[int, float]:
    """Map state-channel index -> reference value for plot overlays.

    For tracking runs whose output rows each select a single state, the
    reference is drawn on that state's chart.
    """
    if not tracking:
        return {}
    base = plant.base
    overlays = {}
    for j in range(base.p):
        row = base.C[j]
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size == 1 and abs(row[nz[0]] - 1.0) < 1e-12:
            overlays[int(nz[0])] = float(plant.reference[j])
    return overlays


# ---------------------------------------------------------------------------
# subcommands


def _load_config_file(path: Optional[str]) -> SynthesisConfig:
    if path is None:
        return SynthesisConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"could not parse config file {path}: {exc}") from exc
    return SynthesisConfig.from_dict(data)


def cmd_synthesize(args) -> int:
    t_start = time.perf_counter()
    plant = load_system_file(args.system)
    config = _load_config_file(args.config)
    outcome = synthesize_gain(plant, config)
    out_path = Path(args.out)
    _write_json(out_path, _gain_payload(outcome))
    duration = time.perf_counter() - t_start
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_manifest(
        manifest_path, "synthesize",
        inputs=[args.system] + ([args.config] if args.config else []),
        params=config.to_dict(),
        outputs=[out_path], duration=duration,
        history_summary=_history_summary(outcome),
    )
    cert = outcome.certificate
    print(f"synthesize: wrote {out_path} "
          f"({outcome.iterations} refinement iterations, "
          f"max certificate eig {max(cert.lhs_eigs):.3e}, "
          f"closed-loop radius {cert.closed_loop_radius:.6f})")
    if not outcome.converged:
        print(f"synthesize: note: {outcome.stop_reason}")
    return 0


def _load_gain_file(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"could not parse gain file {path}: {exc}") from exc
    if not isinstance(data, dict) or "K" not in data:
        raise ValueError(f"gain file {path} must be an object with key 'K'")
    return np.asarray(data["K"], dtype=float)


def cmd_simulate(args) -> int:
    t_start = time.perf_counter()
    plant = load_system_file(args.system)
    K = _load_gain_file(args.gain)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    steps = int(args.steps)

    is_tracking = isinstance(plant, AugmentedSystem)
    if args.tracking and not is_tracking:
        raise ValueError(
            "--tracking was given but the system file has no 'tracking' block"
        )
    if is_tracking:
        traj = simulate_tracking(plant, K, x0, steps)
        sim_sys = plant.system
    else:
        traj = simulate_closed_loop(plant, K, x0, steps)
        sim_sys = plant

    out_path = Path(args.out)
    write_trajectory_csv(traj, out_path)
    duration = time.perf_counter() - t_start
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    _write_manifest(
        manifest_path, "simulate",
        inputs=[args.system, args.gain],
        params={"x0": list(x0), "steps": steps, "tracking": is_tracking,
                "gain": _jsonify(K)},
        outputs=[out_path], duration=duration,
    )

    try:
        eq = estimate_equilibrium(traj, 0.1, sys=sim_sys)
        x_eq = eq.x_eq
        settled = True
    except ValueError:
        x_eq = np.zeros(traj.n)
        settled = False
    fit = fit_exponential_decay(traj, x_eq)
    final_err = float(np.linalg.norm(traj.states[-1] - x_eq))
    line = (f"simulate: wrote {out_path}; final error norm {final_err:.6e}, "
            f"fitted decay rate {fit.rate:.6f}")
    if not settled:
        line += " (tail not settled, errors measured from the origin)"
    if is_tracking:
        y_err = float(np.linalg.norm(traj.outputs[-1] - plant.reference))
        line += f", |y[N] - r| = {y_err:.6e}"
    print(line)
    return 0


def _run_demo_case(example_id: str, tracking: bool, steps: Optional[int],
                   out_root: Path) -> dict:
    t_start = time.perf_counter()
    plant = demo_plant(example_id, tracking)
    config = demo_config(example_id, tracking)
    outcome = synthesize_gain(plant, config)

    case_name = f"{example_id}_{'tracking' if tracking else 'stabilization'}"
    case_dir = out_root / case_name
    case_dir.mkdir(parents=True, exist_ok=True)

    gain_path = case_dir / "gain.json"
    _write_json(gain_path, _gain_payload(outcome))

    N = int(steps) if steps else DEMO_STEPS[example_id]
    x0 = DEMO_X0[example_id]
    if tracking:
        traj = simulate_tracking(plant, outcome.K, x0, N)
        sim_sys = plant.system
    else:
        traj = simulate_closed_loop(plant, outcome.K, x0, N)
        sim_sys = plant

    csv_path = case_dir / "trajectory.csv"
    write_trajectory_csv(traj, csv_path)

    overlays = _reference_overlay(plant, tracking)
    plot_paths = []
    for i in range(traj.n):
        p = case_dir / f"state_{i + 1}.png"
        _plot_channel(traj.states[:, i], p,
                      title=f"{case_name}: state {i + 1}",
                      ylabel=f"x{i + 1}[k]",
                      reference=overlays.get(i))
        plot_paths.append(p)

    outputs = [gain_path, csv_path] + plot_paths
    duration = time.perf_counter() - t_start
    manifest_path = case_dir / "manifest.json"
    _write_manifest(
        manifest_path, "demo", inputs=[],
        params={"example": example_id, "tracking": tracking, "steps": N,
                **config.to_dict()},
        outputs=outputs, duration=duration,
        history_summary=_history_summary(outcome),
    )

    summary = {
        "case": case_name,
        "iterations": outcome.iterations,
        "converged": outcome.converged,
        "directory": str(case_dir),
        "duration": duration,
    }
    if tracking:
        summary["tracking_error"] = float(
            np.linalg.norm(traj.outputs[-1] - plant.reference))
    else:
        eq = estimate_equilibrium(traj, 0.1, sys=sim_sys)
        fit = fit_exponential_decay(traj, eq.x_eq)
        summary["final_error"] = float(
            np.linalg.norm(traj.states[-1] - eq.x_eq))
        summary["equilibrium_residual"] = eq.residual
        summary["decay_rate"] = fit.rate
    return summary


def cmd_demo(args) -> int:
    ids = args.ids or list(DEMO_IDS)
    for example_id in ids:
        if example_id not in DEMO_IDS:
            raise ValueError(
                f"unknown example id {example_id!r}; available ids: "
                f"{', '.join(DEMO_IDS)}"
            )
    out_root = Path(args.out)
    jobs = max(1, int(args.jobs))
    cases = [(example_id, bool(args.tracking)) for example_id in ids]

    summaries = []
    if jobs == 1 or len(cases) == 1:
        for example_id, tracking in cases:
            summaries.append(_run_demo_case(example_id, tracking,
                                            args.steps, out_root))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_demo_case, example_id, tracking,
                                   args.steps, out_root)
                       for example_id, tracking in cases]
            summaries = [f.result() for f in futures]

    for s in summaries:
        bits = [f"demo {s['case']}: {s['iterations']} iterations",
                f"converged={s['converged']}"]
        if "tracking_error" in s:
            bits.append(f"tracking error {s['tracking_error']:.3e}")
        else:
            bits.append(f"final error {s['final_error']:.3e}")
            bits.append(f"decay rate {s['decay_rate']:.6f}")
        bits.append(f"outputs in {s['directory']}")
        print(", ".join(bits))
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipsyn",
        description="LMI-based feedback synthesis for Lipschitz nonlinear "
                    "systems",
        exit_on_error=False,
    )
    sub = parser.add_subparsers(dest="command")

    p_syn = sub.add_parser("synthesize", exit_on_error=False,
                           help="compute a stabilizing gain for a system file")
    p_syn.add_argument("--system", required=True,
                       help="system description (JSON)")
    p_syn.add_argument("--config", default=None,
                       help="synthesis config (JSON); defaults used if omitted")
    p_syn.add_argument("--out", default="gain.json",
                       help="output gain file path")
    p_syn.set_defaults(func=cmd_synthesize)

    p_sim = sub.add_parser("simulate", exit_on_error=False,
                           help="roll out a gain against a system file")
    p_sim.add_argument("--system", required=True,
                       help="system description (JSON)")
    p_sim.add_argument("--gain", required=True, help="gain file (JSON)")
    p_sim.add_argument("--x0", required=True,
                       help="initial state, comma-separated")
    p_sim.add_argument("--steps", type=int, default=5000,
                       help="number of steps to simulate")
    p_sim.add_argument("--out", default="trajectory.csv",
                       help="output CSV path")
    p_sim.add_argument("--tracking", action="store_true",
                       help="require the system file's tracking block")
    p_sim.set_defaults(func=cmd_simulate)

    p_demo = sub.add_parser("demo", exit_on_error=False,
                            help="run the built-in examples end to end")
    p_demo.add_argument("ids", nargs="*",
                        help="example ids (default: all)")
    p_demo.add_argument("--tracking", action="store_true",
                        help="run the tracking variants")
    p_demo.add_argument("--steps", type=int, default=None,
                        help="override the per-example horizon")
    p_demo.add_argument("--jobs", type=int, default=1,
                        help="worker threads for independent cases")
    p_demo.add_argument("--out", default="demo_out",
                        help="output directory")
    p_demo.set_defaults(func=cmd_demo)
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("LIPSYN_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    level = levels.get(level_name, logging.ERROR)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    logging.getLogger("lipsyn").setLevel(level)


def main(argv=None) -> int:
    _configure_logging()
    # cvxpy warns about near-tolerance solutions; the post-solve eigenvalue
    # verification in lmi_core is the authoritative check, so keep the CLI
    # output clean.
    warnings.filterwarnings("ignore", category=UserWarning, module="cvxpy")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except argparse.ArgumentError as exc:
        print(f"lipsyn: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except InitializationInfeasibleError as exc:
        print(f"lipsyn: infeasible initialization: {exc}", file=sys.stderr)
        return 2
    except SynthesisError as exc:
        print(f"lipsyn: synthesis failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"lipsyn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
