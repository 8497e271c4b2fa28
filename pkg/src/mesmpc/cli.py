"""Command-line front end: ``mesmpc run | validate | scenarios``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, resolve, scenario_to_ini, validate_scenario, load_scenario, apply_overrides
from .experiment import RunResult, run_scenario
from .learner import LearningError
from .mes import effective_frequency
from .mpc import MpcSolveError
from .servo import canned_scenarios

log = logging.getLogger("mesmpc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

TRACE_HEADER = ["t", "x1", "x2", "x3", "x4", "u", "y1", "y2", "r", "y_e1", "y_e2", "sigma", "qp_iterations"]


def _g(v) -> str:
    return format(float(v), ".17g")


def write_trace(path: Path, res: RunResult):
    a = res.trace.arrays()
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(TRACE_HEADER) + "\n")
        for k in range(len(a["t"])):
            row = [a["t"][k], *a["x"][k], a["u"][k][0], *a["y"][k], a["r"][k], *a["y_e"][k], a["sigma"][k]]
            fh.write(",".join(_g(v) for v in row) + f",{int(a['qp_iterations'][k])}\n")


def write_learning(path: Path, res: RunResult):
    names = [p.name for p in res.scenario.learned]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(["iter", "Q"] + [f"delta_{n}" for n in names]) + "\n")
        for i, (q, d) in enumerate(zip(res.trace.Q, res.trace.delta_hat), start=1):
            fh.write(",".join([str(i), _g(q)] + [_g(v) for v in np.atleast_1d(d)]) + "\n")


def violation_counts(res: RunResult) -> dict[str, int]:
    a = res.trace.arrays()
    t = res.scenario.tuning
    return {
        "input_bound_violations": int(np.sum(np.abs(a["u"][:, 0]) > t.u_max + 1e-7)),
        "torque_bound_violations": int(np.sum(np.abs(a["y"][:, 1]) > t.torque_max)),
    }


def summary_text(res: RunResult) -> str:
    a = res.trace.arrays()
    s = res.scenario
    names = [p.name for p in s.learned]
    lines = [
        f"scenario: {s.name}",
        f"learning: {'on' if res.learning else 'off'}",
        f"steps: {len(a['t'])}",
        f"N_E: {s.n_e}",
        f"termination_iteration: {res.termination_iteration}",
        f"terminated_by_threshold: {str(res.trace.terminated).lower()}",
        f"Q_nominal: {_g(res.q_nominal)}",
        f"epsilon_Q: {_g(res.epsilon_Q)}",
    ]
    if res.trace.Q:
        lines.append(f"Q_first: {_g(res.trace.Q[0])}")
        lines.append(f"Q_last: {_g(res.trace.Q[-1])}")
        first = res.trace.first_below(res.epsilon_Q)
        lines.append(f"first_iteration_below_epsilon: {first if first is not None else 'none'}")
    for n, v in zip(names, np.atleast_1d(res.final_delta)):
        lines.append(f"final_delta_{n}: {_g(v)}")
    for k, v in violation_counts(res).items():
        lines.append(f"{k}: {v}")
    n_per = int(round(s.period / s.dt_mpc))
    tail = a["y_e"][-n_per:, 0]
    lines.append(f"rms_tracking_error_last_period: {_g(np.sqrt(np.mean(tail ** 2)))}")
    clamped = sorted({n for c in res.trace.clamped for n in c})
    if clamped:
        lines.append(f"clamped_parameters: {' '.join(clamped)}")
    return "\n".join(lines) + "\n"


PLOT_SCRIPT = '''\
"""Figures from trace.csv and learning.csv in this directory (requires matplotlib)."""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
U_MAX = {u_max!r}
TORQUE_MAX = {torque_max!r}


def columns(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {{k: [float(r[k]) for r in rows] for k in rows[0]}} if rows else {{}}


def signals(tr, out):
    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(7, 7))
    ax[0].plot(tr["t"], tr["r"], "k--", label="reference")
    ax[0].plot(tr["t"], tr["y1"], label="load angle")
    ax[0].set_ylabel("rad")
    ax[0].legend(loc="upper right")
    ax[1].plot(tr["t"], tr["y2"])
    for s in (-1, 1):
        ax[1].axhline(s * TORQUE_MAX, color="k", ls="--")
        ax[2].axhline(s * U_MAX, color="k", ls="--")
    ax[1].set_ylabel("shaft torque [Nm]")
    ax[2].plot(tr["t"], tr["u"])
    ax[2].set_ylabel("voltage [V]")
    ax[2].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out)


def learning(lc, out_prefix):
    it = lc["iter"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(it, lc["Q"], "o-")
    ax.set_xlabel("iteration")
    ax.set_ylabel("Q")
    fig.tight_layout()
    fig.savefig(f"{{out_prefix}}_cost.png")
    for key in lc:
        if key.startswith("delta_"):
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.plot(it, lc[key], "o-")
            ax.set_xlabel("iteration")
            ax.set_ylabel(key)
            fig.tight_layout()
            fig.savefig(f"{{out_prefix}}_{{key}}.png")


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else HERE
    signals(columns(HERE / "trace.csv"), out / "signals.png")
    lc = columns(HERE / "learning.csv")
    if lc:
        learning(lc, str(out / "learning"))
'''


def write_outputs(out_dir: Path, res: RunResult):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "trace.csv", res)
    write_learning(out_dir / "learning.csv", res)
    (out_dir / "summary.txt").write_text(summary_text(res))
    (out_dir / "scenario.ini").write_text(scenario_to_ini(res.scenario))
    t = res.scenario.tuning
    (out_dir / "plot_figures.py").write_text(PLOT_SCRIPT.format(u_max=t.u_max, torque_max=t.torque_max))


def cmd_run(cfg: RunConfig) -> int:
    try:
        s = resolve(cfg)
    except ConfigError as exc:
        for mod, msg in exc.problems:
            print(f"error [{mod}]: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run_scenario(s)
    except (MpcSolveError, LearningError) as exc:
        mod = "learner" if isinstance(exc, LearningError) else "mpc"
        print(f"error [{mod}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error [runtime]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_outputs(Path(cfg.out_dir), res)
    print(summary_text(res), end="")
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    try:
        s = apply_overrides(load_scenario(cfg.scenario), cfg.overrides, cfg.dithers, cfg.learning, cfg.steps)
    except ConfigError as exc:
        for mod, msg in exc.problems:
            print(f"error [{mod}]: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    print(scenario_to_ini(s), end="")
    dt_mes = s.n_e * s.dt_mpc
    print(f"resolved N_E={s.n_e} dt_mes={_g(dt_mes)}")
    for p in s.learned:
        if p.omega > 0:
            print(f"effective frequency {p.name}: {effective_frequency(p.omega, dt_mes):.6f} rad/iteration")
    probs = validate_scenario(s)
    if probs:
        for mod, msg in probs:
            print(f"error [{mod}]: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    print("OK")
    return EXIT_OK


def cmd_scenarios() -> int:
    for s in canned_scenarios():
        learned = ", ".join(f"{p.name} (a={p.a:g}, omega={p.omega:g})" for p in s.learned) or "none"
        print(f"{s.name}: learning={'on' if s.learning else 'off'}; learned: {learned}")
    return EXIT_OK


def _dither(text: str):
    try:
        name, a, omega = text.split(":")
        return name, (float(a), float(omega))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME:A:OMEGA, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mesmpc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", action="append", required=True,
                       help="canned scenario name or scenario file (repeatable for run)")
        p.add_argument("--no-learning", dest="learning", action="store_false", default=None)
        p.add_argument("--learning", dest="learning", action="store_true")
        p.add_argument("--steps", type=int, help="closed-loop steps when learning is off")
        p.add_argument("--rho", type=float)
        p.add_argument("--g", type=float, help="gear ratio")
        p.add_argument("--n-e", dest="N_E", type=int)
        p.add_argument("--eps-factor", type=float)
        p.add_argument("--max-iterations", type=int)
        p.add_argument("--q-nominal", type=float)
        p.add_argument("--dither", type=_dither, action="append", default=[], metavar="NAME:A:OMEGA")

    run = sub.add_parser("run", help="simulate a scenario and write CSV traces")
    common(run)
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--jobs", type=int, default=1, help="parallel scenarios")
    common(sub.add_parser("validate", help="check a configuration without simulating"))
    sub.add_parser("scenarios", help="list canned scenarios")
    return ap


def _configs(args) -> list[RunConfig]:
    overrides = {k: getattr(args, k) for k in ("rho", "g", "N_E", "eps_factor", "max_iterations", "q_nominal")
                 if getattr(args, k) is not None}
    out = getattr(args, "out", Path("out"))
    many = len(args.scenario) > 1
    return [
        RunConfig(
            scenario=name,
            out_dir=out / Path(name).stem if many else out,
            overrides=overrides,
            dithers=dict(args.dither),
            learning=args.learning,
            steps=args.steps,
        )
        for name in args.scenario
    ]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        return cmd_scenarios()
    cfgs = _configs(args)
    if args.command == "validate":
        return max(cmd_validate(c) for c in cfgs)
    if args.jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            return max(pool.map(cmd_run, cfgs))
    return max(cmd_run(c) for c in cfgs)


if __name__ == "__main__":
    sys.exit(main())
