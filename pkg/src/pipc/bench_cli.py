"""Command-line entry point: single trials, benchmark grids, SVG rendering and
the built-in oracle selftest.

Exit codes: 0 success, 1 trial-failure outcome or failed selftest, 2 usage or
configuration errors.  The PIPC_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import render, selftest
from .errors import ConfigError, PipcError
from .simulator import OUTCOME_SUCCESS, SimConfig, TrialResult, run_benchmark, run_trial

log = logging.getLogger("pipc.cli")

TRAJECTORY_COLUMNS = ("t", "px", "py", "vx", "vy", "ux", "uy")
AGGREGATE_COLUMNS = (
    "mode", "q_x", "n_obs", "success_rate", "mean_time", "std_time",
    "mean_length", "std_length", "mean_cost", "std_cost", "k_success",
)
TRIAL_COLUMNS = (
    "mode", "q_x", "n_obs", "trial", "seed", "outcome",
    "time_to_goal", "path_length", "path_cost",
)


def _configure_logging():
    level = os.environ.get("PIPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return data


def _fmt(value) -> str:
    """Stable text form for CSV cells; floats keep full round-trip precision."""
    if value is None:
        return "nan"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trajectory_csv(path: Path, samples: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in samples:
            writer.writerow([_fmt(float(v)) for v in row])


def read_trajectory_csv(path: Path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != TRAJECTORY_COLUMNS:
                raise ConfigError(f"{path} is not a trajectory CSV (bad header {header})")
            rows = [[float(v) for v in row] for row in reader]
    except (OSError, ValueError) as exc:
        raise ConfigError(f"malformed trajectory CSV {path}: {exc}") from exc
    return np.array(rows).reshape(-1, len(TRAJECTORY_COLUMNS))


def write_trial_outputs(outdir: Path, cfg: SimConfig, result: TrialResult) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(outdir / "trajectory.csv", result.samples)
    payload = {
        "outcome": result.outcome,
        "time_to_goal": result.time_to_goal,
        "path_length": result.path_length,
        "path_cost": result.path_cost,
        "seed": result.seed,
        "mode": result.mode,
        "diagnostic": result.diagnostic,
        "replan_costs": result.replan_costs,
        "horizons": [h.tolist() for h in result.horizons],
        "obstacle_snapshots": [s.tolist() for s in result.obstacle_snapshots],
        "config": cfg.to_dict(),
    }
    with open(outdir / "result.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def render_from_outputs(outdir: Path, replan_index: int | None = None) -> Path:
    samples = read_trajectory_csv(outdir / "trajectory.csv")
    try:
        with open(outdir / "result.json") as fh:
            result = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read trial result in {outdir}: {exc}") from exc
    horizons = result.get("horizons", [])
    snapshots = result.get("obstacle_snapshots", [])
    cfg = result.get("config", {})
    if replan_index is None:
        replan_index = len(horizons) - 1
    horizon = None
    if horizons and 0 <= replan_index < len(horizons):
        horizon = np.array(horizons[replan_index])
    obstacles = np.zeros((0, 2))
    if snapshots:
        snap_index = min(replan_index if replan_index >= 0 else 0, len(snapshots) - 1)
        obstacles = np.array(snapshots[snap_index]).reshape(-1, 2)
    svg = render.render_svg(
        executed_xy=samples[:, 1:3],
        horizon_xy=horizon,
        obstacle_centers=obstacles,
        start=tuple(cfg.get("start", (2.0, 10.0))),
        goal=tuple(cfg.get("goal", (28.0, 10.0))),
    )
    path = outdir / "trial.svg"
    path.write_text(svg)
    return path


def cmd_trial(args) -> int:
    data = _load_json(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.mode is not None:
        data["mode"] = args.mode
    cfg = SimConfig.from_dict(data)
    if tuple(cfg.start) == tuple(cfg.goal):
        raise ConfigError("goal coincides with start; the goal weighting is undefined")
    result = run_trial(cfg)
    outdir = Path(args.out)
    write_trial_outputs(outdir, cfg, result)
    if args.render:
        render_from_outputs(outdir)
    log.info("trial outcome: %s", result.outcome)
    print(f"outcome={result.outcome} time_to_goal={result.time_to_goal} "
          f"path_length={result.path_length:.3f} path_cost={result.path_cost:.3f}")
    return 0 if result.outcome == OUTCOME_SUCCESS else 1


def cmd_benchmark(args) -> int:
    data = _load_json(args.config)
    modes = data.pop("modes", None)
    q_x_values = data.pop("q_x_values", None)
    n_obs_values = data.pop("n_obs_values", None)
    trials = data.pop("trials", None)
    base_seed = data.pop("base_seed", 0)
    if not (modes and q_x_values and n_obs_values and trials):
        raise ConfigError("benchmark config needs modes, q_x_values, n_obs_values and trials")
    base = SimConfig.from_dict(data)
    trial_rows, aggregates = run_benchmark(
        modes, [float(q) for q in q_x_values], [int(n) for n in n_obs_values],
        int(trials), base_seed=int(base_seed), base_config=base,
        jobs=args.jobs,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "trials.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_COLUMNS)
        for mode, q_x, n_obs, k, seed, res in trial_rows:
            writer.writerow([
                mode, _fmt(q_x), n_obs, k, seed, res.outcome,
                _fmt(res.time_to_goal), _fmt(res.path_length), _fmt(res.path_cost),
            ])
    agg_dicts = [vars(a).copy() for a in aggregates]
    with open(outdir / "aggregates.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for a in aggregates:
            writer.writerow([
                a.mode, _fmt(a.q_x), a.n_obs, _fmt(a.success_rate),
                _fmt(a.mean_time), _fmt(a.std_time), _fmt(a.mean_length),
                _fmt(a.std_length), _fmt(a.mean_cost), _fmt(a.std_cost), a.k_success,
            ])
    with open(outdir / "aggregates.json", "w") as fh:
        json.dump(agg_dicts, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(trial_rows)} trials / {len(aggregates)} cells to {outdir}")
    return 0


def cmd_render(args) -> int:
    path = render_from_outputs(Path(args.out), args.replan)
    print(f"wrote {path}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if selftest.run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pipc",
        description="Receding-horizon planning/control benchmark on a 2D holonomic robot",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_trial = sub.add_parser("trial", help="run a single trial from a scenario config")
    p_trial.add_argument("--config", required=True, help="scenario JSON path")
    p_trial.add_argument("--out", required=True, help="output directory")
    p_trial.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_trial.add_argument("--mode", default=None,
                         choices=["mdp-cl", "mdp-ol", "pomdp-cl", "pomdp-ol"],
                         help="override the scenario mode")
    p_trial.add_argument("--render", action="store_true", help="also write trial.svg")
    p_trial.set_defaults(func=cmd_trial)

    p_bench = sub.add_parser("benchmark", help="run a benchmark grid")
    p_bench.add_argument("--config", required=True, help="grid JSON path")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                         help="parallel worker processes")
    p_bench.set_defaults(func=cmd_benchmark)

    p_render = sub.add_parser("render", help="render an existing trial output directory")
    p_render.add_argument("--out", required=True, help="trial output directory")
    p_render.add_argument("--replan", type=int, default=None,
                          help="replan index for the horizon preview (default: last)")
    p_render.set_defaults(func=cmd_render)

    p_self = sub.add_parser("selftest", help="run the built-in oracle checks")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
