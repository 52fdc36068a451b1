"""Command-line entry point: ``locaware <command> [--config F] [--seed N] [--out DIR]``.

Exit codes: 0 ok, 2 no path, 3 configuration error, 4 file I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, PlanConfig, dump_config, load_config
from .localizer import EvalReport
from .maps import BENCHMARKS
from .mem import MemFormatError, build_mem, save_mem
from .minco import MincoTrajectory
from .render import render_scene, save_png
from .search import IterationLimitError, NoPathError
from .world import MapConfigError, MapDecodeError

log = logging.getLogger("locaware")

EXIT_OK, EXIT_NO_PATH, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(args) -> PlanConfig:
    cfg = load_config(args.config) if args.config else PlanConfig()
    if getattr(args, "map", None):
        cfg = dataclasses.replace(cfg, map=args.map)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "seeds", None) is not None:
        cfg = dataclasses.replace(cfg, ablation=dataclasses.replace(cfg.ablation, seeds=args.seeds))
    return cfg


def _outdir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_build_mem(args) -> int:
    from .pipeline import load_scene_grid

    cfg = _config(args)
    out = _outdir(args, "mem_out")
    grid, _, _ = load_scene_grid(cfg)
    t0 = time.perf_counter()
    mem = build_mem(grid, cfg.scan)
    wall = time.perf_counter() - t0
    png_path, side = save_mem(mem, out / "mem.png")
    free = ~grid.cells
    counts = mem.full_counts()
    stats = {
        "cells": int(grid.cells.size),
        "free_cells": int(free.sum()),
        "degenerate_bit_fraction": float(counts[free].sum() / (64 * max(free.sum(), 1))),
        "mean_M_free": float(counts[free].mean()) if free.any() else float("nan"),
        "source_hash": grid.digest,
    }
    _dump(stats, out / "mem_stats.json")
    print(f"MEM {png_path} + {side.name}: {stats['cells']} cells ({stats['free_cells']} free), "
          f"{100 * stats['degenerate_bit_fraction']:.1f}% degenerate bits, mean M {stats['mean_M_free']:.2f}, "
          f"{wall:.2f} s")
    return EXIT_OK


def write_run(out: Path, cfg: PlanConfig, scene, result, report: EvalReport):
    """Write a self-contained run directory.  Everything except the printed
    timings is a deterministic function of the embedded config."""
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    _dump({"poses": np.asarray(result.path.poses).tolist(), "g_cost": result.path.g_cost,
           "expansions": result.path.expansions, "keyposes": result.keyposes.tolist()}, out / "path.json")
    _dump(result.traj.to_json(), out / "trajectory.json")
    with open(out / "cost_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "total", "J_l", "J_e", "J_G", "grad_norm"])
        for k, c in enumerate(result.opt.history):
            w.writerow([k, repr(c.total), repr(c.J_l), repr(c.J_e), repr(c.J_G), repr(c.grad_norm)])
    _dump({"status": result.opt.status, "iterations": result.opt.iterations,
           "violations": result.violations}, out / "optimizer.json")
    report.write_json(out / "eval.json")
    report.write_csv(out / "eval.csv")
    save_png(render_scene(scene.mem, scene.grid, result.path.poses, result.traj, report.errors), out / "render.png")


def cmd_plan(args) -> int:
    from .pipeline import evaluate_plan, load_scene, plan

    cfg = _config(args)
    out = _outdir(args, "run")
    scene = load_scene(cfg)
    result = plan(scene, cfg)
    report = evaluate_plan(scene, result.traj, cfg, seed=cfg.seed)
    write_run(out, cfg, scene, result, report)
    t = result.timings
    print(f"plan: {len(result.path)} poses, {len(result.keyposes)} key poses, duration {result.traj.duration:.2f} s, "
          f"optimizer {result.opt.status} in {result.opt.iterations} it; "
          f"wall {sum(t.values()):.2f} s (presearch {t['heuristic_s']:.2f}, search {t['search_s']:.2f}, "
          f"optimize {t['optimize_s']:.2f})")
    print(f"localization: mean {report.mean_error:.4f} m, goal {report.goal_deviation:.4f} m, "
          f"failures {report.failures}; artifacts in {out}")
    return EXIT_OK


def _load_run(run: Path):
    cfg = load_config(run / "config.json")
    try:
        traj = MincoTrajectory.from_json(json.loads((run / "trajectory.json").read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise OSError(f"cannot read trajectory from {run}: {exc}") from exc
    return cfg, traj


def cmd_eval(args) -> int:
    from .pipeline import evaluate_plan, load_scene

    run = Path(args.run)
    cfg, traj = _load_run(run)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    scene = load_scene(cfg)
    report = evaluate_plan(scene, traj, cfg, seed=cfg.seed)
    out = _outdir(args, str(run))
    report.write_json(out / "eval.json")
    report.write_csv(out / "eval.csv")
    print(f"localization: mean {report.mean_error:.4f} m, max {report.max_error:.4f} m, "
          f"goal {report.goal_deviation:.4f} m, failures {report.failures}")
    return EXIT_OK


def write_ablation(out: Path, cfg: PlanConfig, res):
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    _dump(res.to_json(), out / "ablation.json")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "seed", "mean_error_m", "goal_deviation_m", "plan_time_s", "duration_s"])
        for arm, s in res.arms.items():
            for sd, m, g, pt, d in zip(res.seeds, s.mean_errors, s.goal_deviations, s.plan_times, s.durations):
                w.writerow([arm, sd, repr(m), repr(g), f"{pt:.4f}", repr(d)])


def format_ablation(res) -> str:
    lines = [f"{'arm':<10} {'mean err (m)':>13} {'95% CI':>21} {'goal dev (m)':>13} {'plan (s)':>9} {'fails':>6}"]
    for arm, s in res.arms.items():
        lines.append(f"{arm:<10} {s.mean_error:13.4f} [{s.ci_low:8.4f}, {s.ci_high:8.4f}] {s.goal_deviation:13.4f} "
                     f"{np.mean(s.plan_times) if s.plan_times else float('nan'):9.2f} {s.plan_failures:6d}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    from .pipeline import load_scene, run_ablation

    cfg = _config(args)
    out = _outdir(args, "ablation")
    scene = load_scene(cfg)

    def progress(sd, row):
        done = ", ".join(f"{a} {r['mean']:.4f}" if r else f"{a} no path" for a, r in row.items())
        print(f"seed {sd}: {done}", flush=True)

    res = run_ablation(scene, cfg, progress=progress, workers=args.workers)
    write_ablation(out, cfg, res)
    print(format_ablation(res))
    return EXIT_OK


def cmd_render(args) -> int:
    from .pipeline import load_scene

    if args.run:
        run = Path(args.run)
        cfg, traj = _load_run(run)
        try:
            path = np.array(json.loads((run / "path.json").read_text())["poses"])
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise OSError(f"cannot read path from {run}: {exc}") from exc
        errors = None
        if (run / "eval.json").exists():
            errors = json.loads((run / "eval.json").read_text())["errors"]
        out = Path(args.out) if args.out else run / "render.png"
    else:
        cfg = _config(args)
        traj = path = errors = None
        out = Path(args.out or "heatmap.png")
    scene = load_scene(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(render_scene(scene.mem, scene.grid, path, traj, errors, scale=args.scale), out)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locaware", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="JSON config file (defaults apply otherwise)")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("build-mem", help="build and save the metric encoding map")
    common(sp, "output directory")
    sp.add_argument("--map", help=f"benchmark name ({', '.join(BENCHMARKS)}) or PNG path")
    sp.set_defaults(func=cmd_build_mem)

    sp = sub.add_parser("plan", help="plan one trajectory and write a run directory")
    common(sp, "run directory")
    sp.add_argument("--map", help="benchmark name or PNG path")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("eval", help="re-run localization evaluation on a run directory")
    common(sp, "output directory (default: the run directory)")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="three-arm ablation over seeds")
    common(sp, "output directory")
    sp.add_argument("--seeds", type=int, default=None, help="override number of seeds")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("render", help="render a run directory, or the MEM heatmap of a config")
    common(sp, "output PNG")
    sp.add_argument("--run")
    sp.add_argument("--map", help="benchmark name or PNG path")
    sp.add_argument("--scale", type=int, default=4, help="pixels per cell")
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (NoPathError, IterationLimitError) as exc:
        print(f"error: no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except (ConfigError, MapConfigError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MapDecodeError, MemFormatError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
