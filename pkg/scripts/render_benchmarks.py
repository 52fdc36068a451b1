"""Plan on every benchmark map and save MEM heatmaps with the result overlaid."""
import argparse
import dataclasses
from pathlib import Path

from locaware.config import PlanConfig
from locaware.maps import BENCHMARKS
from locaware.pipeline import evaluate_plan, load_scene, plan
from locaware.render import mem_heatmap, render_scene, save_png


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/renders")
    ap.add_argument("--scale", type=int, default=4)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in BENCHMARKS:
        cfg = dataclasses.replace(PlanConfig(), map=name)
        sc = load_scene(cfg)
        save_png(mem_heatmap(sc.mem, sc.grid, args.scale), out / f"{name}_mem.png")
        pr = plan(sc, cfg)
        rep = evaluate_plan(sc, pr.traj, cfg, seed=cfg.seed)
        save_png(render_scene(sc.mem, sc.grid, pr.path.poses, pr.traj, rep.errors, scale=args.scale),
                 out / f"{name}_plan.png")
        print(f"{name}: {len(pr.keyposes)} key poses, {pr.traj.duration:.1f} s, mean error {rep.mean_error:.4f} m")


if __name__ == "__main__":
    main()
