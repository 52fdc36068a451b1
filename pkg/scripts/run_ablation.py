"""Three-arm ablation on a benchmark map; prints the summary table.

    python scripts/run_ablation.py --seeds 20 --out runs/ablation
"""
import argparse
import dataclasses
import time
from pathlib import Path

from locaware.cli import format_ablation, write_ablation
from locaware.config import PlanConfig, load_config
from locaware.pipeline import load_scene, run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--map", default=None)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else PlanConfig()
    if args.map:
        cfg = dataclasses.replace(cfg, map=args.map)
    cfg = dataclasses.replace(cfg, ablation=dataclasses.replace(cfg.ablation, seeds=args.seeds))
    scene = load_scene(cfg)
    t0 = time.perf_counter()
    res = run_ablation(scene, cfg, workers=args.workers,
                       progress=lambda sd, row: print(f"seed {sd} done", flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation(out, cfg, res)
    print(format_ablation(res))
    print(f"{len(res.seeds)} seeds in {time.perf_counter() - t0:.0f} s -> {out}")


if __name__ == "__main__":
    main()
