"""Rank correlation between the MEM count and scan-matching conditioning.

For random free cells on each benchmark map, compares the full-circle GFM
stored in the MEM with log of the smallest eigenvalue of the registration
Gauss-Newton Hessian from a full 360 degree scan.
"""
import argparse
import math

import numpy as np
from scipy import stats

from locaware.config import PlanConfig
from locaware.localizer import LocalizeConfig, Registration, hessian_h1, scan_points
from locaware.maps import BENCHMARKS
from locaware.pipeline import load_scene


def sample_map(name, n, rng, cfg, clearance=0.3):
    sc = load_scene(PlanConfig(map=name))
    free = np.argwhere(sc.df.distance >= clearance)
    counts = sc.mem.full_counts()
    M, logl = [], []
    for r, c in free[rng.choice(len(free), min(n, len(free)), replace=False)]:
        x, y = sc.grid.cell_center(r, c)
        H = hessian_h1(Registration(scan_points(sc.df, (x, y, 0.0), cfg), sc.df, np.array([x, y, 0.0])))
        M.append(int(counts[r, c]))
        logl.append(math.log(max(np.linalg.eigvalsh(H)[0], 1e-300)))
    return M, logl


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--per-map", type=int, default=120)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    cfg = LocalizeConfig(fov=2 * math.pi, n_rays=180, max_range=8.0)
    rng = np.random.default_rng(args.seed)
    allM, allL = [], []
    for name in BENCHMARKS:
        M, logl = sample_map(name, args.per_map, rng, cfg)
        print(f"{name:<16} n={len(M):4d}  spearman {stats.spearmanr(M, logl)[0]:+.3f}")
        allM += M
        allL += logl
    print(f"{'pooled':<16} n={len(allM):4d}  spearman {stats.spearmanr(allM, allL)[0]:+.3f}")


if __name__ == "__main__":
    main()
