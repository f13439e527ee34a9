"""Tune (h, T, d) on synthetic scenes with Bayesian optimization and grid search.

Tunes on scenes 0-49, reports the optimized detector on held-out scenes 50-99.

Usage: python3 scripts/tune_demo.py [--budget N] [--seed N] [--no-grid]
"""
import argparse
import time

from ichloc.bayesopt import DEFAULT_SPACE, grid_search, optimize_detector
from ichloc.metrics import aggregate, evaluate_slices, report
from ichloc.pipeline import DiceObjective, detect_all
from ichloc.synth import SceneConfig, generate_scenes


def fmt(params):
    return f"h={params['h']:.4g} T={params['T']:.4g} d={params['d']:.0f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0, help="optimizer seed")
    ap.add_argument("--scene-seed", type=int, default=7)
    ap.add_argument("--no-grid", action="store_true", help="skip the 1000-point grid search")
    args = ap.parse_args()

    cfg = SceneConfig(seed=args.scene_seed)
    maps, boxes = generate_scenes(cfg, range(50))
    objective = DiceObjective(maps, boxes)

    start = time.perf_counter()
    best, _ = optimize_detector(objective, DEFAULT_SPACE, budget=args.budget, seed=args.seed)
    print(f"BO   ({args.budget:4d} evals, {time.perf_counter() - start:5.1f} s): dice {best.objective:.4f} at {fmt(best.params)}")
    if not args.no_grid:
        start = time.perf_counter()
        grid_best, _ = grid_search(objective, DEFAULT_SPACE, n=10)
        print(f"grid (1000 evals, {time.perf_counter() - start:5.1f} s): dice {grid_best.objective:.4f} at {fmt(grid_best.params)}")

    held_maps, held_boxes = generate_scenes(cfg, range(50, 100))
    per_slice = evaluate_slices(detect_all(held_maps, best.detector_params()), held_boxes, held_maps.keys())
    rep = report(aggregate(per_slice.values())).to_dict()
    print(f"held-out (50 scenes): tp={rep['tp']} fp={rep['fp']} fn={rep['fn']} "
          f"ppv={rep['ppv']}% se={rep['se']}% dice={rep['dice']}%")


if __name__ == "__main__":
    main()
