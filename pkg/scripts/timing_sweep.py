"""Wall-clock per training phase as the pixel count grows.

Coarsens or refines the indoor-like grid and reports the phase timings of one
training run per pixel width, plus prediction time on the held-out links.

    python3 scripts/timing_sweep.py --widths 1.0 0.7 0.5 0.35
"""

import argparse
import time
from dataclasses import replace

from celf.dataset import generate_synthetic, get_preset
from celf.estimator import Hyperparameters, predict_shadowing, train
from celf.evaluation import split_train_test
from celf.geometry import grid_from_links
from celf.pathloss import fit_log_distance

PHASES = ("weights", "covariance", "prior_inverse", "normal_equations", "factorization", "solve")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--widths", type=float, nargs="+", default=[1.0, 0.7, 0.5, 0.35])
    ap.add_argument("--solver", default="auto", choices=["auto", "map", "mne"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    preset = get_preset("indoor-like")
    links, _ = generate_synthetic(replace(preset.scenario, seed=args.seed))
    tr, te = split_train_test(links, 0.7, args.seed)
    pl = fit_log_distance(tr)
    print(",".join(["pixel_width", "pixels", "links", "solver", *PHASES, "predict"]))
    for w in args.widths:
        hyper = Hyperparameters(**{**preset.hyper, "pixel_width": w})
        grid = grid_from_links(tr, w)
        model = train(tr, hyper, pl, grid, solver=args.solver)
        t0 = time.perf_counter()
        predict_shadowing(model, te)
        t_pred = time.perf_counter() - t0
        t = model.report.timings
        cells = [f"{t.get(p, 0.0):.4f}" for p in PHASES]
        print(",".join([f"{w:g}", str(grid.n_pixels), str(len(tr)), model.solver_path, *cells, f"{t_pred:.4f}"]), flush=True)


if __name__ == "__main__":
    main()
