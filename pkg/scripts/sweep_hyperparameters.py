"""One-at-a-time hyperparameter sweep on a synthetic preset.

Writes a long-format CSV (parameter, value, seed, split, variance_reduction_pct)
suitable for plotting reduction against each hyperparameter.

    python3 scripts/sweep_hyperparameters.py --preset indoor-like --seeds 4 --out sweep.csv
"""

import argparse
import csv
import sys
from dataclasses import replace

from celf.dataset import generate_synthetic, get_preset
from celf.estimator import Hyperparameters, train
from celf.evaluation import evaluate, split_train_test
from celf.geometry import grid_from_links
from celf.pathloss import fit_log_distance

DEFAULT_VALUES = {
    "indoor-like": {
        "space_constant": [0.5, 1, 2.5, 5, 10, 15],
        "excess_length": [0.05, 0.18, 0.5, 1, 2, 4],
        "alpha": [1, 10, 41, 100, 1000],
        "shadow_ratio": [0.1, 0.3, 0.5, 0.7, 0.9],
    },
    "outdoor-like": {
        "space_constant": [10, 35, 70, 140, 280],
        "excess_length": [25, 105, 200, 400],
        "alpha": [0.03, 0.3, 3, 30],
        "shadow_ratio": [0.2, 0.58, 0.9],
    },
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--preset", default="indoor-like", choices=sorted(DEFAULT_VALUES))
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--params", nargs="*", help="subset of hyperparameters to sweep")
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)

    preset = get_preset(args.preset)
    sweeps = DEFAULT_VALUES[args.preset]
    names = args.params or list(sweeps)
    data = []
    for s in range(args.seeds):
        links, _ = generate_synthetic(replace(preset.scenario, seed=s))
        tr, te = split_train_test(links, 0.7, s)
        grid = grid_from_links(tr, preset.hyper["pixel_width"])
        data.append((s, tr, te, fit_log_distance(tr), grid))

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["parameter", "value", "seed", "split", "variance_reduction_pct"])
    for name in names:
        for v in sweeps[name]:
            hyper = Hyperparameters(**{**preset.hyper, name: float(v)})
            for s, tr, te, pl, grid in data:
                model = train(tr, hyper, pl, grid)
                w.writerow([name, v, s, "train", f"{evaluate(model, tr).reduction:.4f}"])
                w.writerow([name, v, s, "test", f"{evaluate(model, te).reduction:.4f}"])
            fh.flush()
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
