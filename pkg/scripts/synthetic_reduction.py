"""Train/test variance reduction on synthetic presets across seeds.

    python3 scripts/synthetic_reduction.py --preset indoor-like --seeds 10
"""

import argparse
from dataclasses import replace

import numpy as np

from celf.dataset import generate_synthetic, get_preset
from celf.estimator import Hyperparameters, train
from celf.evaluation import evaluate, split_train_test
from celf.geometry import grid_from_links
from celf.pathloss import fit_log_distance


def run(preset_name: str, seed: int, alpha: float | None = None) -> tuple[float, float]:
    preset = get_preset(preset_name)
    hyper = dict(preset.hyper)
    if alpha is not None:
        hyper["alpha"] = alpha
    hyper = Hyperparameters(**hyper)
    links, _ = generate_synthetic(replace(preset.scenario, seed=seed))
    tr, te = split_train_test(links, 0.7, seed)
    model = train(tr, hyper, fit_log_distance(tr), grid_from_links(tr, hyper.pixel_width))
    return evaluate(model, tr).reduction, evaluate(model, te).reduction


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--preset", default="indoor-like")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--alpha", type=float, help="override the preset regularization")
    args = ap.parse_args(argv)
    rows = []
    print("seed,train_pct,test_pct")
    for s in range(args.seeds):
        tr, te = run(args.preset, s, args.alpha)
        rows.append((tr, te))
        print(f"{s},{tr:.3f},{te:.3f}", flush=True)
    arr = np.array(rows)
    print(f"mean,{arr[:, 0].mean():.3f},{arr[:, 1].mean():.3f}")
    print(f"sd,{arr[:, 0].std(ddof=1):.3f},{arr[:, 1].std(ddof=1):.3f}" if len(rows) > 1 else "")


if __name__ == "__main__":
    main()
