"""Command-line interface: ``celf {fit,train,predict,evaluate,tune,synth,export-field}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetError, get_preset, generate_synthetic, load_csv, parse_scenario, scenario_presets, write_links
from .estimator import Hyperparameters, predict_shadowing, select_solver, train
from .evaluation import (
    GridSearchSpec,
    cross_validate,
    cv_table_csv,
    evaluate,
    evaluate_baseline_hata,
    mean_square,
    reports_csv,
    split_train_test,
    timing_report,
)
from .geometry import grid_from_links
from .io import ModelFormatError, export_field, load_model, parse_kv, save_model, write_field_csv
from .pathloss import HataParams, fading_losses, fit_log_distance
from .prior import MemoryBudgetError

log = logging.getLogger("celf")

HYPER_KEYS = tuple(f.name for f in fields(Hyperparameters))


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int = 1):
        super().__init__(message)
        self.stage = stage
        self.code = code


@dataclass
class Config:
    preset: str | None = None
    pixel_width: float | None = None
    shadow_ratio: float | None = None
    space_constant: float | None = None
    excess_length: float | None = None
    alpha: float | None = None
    margin: float = 0.0
    solver: str = "auto"
    seed: int = 0
    split_ratio: float = 0.7
    ref_distance: float = 1.0
    folds: int = 5
    n_jobs: int = 1
    memory_budget_mb: float = 2048.0
    hata_frequency: float | None = None
    hata_tx_height: float = 30.0
    hata_rx_height: float = 1.5
    hata_environment: str = "urban_medium"

    @classmethod
    def from_text(cls, text: str) -> "Config":
        kv = parse_kv(text)
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(kv) - set(types))
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        values = {}
        for k, v in kv.items():
            t = types[k]
            if "str" in t:
                values[k] = v
            elif t == "int":
                values[k] = int(v)
            else:
                values[k] = float(v)
        return cls(**values).validated()

    def validated(self) -> "Config":
        if self.preset is not None and self.preset not in scenario_presets():
            raise ValueError(f"unknown preset {self.preset!r}; available: {', '.join(sorted(scenario_presets()))}")
        select_solver(1, 1, self.solver)
        if not 0 < self.split_ratio <= 1:
            raise ValueError(f"split_ratio must be in (0, 1], got {self.split_ratio}")
        if self.margin < 0 or self.ref_distance <= 0 or self.folds < 2:
            raise ValueError("margin must be >= 0, ref_distance > 0 and folds >= 2")
        if self.hata_frequency is not None:
            self.hata()
        return self

    def hyper(self) -> Hyperparameters:
        base = get_preset(self.preset).hyper if self.preset else {}
        vals = {k: getattr(self, k) if getattr(self, k) is not None else base.get(k) for k in HYPER_KEYS}
        missing = [k for k, v in vals.items() if v is None]
        if missing:
            raise ValueError(f"hyperparameters not set: {missing} (give them in --config or set preset=)")
        return Hyperparameters(**vals)

    def hata(self) -> HataParams:
        if self.hata_frequency is None:
            raise ValueError("hata_frequency is not set in the config")
        return HataParams(self.hata_frequency, self.hata_tx_height, self.hata_rx_height, self.hata_environment)

    @property
    def memory_budget(self) -> int:
        return int(self.memory_budget_mb * 1024**2)


def _config(args) -> Config:
    try:
        cfg = Config.from_text(Path(args.config).read_text(encoding="utf-8")) if args.config else Config()
        over = {}
        if getattr(args, "seed", None) is not None:
            over["seed"] = args.seed
        if getattr(args, "solver", None) is not None:
            over["solver"] = args.solver
        if getattr(args, "ratio", None) is not None:
            over["split_ratio"] = args.ratio
        return replace(cfg, **over).validated()
    except (OSError, ValueError) as exc:
        raise StageError("config", str(exc), 2) from exc


def _links(path: str, require_rss: bool = True):
    try:
        loaded = load_csv(path, require_rss=require_rss)
    except (OSError, DatasetError) as exc:
        raise StageError("dataset", str(exc), 2) from exc
    if loaded.rejected:
        log.warning("%s: %s", path, loaded.summary())
    if not loaded.records:
        raise StageError("dataset", f"{path}: no valid rows ({loaded.summary()})", 2)
    return loaded


def _model(path: str):
    try:
        return load_model(path)
    except (OSError, ModelFormatError, ValueError) as exc:
        raise StageError("model", f"{path}: {exc}", 2) from exc


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StageError("output", str(exc), 2) from exc


def _split(links, cfg: Config):
    if cfg.split_ratio >= 1:
        return list(links), []
    tr, te = split_train_test(links, cfg.split_ratio, cfg.seed)
    if len(tr) < 2:
        raise StageError("split", f"only {len(tr)} training links after the split")
    return tr, te


def cmd_fit(args) -> int:
    cfg = _config(args)
    links = _links(args.dataset).links()
    try:
        pl = fit_log_distance(links, cfg.ref_distance)
    except ValueError as exc:
        raise StageError("fit", str(exc)) from exc
    z = fading_losses(pl, links)
    lines = [
        f"links={len(links)}",
        f"exponent={pl.exponent!r}",
        f"intercept_db={pl.intercept!r}",
        f"ref_distance_m={pl.ref_distance!r}",
        f"fading_mean_square_db2={mean_square(z)!r}",
        f"fading_variance_db2={float(np.var(z))!r}",
    ]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        _write(Path(args.out), text)
    return 0


def _train_model(tr, cfg: Config, hyper: Hyperparameters):
    try:
        pl = fit_log_distance(tr, cfg.ref_distance)
        grid = grid_from_links(tr, hyper.pixel_width, cfg.margin)
        return train(tr, hyper, pl, grid, solver=cfg.solver, memory_budget=cfg.memory_budget)
    except MemoryBudgetError as exc:
        raise StageError("train", str(exc)) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError("train", str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _config(args)
    try:
        hyper = cfg.hyper()
    except ValueError as exc:
        raise StageError("config", str(exc), 2) from exc
    links = _links(args.dataset).links()
    tr, te = _split(links, cfg)
    model = _train_model(tr, cfg, hyper)
    out = Path(args.out)
    try:
        save_model(model, out)
    except OSError as exc:
        raise StageError("output", str(exc), 2) from exc
    try:
        if args.train_out:
            write_links(tr, args.train_out)
        if args.test_out and te:
            write_links(te, args.test_out)
    except OSError as exc:
        raise StageError("output", str(exc), 2) from exc
    if args.timing:
        _write(Path(args.timing), timing_report(model.report.timings))
    rep = evaluate(model, tr, label="train")
    print(f"train_links={len(tr)} test_links={len(te)} pixels={model.n_pixels}")
    print(f"solver={model.solver_path} relative_residual={model.report.relative_residual:.3e} jitter={model.report.jittered}")
    print(f"pathloss exponent={model.pathloss.exponent:.6f} intercept={model.pathloss.intercept:.6f} dB")
    print(rep.text())
    if te:
        print(evaluate(model, te, label="test").text())
    print(f"model written to {out}")
    return 0


def cmd_predict(args) -> int:
    model = _model(args.model)
    links = _links(args.links, require_rss=False).links()
    pred = predict_shadowing(model, links)
    mean = model.pathloss.mean_power(np.array([l.distance for l in links]))
    power = mean - pred.shadowing
    buf = ["tx_x,tx_y,rx_x,rx_y,shadowing_db,predicted_power_dbm,out_of_coverage"]
    for l, s, p, c in zip(links, pred.shadowing.tolist(), power.tolist(), pred.covered.tolist()):
        buf.append(f"{l.tx.x!r},{l.tx.y!r},{l.rx.x!r},{l.rx.y!r},{s!r},{p!r},{int(not c)}")
    text = "\n".join(buf) + "\n"
    if args.out:
        _write(Path(args.out), text)
        print(f"{len(links)} predictions ({pred.out_of_coverage} out of coverage) written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_evaluate(args) -> int:
    model = _model(args.model)
    links = _links(args.dataset).links()
    reports = [evaluate(model, links)]
    if args.hata:
        cfg = _config(args)
        try:
            reports.append(evaluate_baseline_hata(cfg.hata(), links, model.pathloss))
        except ValueError as exc:
            raise StageError("hata", str(exc), 2) from exc
    text = "".join(r.text() + "\n" for r in reports)
    print(text, end="")
    if args.out:
        _write(Path(args.out + ".csv"), reports_csv(reports))
        _write(Path(args.out + ".txt"), text)
    return 0


def _grid_spec(path: str, cfg: Config) -> GridSearchSpec:
    try:
        kv = parse_kv(Path(path).read_text(encoding="utf-8"))
        unknown = sorted(set(kv) - set(HYPER_KEYS) - {"folds", "max_combinations"})
        if unknown:
            raise ValueError(f"unknown grid keys {unknown}")
        base = {} if all(k in kv for k in HYPER_KEYS) else asdict(cfg.hyper())
        cands = {}
        for k in HYPER_KEYS:
            if k in kv:
                cands[k] = [float(v) for v in kv[k].split(",") if v.strip()]
            else:
                cands[k] = [base[k]]
        return GridSearchSpec(
            cands,
            folds=int(kv.get("folds", cfg.folds)),
            seed=cfg.seed,
            max_combinations=int(kv.get("max_combinations", 10_000)),
        )
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("grid", str(exc), 2) from exc


def cmd_tune(args) -> int:
    cfg = _config(args)
    spec = _grid_spec(args.grid, cfg)
    links = _links(args.dataset).links()
    tr, _ = _split(links, cfg)
    try:
        best, table = cross_validate(tr, spec, cfg.ref_distance, cfg.margin, cfg.solver, cfg.n_jobs)
    except ValueError as exc:
        raise StageError("tune", str(exc)) from exc
    prefix = args.out
    _write(Path(prefix + "_cv.csv"), cv_table_csv(table))
    best_cfg = "".join(f"{k}={getattr(best, k)!r}\n" for k in HYPER_KEYS)
    _write(Path(prefix + "_best.cfg"), best_cfg)
    means = [r for r in table if r.fold == "mean"]
    print(f"{len(means)} combinations x {spec.folds} folds on {len(tr)} training links")
    best_row = next(r for r in means if r.hyper == best)
    print(f"best: {', '.join(f'{k}={getattr(best, k):g}' for k in HYPER_KEYS)}  cv reduction {best_row.reduction:.3f}%")
    if args.retrain:
        model = _train_model(tr, cfg, best)
        try:
            save_model(model, prefix + ".celf")
        except OSError as exc:
            raise StageError("output", str(exc), 2) from exc
        print(f"retrained model written to {prefix}.celf")
    return 0


def cmd_synth(args) -> int:
    try:
        if args.scenario:
            scenario = parse_scenario(Path(args.scenario).read_text(encoding="utf-8"))
            hyper = get_preset(args.preset).hyper if args.preset else None
        else:
            preset = get_preset(args.preset or "indoor-like")
            scenario, hyper = preset.scenario, preset.hyper
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise StageError("scenario", str(exc), 2) from exc
    links, truth = generate_synthetic(scenario)
    prefix = args.out
    try:
        write_links(links, prefix + ".csv")
        write_field_csv(truth.grid, truth.field, prefix + "_truth_field.csv")
        with open(prefix + "_truth_links.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "shadowing_db", "noise_db"])
            for l, s, n in zip(links, truth.shadowing.tolist(), truth.noise.tolist()):
                w.writerow([l.id, repr(s), repr(n)])
    except OSError as exc:
        raise StageError("output", str(exc), 2) from exc
    scen_lines = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(scenario).items()]
    _write(Path(prefix + "_scenario.cfg"), "\n".join(scen_lines) + "\n")
    if hyper:
        _write(Path(prefix + "_hyper.cfg"), "".join(f"{k}={v!r}\n" for k, v in hyper.items()))
    print(f"{len(links)} links on a {truth.grid.n_cols}x{truth.grid.n_rows} grid written to {prefix}.csv")
    return 0


def cmd_export_field(args) -> int:
    model = _model(args.model)
    try:
        paths = export_field(model, args.out)
    except OSError as exc:
        raise StageError("output", str(exc), 2) from exc
    f = model.field
    print(f"field range [{f.min():.4f}, {f.max():.4f}] dB; wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="celf", description="Site-trained loss-field channel estimation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, solver=False, ratio=False):
        p.add_argument("--config", help="key=value config file")
        if seed:
            p.add_argument("--seed", type=int)
        if solver:
            p.add_argument("--solver", choices=["auto", "map", "mne"])
        if ratio:
            p.add_argument("--ratio", type=float, help="training fraction of the random split (1 = no split)")

    p = sub.add_parser("fit", help="fit the log-distance path-loss model")
    p.add_argument("dataset")
    common(p, seed=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="split, fit path loss and learn the loss field")
    p.add_argument("dataset")
    common(p, solver=True, ratio=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--train-out", help="write the training split as CSV")
    p.add_argument("--test-out", help="write the held-out split as CSV")
    p.add_argument("--timing", help="write per-phase wall-clock CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict shadowing and received power for links")
    p.add_argument("model")
    p.add_argument("links", help="CSV with tx_x,tx_y,rx_x,rx_y (rss_dbm optional)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="variance reduction on a labelled test set")
    p.add_argument("model")
    p.add_argument("dataset")
    common(p, seed=False)
    p.add_argument("--hata", action="store_true", help="add the debiased Okumura-Hata baseline")
    p.add_argument("--out", help="prefix for <out>.csv and <out>.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="k-fold cross-validated hyperparameter grid search")
    p.add_argument("dataset")
    p.add_argument("--grid", required=True, help="key=v1,v2,... candidate file")
    common(p, solver=True, ratio=True)
    p.add_argument("--out", required=True, help="prefix for <out>_cv.csv and <out>_best.cfg")
    p.add_argument("--retrain", action="store_true", help="also train <out>.celf with the winner")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("synth", help="generate a synthetic measurement set with ground truth")
    p.add_argument("--preset", choices=sorted(scenario_presets()))
    p.add_argument("--scenario", help="key=value scenario file (may contain preset=<name>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-field", help="write the loss field as CSV + PGM image")
    p.add_argument("model")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_export_field)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
