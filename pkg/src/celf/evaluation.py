"""Variance-reduction metrics, cross-validated grid search and noise-floor analysis."""

from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import MeasurementRecord
from .estimator import CelfModel, Hyperparameters, predict_shadowing, train
from .geometry import Link, grid_from_links, link_distances
from .pathloss import HataParams, LogDistanceModel, fading_losses, fit_log_distance, hata_path_loss

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    n: int
    fading_var: float  # mean square of z_T, dB^2
    error_var: float  # MSE after subtracting predicted shadowing, dB^2
    residuals: np.ndarray = field(repr=False)
    out_of_coverage: int = 0
    label: str = "celf"

    @property
    def reduction(self) -> float:
        """Percent decrease of fading variance."""
        if self.fading_var == 0:
            return 0.0
        return (self.fading_var - self.error_var) / self.fading_var * 100.0

    def row(self) -> dict[str, object]:
        return {
            "method": self.label,
            "n": self.n,
            "fading_var_db2": self.fading_var,
            "error_var_db2": self.error_var,
            "variance_reduction_pct": self.reduction,
            "out_of_coverage": self.out_of_coverage,
        }

    def text(self) -> str:
        return (
            f"{self.label}: N={self.n}  fading variance {self.fading_var:.4f} dB^2  "
            f"error variance {self.error_var:.4f} dB^2  reduction {self.reduction:.3f}%"
            + (f"  ({self.out_of_coverage} links out of coverage)" if self.out_of_coverage else "")
        )


def reports_csv(reports: Iterable[EvalReport]) -> str:
    reports = list(reports)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(reports[0].row()), lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    return buf.getvalue()


def mean_square(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ x / x.size)


def evaluate(model: CelfModel, test_links: Sequence[Link], label: str = "celf") -> EvalReport:
    """Fading variance before and after subtracting the predicted shadowing.

    Both variances are mean squares about zero so the null field scores exactly 0%.
    """
    if not test_links:
        raise ValueError("test set is empty")
    z = fading_losses(model.pathloss, test_links)
    pred = predict_shadowing(model, test_links)
    resid = z - pred.shadowing
    return EvalReport(len(test_links), mean_square(z), mean_square(resid), resid, pred.out_of_coverage, label)


def evaluate_baseline_hata(
    params: HataParams,
    test_links: Sequence[Link],
    pathloss: LogDistanceModel,
    label: str = "okumura_hata",
) -> EvalReport:
    """Debiased Okumura-Hata error against the log-distance fading variance.

    The transmit power is unknown to Hata, so only the deviation of
    ``-hata_loss - rss`` from its own test-set mean counts as error.
    """
    if not test_links:
        raise ValueError("test set is empty")
    rss = np.array([l.rss for l in test_links])
    d_km = link_distances(test_links) / 1000.0
    resid = -np.asarray(hata_path_loss(params, d_km)) - rss
    resid = resid - resid.mean()
    z = fading_losses(pathloss, test_links)
    return EvalReport(len(test_links), mean_square(z), mean_square(resid), resid, 0, label)


def split_train_test(links: Sequence, ratio: float = 0.7, seed: int | None = 0) -> tuple[list, list]:
    """Independent Bernoulli(ratio) assignment of each item to the training side."""
    if not links:
        raise ValueError("nothing to split")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    to_train = np.random.default_rng(seed).random(len(links)) < ratio
    train_set = [l for l, t in zip(links, to_train) if t]
    test_set = [l for l, t in zip(links, to_train) if not t]
    return train_set, test_set


HYPER_NAMES = tuple(f.name for f in fields(Hyperparameters))


@dataclass
class GridSearchSpec:
    candidates: Mapping[str, Sequence[float]]
    folds: int = 5
    seed: int = 0
    max_combinations: int = 10_000

    def __post_init__(self) -> None:
        if self.folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.folds}")
        unknown = set(self.candidates) - set(HYPER_NAMES)
        missing = set(HYPER_NAMES) - set(self.candidates)
        if unknown:
            raise ValueError(f"unknown hyperparameters {sorted(unknown)}")
        if missing:
            raise ValueError(f"no candidates for {sorted(missing)}")
        for k, v in self.candidates.items():
            if len(v) == 0:
                raise ValueError(f"empty candidate list for {k}")

    def combinations(self) -> list[Hyperparameters]:
        lists = [self.candidates[n] for n in HYPER_NAMES]
        n = int(np.prod([len(v) for v in lists]))
        if n > self.max_combinations:
            raise ValueError(f"grid has {n} combinations, budget is {self.max_combinations}")
        return [Hyperparameters(*map(float, combo)) for combo in itertools.product(*lists)]


@dataclass
class CVRow:
    hyper: Hyperparameters
    fold: int | str  # fold index, or "mean"
    n_train: int
    n_test: int
    reduction: float
    mse: float

    def as_dict(self) -> dict[str, object]:
        d = {n: getattr(self.hyper, n) for n in HYPER_NAMES}
        d.update(fold=self.fold, n_train=self.n_train, n_test=self.n_test, variance_reduction_pct=self.reduction, mse_db2=self.mse)
        return d


def fold_assignment(n: int, k: int, seed: int | None) -> np.ndarray:
    """Balanced random fold labels in ``0..k-1``."""
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % k
    return labels


def _run_fold(links, labels, fold, hyper, ref_distance, margin, solver, grid):
    tr_idx = np.flatnonzero(labels != fold)
    te_idx = np.flatnonzero(labels == fold)
    assert np.intersect1d(tr_idx, te_idx).size == 0
    assert tr_idx.size + te_idx.size == len(links)
    tr = [links[i] for i in tr_idx]
    te = [links[i] for i in te_idx]
    pl = fit_log_distance(tr, ref_distance)
    model = train(tr, hyper, pl, grid, solver=solver)
    rep = evaluate(model, te)
    return CVRow(hyper, fold, len(tr), len(te), rep.reduction, rep.error_var)


def cross_validate(
    train_links: Sequence[Link],
    spec: GridSearchSpec,
    ref_distance: float = 1.0,
    margin: float = 0.0,
    solver: str = "auto",
    n_jobs: int = 1,
) -> tuple[Hyperparameters, list[CVRow]]:
    """k-fold grid search maximizing mean held-out variance reduction.

    Path-loss constants are refit on each fold's training part. The pixel grid
    only depends on link positions, so one grid per pixel width is built from
    all of ``train_links``. Ties prefer larger alpha, then larger pixel width.
    """
    combos = spec.combinations()
    if len(train_links) < 10 * spec.folds:
        raise ValueError(f"need at least {10 * spec.folds} links for {spec.folds}-fold CV, got {len(train_links)}")
    labels = fold_assignment(len(train_links), spec.folds, spec.seed)
    grids = {w: grid_from_links(train_links, w, margin) for w in {h.pixel_width for h in combos}}
    jobs = [(h, f) for h in combos for f in range(spec.folds)]

    def run(job):
        h, f = job
        return _run_fold(train_links, labels, f, h, ref_distance, margin, solver, grids[h.pixel_width])

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            fold_rows = list(pool.map(run, jobs))
    else:
        fold_rows = [run(j) for j in jobs]

    table: list[CVRow] = []
    best_key, best = None, None
    for i, h in enumerate(combos):
        rows = fold_rows[i * spec.folds : (i + 1) * spec.folds]
        table.extend(rows)
        agg = CVRow(
            h,
            "mean",
            int(np.mean([r.n_train for r in rows])),
            int(np.mean([r.n_test for r in rows])),
            float(np.mean([r.reduction for r in rows])),
            float(np.mean([r.mse for r in rows])),
        )
        table.append(agg)
        key = (agg.reduction, h.alpha, h.pixel_width)
        if best_key is None or key > best_key:
            best_key, best = key, h
    return best, table


def cv_table_csv(table: Sequence[CVRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(table[0].as_dict()), lineterminator="\n")
    writer.writeheader()
    for r in table:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.as_dict().items()})
    return buf.getvalue()


@dataclass(frozen=True)
class VarianceBound:
    stationary: float  # dB^2
    sub_wavelength: float  # dB^2
    fading_var: float  # dB^2, reference the bound is applied against

    @property
    def total(self) -> float:
        return self.stationary + self.sub_wavelength

    @property
    def max_reduction(self) -> float:
        return (self.fading_var - self.total) / self.fading_var * 100.0


def _pooled_within(residuals: np.ndarray, keys: list) -> float:
    groups: dict[object, list[float]] = {}
    for k, r in zip(keys, residuals):
        groups.setdefault(k, []).append(r)
    ss, dof = 0.0, 0
    for vals in groups.values():
        v = np.asarray(vals)
        ss += float(((v - v.mean()) ** 2).sum())
        dof += v.size - 1
    if dof <= 0:
        raise ValueError("need repeated measurements of at least one link")
    return ss / dof


def grouped_variance_bound(
    records: Sequence[MeasurementRecord],
    pathloss: LogDistanceModel,
    fading_var: float | None = None,
) -> VarianceBound:
    """Noise floor from stationary and sub-wavelength measurement groups.

    Each group's fading losses (about the log-distance mean) are pooled within
    repeated measurements of the same link, keyed by ``link_id`` or, failing
    that, by the exact endpoint coordinates. ``fading_var`` defaults to the
    mean-square fading loss of all ``records``.
    """
    comps = {}
    for tag in ("stationary", "sub_wavelength"):
        recs = [r for r in records if r.group_tag == tag]
        if not recs:
            raise ValueError(f"dataset has no {tag!r} rows; the variance bound is unavailable")
        z = fading_losses(pathloss, [r.to_link() for r in recs])
        keys = [r.link_id if r.link_id else (r.tx_x, r.tx_y, r.rx_x, r.rx_y) for r in recs]
        if tag == "sub_wavelength":
            # A sub-wavelength cluster moves the endpoints, so a missing id means one cluster.
            keys = [r.link_id or "_" for r in recs]
        comps[tag] = _pooled_within(z, keys)
    if fading_var is None:
        fading_var = mean_square(fading_losses(pathloss, [r.to_link() for r in records]))
    return VarianceBound(comps["stationary"], comps["sub_wavelength"], float(fading_var))


def timing_report(phases: Mapping[str, float]) -> str:
    """CSV of wall-clock seconds per phase."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "seconds"])
    for name, secs in phases.items():
        w.writerow([name, f"{secs:.6f}"])
    return buf.getvalue()
