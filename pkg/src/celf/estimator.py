"""Loss-field learning by regularized Bayesian linear regression.

Two algebraically identical estimators are provided::

    map_cholesky:  p = (W'W + a C^-1)^-1 W'z        (M x M system)
    minimum_norm:  p = C W' (W C W' + a I)^-1 z     (L x L system)

``train`` picks the cheaper one from the problem shape.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .geometry import Link, PixelGrid, WeightMatrix, build_weight_matrix
from .pathloss import LogDistanceModel, fading_losses
from .prior import (
    DEFAULT_MEMORY_BUDGET,
    CovarianceMatrix,
    FieldPrior,
    build_covariance,
    check_dense_budget,
    cholesky,
)

log = logging.getLogger(__name__)

MAP_CHOLESKY = "map_cholesky"
MINIMUM_NORM = "minimum_norm"
SOLVER_ALIASES = {"auto": "auto", "map": MAP_CHOLESKY, MAP_CHOLESKY: MAP_CHOLESKY, "mne": MINIMUM_NORM, MINIMUM_NORM: MINIMUM_NORM}


@dataclass(frozen=True)
class Hyperparameters:
    pixel_width: float
    shadow_ratio: float  # sigma_x^2 / sigma_z^2
    space_constant: float
    excess_length: float
    alpha: float

    def __post_init__(self) -> None:
        for name in ("pixel_width", "shadow_ratio", "space_constant", "excess_length", "alpha"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.shadow_ratio > 1:
            raise ValueError(f"shadow_ratio must be in (0, 1], got {self.shadow_ratio}")


@dataclass
class SolveReport:
    path: str
    residual_norm: float = 0.0
    relative_residual: float = 0.0
    jittered: bool = False
    degenerate: bool = False
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def factorization_time(self) -> float:
        return self.timings.get("factorization", 0.0)


def _as_cov(C_p: CovarianceMatrix | np.ndarray) -> CovarianceMatrix:
    if isinstance(C_p, CovarianceMatrix):
        return C_p
    C_p = np.asarray(C_p, dtype=float)
    return CovarianceMatrix(C_p, float(np.max(np.diag(C_p))))


def _as_sparse(W) -> sp.csr_array:
    if isinstance(W, WeightMatrix):
        return W.matrix
    if sp.issparse(W):
        return sp.csr_array(W)
    return sp.csr_array(np.atleast_2d(np.asarray(W, dtype=float)))


DENSE_THRESHOLD = 0.02


def _left_multiply(W: sp.csr_array, B: np.ndarray) -> np.ndarray:
    """``W @ B`` for dense ``B``; BLAS beats scipy's sparse kernel once W fills up."""
    L, M = W.shape
    if L * M and W.nnz / (L * M) > DENSE_THRESHOLD:
        return W.toarray() @ B
    return np.asarray(W @ B)


class _Clock:
    """Accumulates wall-clock seconds per named phase into ``sink``."""

    def __init__(self, sink: dict[str, float]):
        self.sink = sink

    @contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.sink[name] = self.sink.get(name, 0.0) + time.perf_counter() - t0


def _solve_map(W, z, C_p, alpha: float) -> tuple[np.ndarray, SolveReport]:
    W = _as_sparse(W)
    cov = _as_cov(C_p)
    z = np.asarray(z, dtype=float)
    report = SolveReport(MAP_CHOLESKY)
    clock = _Clock(report.timings)
    with clock("prior_inverse"):
        A = alpha * cov.inverse()
    with clock("normal_equations"):
        A += (W.T @ W).toarray()
        b = W.T @ z
    with clock("factorization"):
        fac, jit = cholesky(A, float(np.max(np.diag(A))), "W'W + alpha C^-1")
    with clock("solve"):
        p = la.cho_solve(fac, b, check_finite=False)
    report.jittered = jit or cov.jittered
    report.residual_norm = float(np.linalg.norm(A @ p - b))
    bn = float(np.linalg.norm(b))
    report.relative_residual = report.residual_norm / bn if bn > 0 else report.residual_norm
    return p, report


def _solve_mne(W, z, C_p, alpha: float) -> tuple[np.ndarray, SolveReport]:
    W = _as_sparse(W)
    cov = _as_cov(C_p)
    z = np.asarray(z, dtype=float)
    report = SolveReport(MINIMUM_NORM)
    clock = _Clock(report.timings)
    with clock("normal_equations"):
        WC = _left_multiply(W, cov.matrix)  # (L, M) == (C W')'
        K = _left_multiply(W, WC.T)
        K = 0.5 * (K + K.T)
        K[np.diag_indices_from(K)] += alpha
    with clock("factorization"):
        fac, jit = cholesky(K, float(np.max(np.diag(K))), "W C W' + alpha I")
    with clock("solve"):
        y = la.cho_solve(fac, z, check_finite=False)
        p = WC.T @ y
    report.jittered = jit
    report.residual_norm = float(np.linalg.norm(K @ y - z))
    zn = float(np.linalg.norm(z))
    report.relative_residual = report.residual_norm / zn if zn > 0 else report.residual_norm
    return p, report


def solve_map_cholesky(W, z, C_p, alpha: float) -> np.ndarray:
    """MAP field via Cholesky of the M x M matrix ``W'W + alpha C_p^-1``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return _solve_map(W, z, C_p, alpha)[0]


def solve_minimum_norm(W, z, C_p, alpha: float) -> np.ndarray:
    """Minimum-norm form: Cholesky of the L x L matrix ``W C_p W' + alpha I``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return _solve_mne(W, z, C_p, alpha)[0]


def posterior_covariance(
    W, C_p, sigma_n_sq: float, memory_budget: int | None = DEFAULT_MEMORY_BUDGET
) -> np.ndarray:
    """``(W'W / sigma_n_sq + C_p^-1)^-1``, evaluated as ``C - C W' (W C W' + s I)^-1 W C``."""
    if not sigma_n_sq > 0:
        raise ValueError(f"sigma_n_sq must be positive, got {sigma_n_sq}")
    W = _as_sparse(W)
    cov = _as_cov(C_p)
    check_dense_budget(cov.size, memory_budget, "posterior covariance")
    C = cov.matrix
    if W.nnz == 0:
        return C.copy()
    WC = _left_multiply(W, C)
    K = _left_multiply(W, WC.T)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += sigma_n_sq
    fac, _ = cholesky(K, float(np.max(np.diag(K))), "W C W' + sigma_n^2 I")
    post = C - WC.T @ la.cho_solve(fac, WC, check_finite=False)
    return 0.5 * (post + post.T)


@dataclass
class CelfModel:
    pathloss: LogDistanceModel
    hyper: Hyperparameters
    grid: PixelGrid
    field: np.ndarray
    prior: FieldPrior
    solver_path: str
    n_links: int = 0
    residual_variance: float = float("nan")
    report: SolveReport | None = None

    def __post_init__(self) -> None:
        self.field = np.asarray(self.field, dtype=float)
        if self.field.shape != (self.grid.n_pixels,):
            raise ValueError(f"field has shape {self.field.shape}, grid has {self.grid.n_pixels} pixels")

    @property
    def n_pixels(self) -> int:
        return self.grid.n_pixels

    def weights(self, links: Sequence[Link]) -> WeightMatrix:
        return build_weight_matrix(links, self.grid, self.hyper.excess_length)


def select_solver(n_links: int, n_pixels: int, solver: str = "auto") -> str:
    try:
        solver = SOLVER_ALIASES[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from auto, map, mne") from None
    if solver != "auto":
        return solver
    return MINIMUM_NORM if n_links < n_pixels else MAP_CHOLESKY


def train(
    links: Sequence[Link],
    hyper: Hyperparameters,
    pathloss: LogDistanceModel,
    grid: PixelGrid,
    solver: str = "auto",
    memory_budget: int | None = DEFAULT_MEMORY_BUDGET,
) -> CelfModel:
    """Fit the loss field to the fading losses of ``links``.

    The prior shadowing variance is ``shadow_ratio * var(z)`` with ``z`` the
    training fading losses. A weight matrix with no nonzero entry leaves the
    field at the prior mean (zeros) and marks the report ``degenerate``.
    """
    if not links:
        raise ValueError("cannot train on an empty link list")
    timings: dict[str, float] = {}
    clock = _Clock(timings)
    z = fading_losses(pathloss, links)
    with clock("weights"):
        W = build_weight_matrix(links, grid, hyper.excess_length)
    var_z = float(np.var(z))
    sigma_x_sq = hyper.shadow_ratio * var_z if var_z > 0 else hyper.shadow_ratio
    prior = FieldPrior(sigma_x_sq, hyper.space_constant, grid)
    path = select_solver(len(links), grid.n_pixels, solver)
    L, M = W.shape
    if W.nnz == 0:
        log.warning("no link ellipse covers any pixel center; field left at prior mean")
        p = np.zeros(M)
        report = SolveReport(path, degenerate=True)
    else:
        if W.empty_rows.size:
            log.info("%d of %d training links cover no pixel center", W.empty_rows.size, L)
        with clock("covariance"):
            cov = build_covariance(prior, memory_budget)
        if path == MINIMUM_NORM:
            p, report = _solve_mne(W, z, cov, hyper.alpha)
        else:
            p, report = _solve_map(W, z, cov, hyper.alpha)
    report.timings = {**timings, **report.timings}
    resid = z - W.matrix @ p
    return CelfModel(
        pathloss=pathloss,
        hyper=hyper,
        grid=grid,
        field=p,
        prior=prior,
        solver_path=path,
        n_links=L,
        residual_variance=float(resid @ resid / L),
        report=report,
    )


@dataclass(frozen=True)
class ShadowingPrediction:
    shadowing: np.ndarray  # dB, W_T p
    covered: np.ndarray  # False where the link ellipse holds no pixel center

    @property
    def out_of_coverage(self) -> int:
        return int(np.count_nonzero(~self.covered))


def predict_shadowing(model: CelfModel, links: Sequence[Link]) -> ShadowingPrediction:
    W = model.weights(links)
    return ShadowingPrediction(W.matrix @ model.field, W.nnz_per_row > 0)


def predict_power(model: CelfModel, links: Sequence[Link]) -> np.ndarray:
    """Received power (dBm): log-distance mean minus predicted shadowing."""
    mean = np.array([model.pathloss.mean_power(l.distance) for l in links], dtype=float)
    return mean - predict_shadowing(model, links).shadowing
