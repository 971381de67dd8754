"""Zero-mean Gaussian loss-field prior with exponential spatial covariance."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import pdist, squareform

from .geometry import PixelGrid

log = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 2 * 1024**3  # bytes for one dense M x M float64 matrix
JITTER = 1e-10


class MemoryBudgetError(RuntimeError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


def check_dense_budget(n: int, budget: int | None, what: str) -> None:
    need = 8 * n * n
    if budget is not None and need > budget:
        raise MemoryBudgetError(
            f"{what}: dense {n}x{n} matrix needs {need / 1024**2:.0f} MiB, "
            f"budget is {budget / 1024**2:.0f} MiB (coarsen the pixel width or raise the budget)"
        )


def cholesky(a: np.ndarray, scale: float, what: str = "matrix") -> tuple[tuple[np.ndarray, bool], bool]:
    """Lower Cholesky factor for ``cho_solve``; retries once with diagonal jitter.

    Returns ``(factor, jittered)``.
    """
    try:
        return la.cho_factor(a, lower=True, check_finite=False), False
    except la.LinAlgError:
        pass
    eps = JITTER * scale
    log.warning("cholesky of %s failed; retrying with %.3g added to the diagonal", what, eps)
    try:
        return la.cho_factor(a + eps * np.eye(a.shape[0]), lower=True, check_finite=False), True
    except la.LinAlgError as exc:
        raise FactorizationError(f"cholesky of {what} failed even with jitter {eps:.3g}") from exc


@dataclass(frozen=True)
class FieldPrior:
    sigma_x_sq: float  # shadowing variance, dB^2
    delta: float  # space constant, m
    grid: PixelGrid

    def __post_init__(self) -> None:
        if not self.sigma_x_sq > 0:
            raise ValueError(f"sigma_x_sq must be positive, got {self.sigma_x_sq}")
        if not self.delta > 0:
            raise ValueError(f"space constant must be positive, got {self.delta}")

    @property
    def scale(self) -> float:
        """Pixel variance ``sigma_x_sq / delta`` (the kernel's value at zero distance)."""
        return self.sigma_x_sq / self.delta


class CovarianceMatrix:
    """Dense ``C_p`` with a lazily computed, cached lower Cholesky factor."""

    def __init__(self, matrix: np.ndarray, scale: float):
        self.matrix = matrix
        self.scale = scale
        self.jittered = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def factor(self) -> tuple[np.ndarray, bool]:
        fac, self.jittered = cholesky(self.matrix, self.scale, "prior covariance")
        return fac

    @property
    def lower(self) -> np.ndarray:
        """Explicit lower-triangular factor ``L`` with ``L @ L.T == C_p``."""
        return np.tril(self.factor[0])

    def solve(self, v: np.ndarray) -> np.ndarray:
        return la.cho_solve(self.factor, v, check_finite=False)

    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.size))
        return 0.5 * (inv + inv.T)


def build_covariance(prior: FieldPrior, memory_budget: int | None = DEFAULT_MEMORY_BUDGET) -> CovarianceMatrix:
    """``C_p[m, n] = (sigma_x_sq / delta) * exp(-d_mn / delta)`` over pixel centers."""
    M = prior.grid.n_pixels
    check_dense_budget(M, memory_budget, "prior covariance")
    scale = prior.scale
    if M == 1:
        return CovarianceMatrix(np.full((1, 1), scale), scale)
    # squareform mirrors the condensed upper triangle, so the result is exactly symmetric.
    cond = pdist(prior.grid.centers())
    np.multiply(cond, -1.0 / prior.delta, out=cond)
    np.exp(cond, out=cond)
    cond *= scale
    mat = squareform(cond, checks=False)
    np.fill_diagonal(mat, scale)
    return CovarianceMatrix(mat, scale)


def covariance_apply_inverse(cov: CovarianceMatrix, v: np.ndarray) -> np.ndarray:
    """Solve ``C_p x = v`` with the cached factor."""
    return cov.solve(np.asarray(v, dtype=float))


def sample_field(
    prior: FieldPrior, seed: int | None, size: int | None = None, cov: CovarianceMatrix | None = None
) -> np.ndarray:
    """Draw loss fields ``L @ u`` with ``u ~ N(0, I)``.

    Returns shape ``(M,)`` or ``(size, M)`` when ``size`` is given.
    """
    cov = cov if cov is not None else build_covariance(prior)
    rng = np.random.default_rng(seed)
    M = prior.grid.n_pixels
    L = cov.lower
    if size is None:
        return L @ rng.standard_normal(M)
    return rng.standard_normal((size, M)) @ L.T
