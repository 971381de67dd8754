"""Planar site geometry: links, pixel grids and the ellipse weight model.

All coordinates are planar meters. Pixels are indexed row-major from the
lower-left corner of the grid, ``m = row * n_cols + col``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, slots=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")


def _dist(ax: float, ay: float, bx: float, by: float) -> float:
    # Same arithmetic as the vectorized path in _ellipse_support.
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


@dataclass(frozen=True, slots=True)
class Link:
    """A transmitter/receiver pair with its measured received power (dBm)."""

    tx: Point2D
    rx: Point2D
    rss: float
    id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rss", float(self.rss))
        if not math.isfinite(self.rss):
            raise ValueError(f"non-finite rss {self.rss!r}")
        if self.tx == self.rx:
            raise ValueError(f"degenerate link: tx == rx == ({self.tx.x}, {self.tx.y})")

    @classmethod
    def from_coords(
        cls, tx_x: float, tx_y: float, rx_x: float, rx_y: float, rss: float, id: str | None = None
    ) -> "Link":
        return cls(Point2D(float(tx_x), float(tx_y)), Point2D(float(rx_x), float(rx_y)), float(rss), id)

    @property
    def distance(self) -> float:
        return _dist(self.tx.x, self.tx.y, self.rx.x, self.rx.y)


def link_distance(link: Link) -> float:
    """Euclidean tx-rx distance in meters."""
    return link.distance


def link_distances(links: Sequence[Link]) -> np.ndarray:
    return np.array([link.distance for link in links], dtype=float)


def endpoints(links: Sequence[Link]) -> np.ndarray:
    """(L, 4) array of ``tx_x, tx_y, rx_x, rx_y``."""
    return np.array([(l.tx.x, l.tx.y, l.rx.x, l.rx.y) for l in links], dtype=float).reshape(-1, 4)


def _covering_count(span: float, width: float) -> int:
    q = span / width
    # 17.5 / 0.35 evaluates to 50.000000000000007; don't let that become 51.
    n = math.ceil(q - 1e-9 * max(1.0, q))
    return max(1, n)


@dataclass(frozen=True, slots=True)
class PixelGrid:
    origin: Point2D
    pixel_width: float
    n_cols: int
    n_rows: int

    def __post_init__(self) -> None:
        if not (self.pixel_width > 0 and math.isfinite(self.pixel_width)):
            raise ValueError(f"pixel_width must be positive, got {self.pixel_width}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise ValueError(f"grid must have at least one pixel, got {self.n_cols}x{self.n_rows}")

    @property
    def n_pixels(self) -> int:
        return self.n_cols * self.n_rows

    M = n_pixels

    @property
    def width(self) -> float:
        return self.n_cols * self.pixel_width

    @property
    def height(self) -> float:
        return self.n_rows * self.pixel_width

    def center(self, m: int) -> Point2D:
        row, col = divmod(m, self.n_cols)
        return Point2D(
            self.origin.x + (col + 0.5) * self.pixel_width,
            self.origin.y + (row + 0.5) * self.pixel_width,
        )

    def center_x(self, cols: np.ndarray | int) -> np.ndarray:
        return self.origin.x + (np.asarray(cols) + 0.5) * self.pixel_width

    def center_y(self, rows: np.ndarray | int) -> np.ndarray:
        return self.origin.y + (np.asarray(rows) + 0.5) * self.pixel_width

    def centers(self) -> np.ndarray:
        """(M, 2) pixel centers in row-major order."""
        rows, cols = np.divmod(np.arange(self.n_pixels), self.n_cols)
        return np.column_stack([self.center_x(cols), self.center_y(rows)])


def grid_from_links(links: Sequence[Link], pixel_width: float, margin: float = 0.0) -> PixelGrid:
    """Smallest grid covering the endpoint bounding box grown by ``margin`` on every side."""
    if not links:
        raise ValueError("cannot build a grid from an empty link list")
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if not (pixel_width > 0 and math.isfinite(pixel_width)):
        raise ValueError(f"pixel_width must be positive, got {pixel_width}")
    pts = endpoints(links)
    xs = np.concatenate([pts[:, 0], pts[:, 2]])
    ys = np.concatenate([pts[:, 1], pts[:, 3]])
    x0, y0 = float(xs.min()) - margin, float(ys.min()) - margin
    x1, y1 = float(xs.max()) + margin, float(ys.max()) + margin
    return PixelGrid(
        Point2D(x0, y0),
        float(pixel_width),
        _covering_count(x1 - x0, pixel_width),
        _covering_count(y1 - y0, pixel_width),
    )


def _ellipse_support(
    x1: float, y1: float, x2: float, y2: float, d: float, grid: PixelGrid, excess: float
) -> np.ndarray:
    """Sorted pixel indices whose center satisfies ``d1 + d2 < d + excess``."""
    a = 0.5 * (d + excess)
    b = math.sqrt(max(a * a - 0.25 * d * d, 0.0))
    cos_t, sin_t = (x2 - x1) / d, (y2 - y1) / d
    hx = math.sqrt((a * cos_t) ** 2 + (b * sin_t) ** 2)
    hy = math.sqrt((a * sin_t) ** 2 + (b * cos_t) ** 2)
    cx, cy = 0.5 * (x1 + x2), 0.5 * (y1 + y2)
    w = grid.pixel_width
    # Candidate box padded by a pixel; the exact test below decides membership.
    c_lo = max(0, math.floor((cx - hx - grid.origin.x) / w) - 1)
    c_hi = min(grid.n_cols - 1, math.ceil((cx + hx - grid.origin.x) / w) + 1)
    r_lo = max(0, math.floor((cy - hy - grid.origin.y) / w) - 1)
    r_hi = min(grid.n_rows - 1, math.ceil((cy + hy - grid.origin.y) / w) + 1)
    if c_lo > c_hi or r_lo > r_hi:
        return np.empty(0, dtype=np.int64)
    cols = np.arange(c_lo, c_hi + 1)
    rows = np.arange(r_lo, r_hi + 1)
    px = grid.center_x(cols)[None, :]
    py = grid.center_y(rows)[:, None]
    d1 = np.sqrt((px - x1) ** 2 + (py - y1) ** 2)
    d2 = np.sqrt((px - x2) ** 2 + (py - y2) ** 2)
    inside = d1 + d2 < d + excess
    rr, cc = np.nonzero(inside)
    return (rows[rr] * grid.n_cols + cols[cc]).astype(np.int64)


def link_weights(link: Link, grid: PixelGrid, excess_length: float) -> sp.csr_array:
    """One row of the ellipse weight model as a ``(1, M)`` sparse array.

    A pixel gets weight ``1/sqrt(d)`` when the sum of distances from its center
    to both endpoints is strictly less than ``d + excess_length``.
    """
    if not excess_length > 0:
        raise ValueError(f"excess_length must be positive, got {excess_length}")
    d = link.distance
    cols = _ellipse_support(link.tx.x, link.tx.y, link.rx.x, link.rx.y, d, grid, excess_length)
    data = np.full(cols.size, 1.0 / math.sqrt(d))
    indptr = np.array([0, cols.size])
    return sp.csr_array((data, cols, indptr), shape=(1, grid.n_pixels))


@dataclass(frozen=True)
class WeightMatrix:
    matrix: sp.csr_array
    distances: np.ndarray
    excess_length: float
    nnz_per_row: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    @property
    def density(self) -> float:
        L, M = self.shape
        return self.nnz / (L * M) if L * M else 0.0

    @property
    def empty_rows(self) -> np.ndarray:
        """Indices of links whose ellipse holds no pixel center."""
        return np.flatnonzero(self.nnz_per_row == 0)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def stats(self) -> dict[str, float]:
        L, M = self.shape
        return {
            "links": L,
            "pixels": M,
            "nnz": self.nnz,
            "density": self.density,
            "mean_nnz_per_row": float(self.nnz_per_row.mean()) if L else 0.0,
            "empty_rows": int(self.empty_rows.size),
        }


def build_weight_matrix(links: Sequence[Link], grid: PixelGrid, excess_length: float) -> WeightMatrix:
    if not excess_length > 0:
        raise ValueError(f"excess_length must be positive, got {excess_length}")
    indices = []
    data = []
    counts = np.zeros(len(links), dtype=np.int64)
    dists = np.empty(len(links))
    for i, link in enumerate(links):
        d = link.distance
        cols = _ellipse_support(link.tx.x, link.tx.y, link.rx.x, link.rx.y, d, grid, excess_length)
        indices.append(cols)
        data.append(np.full(cols.size, 1.0 / math.sqrt(d)))
        counts[i] = cols.size
        dists[i] = d
    indptr = np.concatenate([[0], np.cumsum(counts)])
    mat = sp.csr_array(
        (
            np.concatenate(data) if data else np.empty(0),
            np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
            indptr,
        ),
        shape=(len(links), grid.n_pixels),
    )
    return WeightMatrix(mat, dists, float(excess_length), counts)
