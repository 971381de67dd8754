import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from celf.geometry import (
    Link,
    PixelGrid,
    Point2D,
    build_weight_matrix,
    grid_from_links,
    link_distance,
    link_weights,
)
from conftest import dense_weights_oracle, random_links


def L(tx, rx, rss=-50.0):
    return Link(Point2D(*tx), Point2D(*rx), rss)


# -- links ---------------------------------------------------------------------


def test_link_distance_345():
    assert link_distance(L((0, 0), (3, 4))) == 5.0


def test_link_distance_axis_aligned():
    assert link_distance(L((0, 0), (10, 0))) == 10.0


def test_degenerate_link_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        L((1, 1), (1, 1))


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_nonfinite_rejected(bad):
    with pytest.raises(ValueError):
        Point2D(bad, 0.0)
    with pytest.raises(ValueError):
        L((0, 0), (1, 0), rss=bad)


# -- grids ---------------------------------------------------------------------


def _box_links(w, h):
    return [L((0, 0), (w, h)), L((w, 0), (0, h))]


@pytest.mark.parametrize(
    "w, h, px, cols, rows",
    [
        (10, 10, 1.0, 10, 10),
        (10, 10, 3.0, 4, 4),
        (17.5, 15, 0.35, 50, 43),
    ],
)
def test_grid_from_links(w, h, px, cols, rows):
    g = grid_from_links(_box_links(w, h), px)
    assert (g.n_cols, g.n_rows) == (cols, rows)
    assert g.n_pixels == cols * rows
    assert g.origin == Point2D(0, 0)


def test_grid_margin_expands_every_side():
    g = grid_from_links(_box_links(10, 10), 1.0, margin=2.0)
    assert g.origin == Point2D(-2, -2)
    assert (g.n_cols, g.n_rows) == (14, 14)


def test_grid_errors():
    with pytest.raises(ValueError):
        grid_from_links([], 1.0)
    with pytest.raises(ValueError):
        grid_from_links(_box_links(1, 1), 0.0)
    with pytest.raises(ValueError):
        grid_from_links(_box_links(1, 1), 1.0, margin=-1)


def test_pixel_centers_row_major():
    g = PixelGrid(Point2D(1.0, 2.0), 0.5, 3, 2)
    c = g.centers()
    assert c.shape == (6, 2)
    np.testing.assert_array_equal(c[0], [1.25, 2.25])
    np.testing.assert_array_equal(c[2], [2.25, 2.25])  # end of first row
    np.testing.assert_array_equal(c[3], [1.25, 2.75])  # second row
    assert g.center(4) == Point2D(1.75, 2.75)


# -- ellipse weights -------------------------------------------------------------


def test_midpoint_pixel_weighted():
    grid = PixelGrid(Point2D(4.5, -0.5), 1.0, 1, 1)  # single center at (5, 0)
    row = link_weights(L((0, 0), (10, 0)), grid, 0.5)
    assert row.toarray()[0, 0] == 1.0 / math.sqrt(10.0)


def test_off_axis_pixel_hand_value():
    # center (5, 1): d1 + d2 = 2 sqrt(26) ~ 10.198 < 12
    grid = PixelGrid(Point2D(4.5, 0.5), 1.0, 1, 1)
    row = link_weights(L((0, 0), (10, 0)), grid, 2.0)
    assert row.toarray()[0, 0] == pytest.approx(0.31622776601683794, abs=1e-15)


def test_boundary_is_excluded():
    # Center at (0, 4) with foci (-3, 0) and (3, 0): d1 + d2 = 10 = d + lambda exactly.
    grid = PixelGrid(Point2D(-0.5, 3.5), 1.0, 1, 1)
    link = L((-3, 0), (3, 0))
    assert link_weights(link, grid, 4.0).nnz == 0
    assert link_weights(link, grid, 4.0 + 1e-9).nnz == 1


def test_empty_row_flagged():
    grid = PixelGrid(Point2D(100, 100), 1.0, 3, 3)
    W = build_weight_matrix([L((0, 0), (1, 0))], grid, 0.1)
    assert W.nnz == 0
    assert W.empty_rows.tolist() == [0]
    assert W.stats()["empty_rows"] == 1


def test_nnz_is_sum_of_row_counts(rng):
    grid = PixelGrid(Point2D(0, 0), 1.0, 12, 9)
    links = random_links(rng, 15, 12, 9)
    W = build_weight_matrix(links, grid, 0.8)
    rows = [link_weights(l, grid, 0.8).nnz for l in links]
    assert W.nnz == sum(rows)
    assert W.nnz_per_row.tolist() == rows


def test_dense_oracle_L20_M64(rng):
    grid = PixelGrid(Point2D(0, 0), 1.25, 8, 8)
    links = random_links(rng, 20, 10, 10)
    W = build_weight_matrix(links, grid, 1.0)
    np.testing.assert_array_equal(W.toarray(), dense_weights_oracle(links, grid, 1.0))


def test_excess_length_must_be_positive():
    grid = PixelGrid(Point2D(0, 0), 1.0, 2, 2)
    with pytest.raises(ValueError):
        link_weights(L((0, 0), (1, 1)), grid, 0.0)
    with pytest.raises(ValueError):
        build_weight_matrix([L((0, 0), (1, 1))], grid, -1.0)


# -- properties ------------------------------------------------------------------

coord = st.floats(-20, 20, allow_nan=False).map(lambda v: round(v * 8) / 8)  # dyadic grid keeps shifts exact
excess = st.sampled_from([0.125, 0.5, 1.0, 3.0])


@st.composite
def instances(draw, max_links=6):
    n = draw(st.integers(1, max_links))
    links = []
    for i in range(n):
        a = (draw(coord), draw(coord))
        b = (draw(coord), draw(coord))
        if a == b:
            b = (a[0] + 1.0, a[1])
        links.append(L(a, b, -60.0))
    width = draw(st.sampled_from([0.5, 1.0, 2.0]))
    cols = draw(st.integers(1, 20))
    rows = draw(st.integers(1, 20))
    grid = PixelGrid(Point2D(draw(coord), draw(coord)), width, cols, rows)
    return links, grid, draw(excess)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_sparse_equals_dense_bruteforce(inst):
    links, grid, lam = inst
    W = build_weight_matrix(links, grid, lam)
    np.testing.assert_array_equal(W.toarray(), dense_weights_oracle(links, grid, lam))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_row_values_are_single_inverse_sqrt_distance(inst):
    links, grid, lam = inst
    W = build_weight_matrix(links, grid, lam).matrix
    for i, link in enumerate(links):
        vals = W.data[W.indptr[i] : W.indptr[i + 1]]
        assert np.all(vals == 1.0 / math.sqrt(link.distance))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_swap_tx_rx_symmetry(inst):
    links, grid, lam = inst
    swapped = [Link(l.rx, l.tx, l.rss) for l in links]
    np.testing.assert_array_equal(
        build_weight_matrix(links, grid, lam).toarray(), build_weight_matrix(swapped, grid, lam).toarray()
    )


@settings(max_examples=60, deadline=None)
@given(instances(), st.integers(-64, 64), st.integers(-64, 64))
def test_translation_invariance(inst, ox, oy):
    links, grid, lam = inst
    moved = [L((l.tx.x + ox, l.tx.y + oy), (l.rx.x + ox, l.rx.y + oy), l.rss) for l in links]
    g2 = PixelGrid(Point2D(grid.origin.x + ox, grid.origin.y + oy), grid.pixel_width, grid.n_cols, grid.n_rows)
    a = build_weight_matrix(links, grid, lam).toarray()
    b = build_weight_matrix(moved, g2, lam).toarray()
    np.testing.assert_array_equal(a != 0, b != 0)
    np.testing.assert_allclose(a, b, rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(instances(), st.floats(0.01, 5.0))
def test_larger_excess_never_removes_entries(inst, extra):
    links, grid, lam = inst
    small = build_weight_matrix(links, grid, lam).toarray() != 0
    big = build_weight_matrix(links, grid, lam + extra).toarray() != 0
    assert np.all(big[small])
