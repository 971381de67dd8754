"""Measurement CSV ingestion and synthetic scenario generation.

CSV schema (UTF-8, comma separated, ``.`` decimal)::

    tx_x,tx_y,rx_x,rx_y,rss_dbm[,link_id][,group_tag]

Coordinates are planar meters. GPS fixes must be projected beforehand (see
README for a local tangent-plane formula).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Link, PixelGrid, Point2D, build_weight_matrix
from .pathloss import LogDistanceModel
from .prior import FieldPrior, build_covariance, sample_field

REQUIRED_COLUMNS = ("tx_x", "tx_y", "rx_x", "rx_y", "rss_dbm")
OPTIONAL_COLUMNS = ("link_id", "group_tag")
GROUP_TAGS = ("stationary", "sub_wavelength", "other")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    tx_x: float
    tx_y: float
    rx_x: float
    rx_y: float
    rss: float
    link_id: str | None = None
    group_tag: str | None = None

    def __post_init__(self) -> None:
        vals = (self.tx_x, self.tx_y, self.rx_x, self.rx_y, self.rss)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("non-finite value")
        if (self.tx_x, self.tx_y) == (self.rx_x, self.rx_y):
            raise ValueError("tx and rx coincide")
        if self.group_tag is not None and self.group_tag not in GROUP_TAGS:
            raise ValueError(f"unknown group_tag {self.group_tag!r}")

    def to_link(self) -> Link:
        return Link(Point2D(self.tx_x, self.tx_y), Point2D(self.rx_x, self.rx_y), self.rss, self.link_id)

    @classmethod
    def from_link(cls, link: Link, group_tag: str | None = None) -> "MeasurementRecord":
        return cls(link.tx.x, link.tx.y, link.rx.x, link.rx.y, link.rss, link.id, group_tag)


@dataclass
class LoadedCsv:
    records: list[MeasurementRecord]
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)
    columns: tuple[str, ...] = REQUIRED_COLUMNS

    def links(self) -> list[Link]:
        return [r.to_link() for r in self.records]

    def summary(self) -> str:
        s = f"{len(self.records)} records"
        if self.rejected:
            s += f", {len(self.rejected)} rejected (" + "; ".join(f"line {n}: {why}" for n, why in self.rejected[:5])
            s += ", ..." if len(self.rejected) > 5 else ""
            s += ")"
        return s


def load_csv(path: str | Path, require_rss: bool = True) -> LoadedCsv:
    """Parse a measurement CSV.

    Rows that parse but violate record invariants (tx == rx, inf/nan, unknown
    tag) are skipped and listed in ``rejected``. Structural problems (missing
    columns, non-numeric cells, no data rows) raise :class:`DatasetError`.
    With ``require_rss=False`` a missing ``rss_dbm`` column reads as 0 dBm,
    for position-only prediction inputs.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        needed = REQUIRED_COLUMNS if require_rss else REQUIRED_COLUMNS[:4]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        idx = {c: header.index(c) for c in REQUIRED_COLUMNS + OPTIONAL_COLUMNS if c in header}
        out = LoadedCsv([], [], tuple(c for c in REQUIRED_COLUMNS + OPTIONAL_COLUMNS if c in idx))
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            nums = []
            for c in REQUIRED_COLUMNS:
                if c not in idx:
                    nums.append(0.0)
                    continue
                cell = row[idx[c]].strip()
                try:
                    nums.append(float(cell))
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-numeric {c} {cell!r}") from None
            link_id = row[idx["link_id"]].strip() or None if "link_id" in idx else None
            tag = row[idx["group_tag"]].strip() or None if "group_tag" in idx else None
            try:
                out.records.append(MeasurementRecord(*nums, link_id=link_id, group_tag=tag))
            except ValueError as exc:
                out.rejected.append((lineno, str(exc)))
    if not out.records and not out.rejected:
        raise DatasetError(f"{path}: no data rows")
    return out


def write_csv(records: Sequence[MeasurementRecord], path: str | Path, columns: Sequence[str] | None = None) -> None:
    """Write records with shortest round-trip float formatting."""
    if columns is None:
        columns = list(REQUIRED_COLUMNS)
        if any(r.link_id is not None for r in records):
            columns.append("link_id")
        if any(r.group_tag is not None for r in records):
            columns.append("group_tag")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in records:
            vals = {
                "tx_x": repr(r.tx_x),
                "tx_y": repr(r.tx_y),
                "rx_x": repr(r.rx_x),
                "rx_y": repr(r.rx_y),
                "rss_dbm": repr(r.rss),
                "link_id": r.link_id or "",
                "group_tag": r.group_tag or "",
            }
            w.writerow([vals[c] for c in columns])


def write_links(links: Sequence[Link], path: str | Path) -> None:
    write_csv([MeasurementRecord.from_link(l) for l in links], path)


@dataclass(frozen=True)
class SyntheticScenario:
    width: float  # m
    height: float  # m
    pixel_width: float
    sigma_x_sq: float  # prior shadowing variance used to draw the true field
    delta: float  # true space constant
    excess_length: float  # lambda of the generating weight model
    noise_var: float  # i.i.d. Gaussian noise variance, dB^2
    exponent: float = 2.0
    intercept: float = -40.0
    ref_distance: float = 1.0
    n_nodes: int = 44
    placement: str = "uniform"  # uniform | grid
    link_policy: str = "all_pairs"  # all_pairs | bipartite
    n_receivers: int = 5  # bipartite only: first n nodes receive, the rest transmit
    shadow_var: float | None = None  # rescale field so var(W p) over links equals this
    center_field: bool = True  # remove the field's spatial mean (indistinguishable from path loss)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.pixel_width <= 0:
            raise ValueError("scenario box and pixel width must be positive")
        if self.noise_var < 0 or self.sigma_x_sq <= 0 or self.delta <= 0 or self.excess_length <= 0:
            raise ValueError("invalid scenario prior/noise parameters")
        if self.placement not in ("uniform", "grid"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.link_policy not in ("all_pairs", "bipartite"):
            raise ValueError(f"unknown link_policy {self.link_policy!r}")
        if self.n_nodes < 2:
            raise ValueError("need at least two nodes")
        if self.link_policy == "bipartite" and not 0 < self.n_receivers < self.n_nodes:
            raise ValueError("bipartite policy needs 0 < n_receivers < n_nodes")

    @property
    def grid(self) -> PixelGrid:
        w = self.pixel_width
        return PixelGrid(
            Point2D(0.0, 0.0), w, max(1, math.ceil(self.width / w - 1e-9)), max(1, math.ceil(self.height / w - 1e-9))
        )

    @property
    def pathloss(self) -> LogDistanceModel:
        return LogDistanceModel(self.intercept, self.exponent, self.ref_distance)


@dataclass
class SyntheticTruth:
    grid: PixelGrid
    field: np.ndarray  # true loss field p
    shadowing: np.ndarray  # W p per link
    noise: np.ndarray
    pathloss: LogDistanceModel
    nodes: np.ndarray = field(repr=False)


def _place_nodes(sc: SyntheticScenario, rng: np.random.Generator) -> np.ndarray:
    if sc.placement == "uniform":
        return rng.uniform((0.0, 0.0), (sc.width, sc.height), size=(sc.n_nodes, 2))
    nx = math.ceil(math.sqrt(sc.n_nodes * sc.width / sc.height))
    ny = math.ceil(sc.n_nodes / nx)
    xs = (np.arange(nx) + 0.5) * sc.width / nx
    ys = (np.arange(ny) + 0.5) * sc.height / ny
    pts = np.array([(x, y) for y in ys for x in xs])
    return pts[: sc.n_nodes]


def generate_synthetic(scenario: SyntheticScenario) -> tuple[list[Link], SyntheticTruth]:
    """Sample a field from the prior and push it through ``z = W p + n``.

    Measured power is ``mean_power(d) - (W p) - n``.
    """
    sc = scenario
    grid = sc.grid
    rng = np.random.default_rng(sc.seed)
    field_seed, node_seed, noise_seed = rng.integers(0, 2**63 - 1, size=3)
    prior = FieldPrior(sc.sigma_x_sq, sc.delta, grid)
    p = sample_field(prior, int(field_seed), cov=build_covariance(prior))
    if sc.center_field:
        p = p - p.mean()
    nodes = _place_nodes(sc, np.random.default_rng(node_seed))
    if sc.link_policy == "all_pairs":
        pairs = [(i, j) for i in range(sc.n_nodes) for j in range(i + 1, sc.n_nodes)]
    else:
        pairs = [(t, r) for r in range(sc.n_receivers) for t in range(sc.n_receivers, sc.n_nodes)]
    pairs = [(i, j) for i, j in pairs if not np.array_equal(nodes[i], nodes[j])]
    geo = [Link(Point2D(*nodes[i]), Point2D(*nodes[j]), 0.0, f"{i}-{j}") for i, j in pairs]
    W = build_weight_matrix(geo, grid, sc.excess_length).matrix
    shadow = W @ p
    if sc.shadow_var is not None:
        v = float(np.var(shadow))
        if v > 0:
            k = math.sqrt(sc.shadow_var / v)
            p = p * k
            shadow = W @ p
    noise = np.random.default_rng(noise_seed).normal(0.0, math.sqrt(sc.noise_var), size=len(geo))
    pl = sc.pathloss
    mean = pl.mean_power(np.array([g.distance for g in geo]))
    rss = mean - shadow - noise
    links = [replace(g, rss=float(v)) for g, v in zip(geo, rss)]
    return links, SyntheticTruth(grid, p, shadow, noise, pl, nodes)


# Published hyperparameters for an indoor office and a campus rooftop deployment,
# with site geometry and fading variances (19.8 / 58.4 dB^2) matching those sites.
_PRESETS = {
    "indoor-like": dict(
        scenario=dict(
            width=17.5, height=15.0, pixel_width=0.35, sigma_x_sq=1.0, delta=2.5, excess_length=0.18,
            noise_var=0.70 * 19.8, shadow_var=0.30 * 19.8, exponent=2.26, intercept=-37.04,
            n_nodes=44, placement="grid", link_policy="all_pairs",
        ),
        hyper=dict(pixel_width=0.35, shadow_ratio=0.30, space_constant=2.5, excess_length=0.18, alpha=41.0),
    ),
    "outdoor-like": dict(
        scenario=dict(
            width=2200.0, height=2100.0, pixel_width=25.0, sigma_x_sq=1.0, delta=35.0, excess_length=105.0,
            noise_var=0.42 * 58.4, shadow_var=0.58 * 58.4, exponent=2.73, intercept=-1.25,
            n_nodes=605, placement="uniform", link_policy="bipartite", n_receivers=5,
        ),
        hyper=dict(pixel_width=25.0, shadow_ratio=0.58, space_constant=35.0, excess_length=105.0, alpha=0.3),
    ),
}


@dataclass(frozen=True)
class Preset:
    name: str
    scenario: SyntheticScenario
    hyper: dict


def scenario_presets() -> dict[str, Preset]:
    return {
        name: Preset(name, SyntheticScenario(**p["scenario"]), dict(p["hyper"])) for name, p in _PRESETS.items()
    }


def get_preset(name: str, **overrides) -> Preset:
    presets = scenario_presets()
    if name not in presets:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(presets))}")
    p = presets[name]
    if overrides:
        p = Preset(p.name, replace(p.scenario, **overrides), p.hyper)
    return p


_SCENARIO_TYPES = {f.name: f.type for f in fields(SyntheticScenario)}


def parse_scenario(text: str, base: SyntheticScenario | None = None) -> SyntheticScenario:
    """Scenario from ``key=value`` lines; ``preset=<name>`` starts from a preset."""
    from .io import parse_kv

    kv = parse_kv(text)
    if "preset" in kv:
        base = get_preset(kv.pop("preset")).scenario
    values = {}
    for k, v in kv.items():
        if k not in _SCENARIO_TYPES:
            raise ValueError(f"unknown scenario key {k!r}")
        t = _SCENARIO_TYPES[k]
        if t == "int":
            values[k] = int(v)
        elif t == "str":
            values[k] = v
        elif t == "bool":
            if v.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"{k}: expected true/false, got {v!r}")
            values[k] = v.lower() in ("true", "1")
        elif v.lower() == "none":
            values[k] = None
        else:
            values[k] = float(v)
    if base is not None:
        return replace(base, **values)
    return SyntheticScenario(**values)
