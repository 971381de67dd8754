"""Model files, loss-field export and key=value config files.

Model file (``celf-model 1``)::

    # celf-model 1
    <key>=<value>            one header entry per line
    ...
    [field]
    pixel,loss_db            CSV payload, one row per pixel, row-major
    0,-0.123...

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .estimator import MAP_CHOLESKY, MINIMUM_NORM, CelfModel, Hyperparameters, SolveReport
from .geometry import PixelGrid, Point2D
from .pathloss import LogDistanceModel
from .prior import FieldPrior

MODEL_MAGIC = "# celf-model"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def model_to_text(model: CelfModel) -> str:
    h = model.hyper
    g = model.grid
    rep = model.report or SolveReport(model.solver_path)
    header = {
        "solver_path": model.solver_path,
        "pathloss.intercept": model.pathloss.intercept,
        "pathloss.exponent": model.pathloss.exponent,
        "pathloss.ref_distance": model.pathloss.ref_distance,
        **{f"hyper.{f.name}": float(getattr(h, f.name)) for f in fields(Hyperparameters)},
        "grid.origin_x": g.origin.x,
        "grid.origin_y": g.origin.y,
        "grid.pixel_width": g.pixel_width,
        "grid.n_cols": g.n_cols,
        "grid.n_rows": g.n_rows,
        "prior.sigma_x_sq": model.prior.sigma_x_sq,
        "prior.delta": model.prior.delta,
        "train.n_links": model.n_links,
        "train.residual_variance": float(model.residual_variance),
        "train.residual_norm": float(rep.residual_norm),
        "train.relative_residual": float(rep.relative_residual),
        "train.jittered": rep.jittered,
        "train.degenerate": rep.degenerate,
        "field.length": g.n_pixels,
    }
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}"]
    lines += [f"{k}={_fmt(v)}" for k, v in header.items()]
    lines += ["[field]", "pixel,loss_db"]
    lines += [f"{i},{v!r}" for i, v in enumerate(model.field.tolist())]
    return "\n".join(lines) + "\n"


def save_model(model: CelfModel, path: str | Path) -> None:
    Path(path).write_text(model_to_text(model), encoding="utf-8")


def model_from_text(text: str) -> CelfModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(MODEL_MAGIC):
        raise ModelFormatError("not a celf model file")
    try:
        version = int(lines[0][len(MODEL_MAGIC) :].strip())
    except ValueError:
        raise ModelFormatError(f"bad version line {lines[0]!r}") from None
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        split = lines.index("[field]")
    except ValueError:
        raise ModelFormatError("missing [field] section") from None
    kv = {}
    for line in lines[1:split]:
        if not line.strip():
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise ModelFormatError(f"bad header line {line!r}")
        kv[k.strip()] = v.strip()
    try:
        num = lambda k: float(kv[k])  # noqa: E731
        grid = PixelGrid(
            Point2D(num("grid.origin_x"), num("grid.origin_y")),
            num("grid.pixel_width"),
            int(kv["grid.n_cols"]),
            int(kv["grid.n_rows"]),
        )
        hyper = Hyperparameters(**{f.name: num(f"hyper.{f.name}") for f in fields(Hyperparameters)})
        pathloss = LogDistanceModel(num("pathloss.intercept"), num("pathloss.exponent"), num("pathloss.ref_distance"))
        prior = FieldPrior(num("prior.sigma_x_sq"), num("prior.delta"), grid)
        n = int(kv["field.length"])
        path = kv["solver_path"]
    except KeyError as exc:
        raise ModelFormatError(f"missing header key {exc.args[0]}") from None
    if path not in (MAP_CHOLESKY, MINIMUM_NORM):
        raise ModelFormatError(f"unknown solver_path {path!r}")
    if lines[split + 1].strip() != "pixel,loss_db":
        raise ModelFormatError("field payload must start with 'pixel,loss_db'")
    rows = [l for l in lines[split + 2 :] if l.strip()]
    if len(rows) != n or n != grid.n_pixels:
        raise ModelFormatError(f"field has {len(rows)} rows, header says {n}, grid has {grid.n_pixels}")
    field = np.empty(n)
    for i, row in enumerate(rows):
        idx, _, val = row.partition(",")
        if int(idx) != i:
            raise ModelFormatError(f"field row {i} labelled {idx}")
        field[i] = float(val)
    report = SolveReport(
        path,
        residual_norm=float(kv.get("train.residual_norm", "0")),
        relative_residual=float(kv.get("train.relative_residual", "0")),
        jittered=kv.get("train.jittered") == "true",
        degenerate=kv.get("train.degenerate") == "true",
    )
    return CelfModel(
        pathloss=pathloss,
        hyper=hyper,
        grid=grid,
        field=field,
        prior=prior,
        solver_path=path,
        n_links=int(kv.get("train.n_links", "0")),
        residual_variance=float(kv.get("train.residual_variance", "nan")),
        report=report,
    )


def load_model(path: str | Path) -> CelfModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))


# -- loss-field export --------------------------------------------------------


def write_field_csv(grid: PixelGrid, values: np.ndarray, path: str | Path) -> None:
    centers = grid.centers()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_center", "y_center", "loss_db"])
        for (x, y), v in zip(centers.tolist(), np.asarray(values, dtype=float).tolist()):
            w.writerow([repr(x), repr(y), repr(v)])


def read_field_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(centers (M, 2), values (M,))``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["x_center", "y_center", "loss_db"]:
            raise ValueError(f"unexpected field CSV header {header}")
        rows = [(float(a), float(b), float(c)) for a, b, c in reader]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return arr[:, :2], arr[:, 2]


@dataclass(frozen=True)
class GrayMapping:
    vmin: float
    vmax: float

    @property
    def step(self) -> float:
        return (self.vmax - self.vmin) / 255.0

    def encode(self, values: np.ndarray) -> np.ndarray:
        if self.vmax == self.vmin:
            return np.full(np.shape(values), 128, dtype=np.uint8)
        g = np.rint((np.asarray(values) - self.vmin) / (self.vmax - self.vmin) * 255.0)
        return np.clip(g, 0, 255).astype(np.uint8)

    def decode(self, gray: np.ndarray) -> np.ndarray:
        if self.vmax == self.vmin:
            return np.full(np.shape(gray), self.vmin)
        return self.vmin + np.asarray(gray, dtype=float) * self.step


def field_image(grid: PixelGrid, values: np.ndarray, mapping: GrayMapping) -> np.ndarray:
    """(n_rows, n_cols) uint8 image, top image row = largest y (north up)."""
    img = mapping.encode(values).reshape(grid.n_rows, grid.n_cols)
    return img[::-1]


def write_pgm(image: np.ndarray, path: str | Path) -> None:
    """Binary (P5) portable graymap, maxval 255."""
    h, w = image.shape
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5" or tokens[3] != "255":
        raise ValueError("only 8-bit binary P5 graymaps are supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w)


def export_field(model: CelfModel, prefix: str | Path) -> dict[str, Path]:
    """Write ``<prefix>.csv``, ``<prefix>.pgm`` and the mapping sidecar ``<prefix>.pgm.txt``."""
    prefix = str(prefix)
    paths = {"csv": Path(prefix + ".csv"), "pgm": Path(prefix + ".pgm"), "mapping": Path(prefix + ".pgm.txt")}
    field = model.field
    mapping = GrayMapping(float(field.min()), float(field.max()))
    write_field_csv(model.grid, field, paths["csv"])
    write_pgm(field_image(model.grid, field, mapping), paths["pgm"])
    g = model.grid
    sidecar = {
        "image": paths["pgm"].name,
        "mapping": "linear",
        "min_loss_db": repr(mapping.vmin),
        "max_loss_db": repr(mapping.vmax),
        "db_per_level": repr(mapping.step),
        "constant_field_level": "128",
        "orientation": "row 0 = top = largest y; column 0 = smallest x",
        "origin_x": repr(g.origin.x),
        "origin_y": repr(g.origin.y),
        "pixel_width": repr(g.pixel_width),
        "n_cols": str(g.n_cols),
        "n_rows": str(g.n_rows),
    }
    paths["mapping"].write_text("".join(f"{k}={v}\n" for k, v in sidecar.items()), encoding="utf-8")
    return paths


def read_mapping(path: str | Path) -> GrayMapping:
    kv = dict(line.split("=", 1) for line in Path(path).read_text(encoding="utf-8").splitlines() if "=" in line)
    return GrayMapping(float(kv["min_loss_db"]), float(kv["max_loss_db"]))


# -- config files -------------------------------------------------------------


def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out

