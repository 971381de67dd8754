"""First-order channel estimates: log-distance path loss and Okumura-Hata."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Link, link_distances


@dataclass(frozen=True)
class LogDistanceModel:
    """Mean received power ``intercept - 10 * exponent * log10(d / ref_distance)``.

    ``intercept`` is the combined transmit power minus reference loss, i.e. the
    mean power (dBm) at ``ref_distance``.
    """

    intercept: float
    exponent: float
    ref_distance: float = 1.0

    def __post_init__(self) -> None:
        if not self.ref_distance > 0:
            raise ValueError(f"ref_distance must be positive, got {self.ref_distance}")
        if not (math.isfinite(self.exponent) and math.isfinite(self.intercept)):
            raise ValueError("log-distance parameters must be finite")

    def mean_power(self, distance: np.ndarray | float) -> np.ndarray | float:
        return self.intercept - 10.0 * self.exponent * np.log10(np.asarray(distance) / self.ref_distance)


def fit_log_distance(links: Sequence[Link], ref_distance: float = 1.0) -> LogDistanceModel:
    """OLS fit of rss against ``-10 log10(d / ref_distance)``."""
    if len(links) < 2:
        raise ValueError(f"need at least 2 links to fit path loss, got {len(links)}")
    if not ref_distance > 0:
        raise ValueError(f"ref_distance must be positive, got {ref_distance}")
    x = -10.0 * np.log10(link_distances(links) / ref_distance)
    y = np.array([l.rss for l in links], dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-12 * max(1.0, float(x @ x)):
        raise ValueError("all links have the same distance; path-loss regression is singular")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    return LogDistanceModel(intercept, slope, float(ref_distance))


def predict_mean_power(model: LogDistanceModel, link: Link) -> float:
    return float(model.mean_power(link.distance))


def fading_loss(model: LogDistanceModel, link: Link) -> float:
    """Total fading loss: model mean minus measured power (positive = weaker than expected)."""
    return predict_mean_power(model, link) - link.rss


def fading_losses(model: LogDistanceModel, links: Sequence[Link]) -> np.ndarray:
    rss = np.array([l.rss for l in links], dtype=float)
    return model.mean_power(link_distances(links)) - rss


class Environment(str, enum.Enum):
    URBAN_MEDIUM = "urban_medium"
    URBAN_LARGE = "urban_large"
    SUBURBAN = "suburban"
    OPEN = "open"


class HataRangeWarning(UserWarning):
    """Distance outside the 1-20 km range the Hata fit was made on."""


@dataclass(frozen=True)
class HataParams:
    frequency: float  # MHz
    tx_height: float  # base station antenna, m
    rx_height: float  # mobile antenna, m
    environment: Environment = Environment.URBAN_MEDIUM

    def __post_init__(self) -> None:
        if not 150.0 <= self.frequency <= 1500.0:
            raise ValueError(f"Okumura-Hata is valid for 150-1500 MHz, got {self.frequency} MHz")
        if not (self.tx_height > 0 and self.rx_height > 0):
            raise ValueError("antenna heights must be positive")
        object.__setattr__(self, "environment", Environment(self.environment))


def _mobile_correction(f: float, hm: float, env: Environment) -> float:
    if env is Environment.URBAN_LARGE:
        if f >= 300.0:
            return 3.2 * math.log10(11.75 * hm) ** 2 - 4.97
        return 8.29 * math.log10(1.54 * hm) ** 2 - 1.1
    return (1.1 * math.log10(f) - 0.7) * hm - (1.56 * math.log10(f) - 0.8)


def hata_path_loss(params: HataParams, distance: np.ndarray | float) -> np.ndarray | float:
    """Hata (1980) median path loss in dB for ``distance`` in kilometers.

    Distances outside 1-20 km are evaluated anyway and raise a
    :class:`HataRangeWarning`.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if np.any((d < 1.0) | (d > 20.0)):
        warnings.warn("distance outside the 1-20 km Hata range", HataRangeWarning, stacklevel=2)
    f, hb, hm = params.frequency, params.tx_height, params.rx_height
    lf = math.log10(f)
    urban = (
        69.55
        + 26.16 * lf
        - 13.82 * math.log10(hb)
        - _mobile_correction(f, hm, params.environment)
        + (44.9 - 6.55 * math.log10(hb)) * np.log10(d)
    )
    env = params.environment
    if env is Environment.SUBURBAN:
        loss = urban - 2.0 * math.log10(f / 28.0) ** 2 - 5.4
    elif env is Environment.OPEN:
        loss = urban - 4.78 * lf**2 + 18.33 * lf - 40.94
    else:
        loss = urban
    return float(loss) if np.ndim(loss) == 0 else loss
