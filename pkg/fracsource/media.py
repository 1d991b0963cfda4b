"""Cellwise conductivity fields kappa(x) and their raster representation.

A raster is plain text: the first line holds ``rows cols`` and each following
line one whitespace-separated row of reals. Row ``r`` is the strip
``r*h <= y <= (r+1)*h`` counted from the bottom of the unit square, column
``c`` the strip in ``x``.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from fracsource.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MediumField:
    kappa: np.ndarray  # (m_c, m_c), kappa[iy, ix]

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ConfigError(f"kappa raster must be square, got shape {k.shape}", "invalid_medium")
        if not np.all(np.isfinite(k)) or np.any(k <= 0):
            raise ConfigError("kappa must be finite and strictly positive everywhere", "invalid_medium")
        object.__setattr__(self, "kappa", k)

    @property
    def cells_per_side(self) -> int:
        return self.kappa.shape[0]

    @property
    def contrast(self) -> float:
        return float(self.kappa.max() / self.kappa.min())

    def per_cell(self) -> np.ndarray:
        """Values in fine-cell order ``iy * m + ix``."""
        return self.kappa.ravel()

    def fingerprint(self) -> str:
        return hashlib.sha256(self.kappa.tobytes()).hexdigest()[:16]


def homogeneous(cells_per_side: int, value: float = 1.0) -> MediumField:
    return MediumField(np.full((cells_per_side, cells_per_side), float(value)))


def channels(
    cells_per_side: int,
    seed: int,
    contrast: float = 1e3,
    n_channels: int = 4,
    width: float = 0.04,
    levels: Optional[Sequence[float]] = None,
    amplitude: Optional[float] = None,
) -> MediumField:
    """Background 1 crossed by thin high-conductivity channels of value ``contrast``.

    Channels are horizontal strips with a gentle sinusoidal meander, so they
    connect the left and right boundaries. ``levels`` fixes their mean heights
    (layered media); otherwise the heights are seeded. ``amplitude`` fixes the
    meander amplitude, which is otherwise drawn per channel from [0.02, 0.08].
    Only the meander phases stay random once both are given.
    """
    if contrast < 1 or contrast > 1e4:
        raise ConfigError(f"channel contrast must lie in [1, 1e4], got {contrast}", "invalid_medium")
    rng = np.random.default_rng(seed)
    if levels is None:
        levels = np.sort(rng.uniform(0.1, 0.9, size=n_channels))
    elif not all(0.0 < y < 1.0 for y in levels):
        raise ConfigError(f"channel levels must lie inside (0, 1), got {list(levels)}", "invalid_medium")
    m = cells_per_side
    centers = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(centers, centers)
    kappa = np.ones((m, m))
    for base in levels:
        a = rng.uniform(0.02, 0.08) if amplitude is None else amplitude
        phase = rng.uniform(0, 2 * np.pi)
        path = base + a * np.sin(2 * np.pi * X + phase)
        kappa[np.abs(Y - path) <= width / 2] = contrast
    return MediumField(kappa)


def inclusions(
    cells_per_side: int,
    seed: int,
    contrast: float = 1e3,
    n_inclusions: int = 20,
    size: float = 0.05,
) -> MediumField:
    """Background 1 with seeded square inclusions of value ``contrast``."""
    if contrast < 1 or contrast > 1e4:
        raise ConfigError(f"inclusion contrast must lie in [1, 1e4], got {contrast}", "invalid_medium")
    rng = np.random.default_rng(seed)
    m = cells_per_side
    centers = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(centers, centers)
    kappa = np.ones((m, m))
    for cx, cy in rng.uniform(size, 1 - size, size=(n_inclusions, 2)):
        kappa[(np.abs(X - cx) <= size / 2) & (np.abs(Y - cy) <= size / 2)] = contrast
    return MediumField(kappa)


###############################################################################
# Raster I/O
###############################################################################

def read_raster(path: Union[str, Path]) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ConfigError(f"raster {path} is missing its 'rows cols' header", "invalid_raster")
        try:
            rows, cols = int(header[0]), int(header[1])
            values = np.loadtxt(f, ndmin=1).ravel()
        except ValueError as e:
            raise ConfigError(f"raster {path} is not numeric: {e}", "invalid_raster") from None
    if values.size != rows * cols:
        raise ConfigError(
            f"raster {path} declares {rows}x{cols} but holds {values.size} values", "invalid_raster"
        )
    return values.reshape(rows, cols)


def write_raster(path: Union[str, Path], values: np.ndarray) -> None:
    values = np.atleast_2d(values)
    rows, cols = values.shape
    np.savetxt(path, values, fmt="%.17g", header=f"{rows} {cols}", comments="")


def load_medium(path: Union[str, Path], cells_per_side: Optional[int] = None) -> MediumField:
    medium = MediumField(read_raster(path))
    if cells_per_side is not None and medium.cells_per_side != cells_per_side:
        raise ConfigError(
            f"kappa raster {path} is {medium.cells_per_side}x{medium.cells_per_side}, "
            f"mesh has {cells_per_side}x{cells_per_side} cells",
            "invalid_medium",
        )
    logger.info(f"Loaded kappa raster {path} (contrast {medium.contrast:.3g})")
    return medium
