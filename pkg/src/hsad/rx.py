r"""Mahalanobis-distance anomaly detectors.

The global detector scores each pixel by its squared Mahalanobis distance
to the scene-wide mean and covariance::

    score(x_j) = (x_j - m)^T Sigma^{-1} (x_j - m)

The local variant estimates ``m`` and ``Sigma`` per pixel from the annulus
between an outer window and an inner guard window; at image borders the
outer window shifts inward while the guard window is clipped.
"""

from dataclasses import dataclass

import numpy as np

from .evaluation import AnomalyScoreMap
from .hsi_io import DataFormatError, HsiCube
from .numerics import solve_spd


@dataclass(frozen=True)
class LocalRxConfig:
    """Dual-window sizes (odd, outer > inner) and covariance ridge.

    ``w_in = 1`` disables the guard band: only the center pixel itself is
    excluded from the statistics. ``ridge`` scales ``trace(Sigma)/bands``
    and is added to the covariance diagonal; zero means no regularization.
    """

    w_in: int = 3
    w_out: int = 9
    ridge: float = 1e-6

    def __post_init__(self):
        if self.w_in % 2 == 0 or self.w_out % 2 == 0:
            raise ValueError("window sizes must be odd")
        if self.w_in < 1:
            raise ValueError(f"w_in must be at least 1, got {self.w_in}")
        if self.w_out <= self.w_in:
            raise ValueError(f"w_out={self.w_out} must exceed w_in={self.w_in}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be nonnegative, got {self.ridge}")


def _minmax(scores: np.ndarray) -> np.ndarray:
    span = scores.max() - scores.min()
    if span == 0:
        return np.zeros_like(scores)
    return (scores - scores.min()) / span


def _mahalanobis(centered: np.ndarray, cov: np.ndarray, ridge: float) -> np.ndarray:
    """Squared Mahalanobis distances of columns of ``centered`` under ``cov``."""
    bands = cov.shape[0]
    trace = float(np.trace(cov))
    if trace == 0:
        # statistics from identical samples: fall back to Euclidean distance
        return np.einsum("ij,ij->j", centered, centered)
    reg = cov if ridge == 0 else cov + (ridge * trace / bands) * np.eye(bands)
    solved = solve_spd(reg, centered)
    return np.einsum("ij,ij->j", centered, solved)


def global_rx(x, ridge: float = 0.0) -> AnomalyScoreMap:
    """Scene-wide Mahalanobis scores, min-max scaled to [0, 1].

    The score ranking is invariant under any invertible affine transform
    applied to all pixel spectra. A singular covariance without ridge is an
    error; pass ``ridge > 0`` (scaling trace/bands) to regularize.
    """
    values = np.asarray(getattr(x, "values", x), dtype=float)
    rows = getattr(x, "rows", 1)
    cols = getattr(x, "cols", values.shape[1])
    centered = values - values.mean(axis=1, keepdims=True)
    cov = (centered @ centered.T) / values.shape[1]
    scores = _mahalanobis(centered, cov, ridge)
    return AnomalyScoreMap(scores=_minmax(scores).reshape(rows, cols))


def local_rx(cube: HsiCube, cfg: LocalRxConfig) -> AnomalyScoreMap:
    """Dual-window Mahalanobis scores per pixel, min-max scaled to [0, 1].

    For each pixel, mean and covariance come from the outer window minus
    the inner guard window (the center pixel is always excluded). Near
    borders the outer window keeps its full size and shifts inward, while
    the guard window stays centered and is clipped; with the outer window
    spanning the whole image and ``w_in = 1`` this reduces to global
    statistics that leave out the pixel under test.
    """
    rows, cols = cube.rows, cube.cols
    if rows < cfg.w_out or cols < cfg.w_out:
        raise DataFormatError(
            f"image {rows}x{cols} is smaller than the outer window {cfg.w_out}"
        )
    img = cube.data  # (bands, rows, cols)
    half_out = cfg.w_out // 2
    half_in = cfg.w_in // 2
    scores = np.empty((rows, cols))
    for r in range(rows):
        r0 = min(max(0, r - half_out), rows - cfg.w_out)
        r1 = r0 + cfg.w_out
        ri0, ri1 = max(0, r - half_in), min(rows, r + half_in + 1)
        for c in range(cols):
            c0 = min(max(0, c - half_out), cols - cfg.w_out)
            c1 = c0 + cfg.w_out
            ci0, ci1 = max(0, c - half_in), min(cols, c + half_in + 1)
            block = img[:, r0:r1, c0:c1].reshape(img.shape[0], -1)
            keep = np.ones((r1 - r0, c1 - c0), dtype=bool)
            keep[ri0 - r0 : ri1 - r0, ci0 - c0 : ci1 - c0] = False
            samples = block[:, keep.ravel()]
            mean = samples.mean(axis=1)
            centered = samples - mean[:, None]
            cov = (centered @ centered.T) / samples.shape[1]
            diff = img[:, r, c] - mean
            scores[r, c] = _mahalanobis(diff[:, None], cov, cfg.ridge)[0]
    return AnomalyScoreMap(scores=_minmax(scores))
