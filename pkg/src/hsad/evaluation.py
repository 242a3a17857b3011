"""Detection scoring: ROC sweeps with trapezoidal AUC, plus the normalized
reconstruction and anomaly-field error ratios."""

from dataclasses import dataclass

import numpy as np

from .hsi_io import GroundTruthMask


class DegenerateMaskError(ValueError):
    """ROC evaluation needs at least one anomaly and one background pixel."""


_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy<2 compatibility


@dataclass(frozen=True)
class AnomalyScoreMap:
    """Per-pixel scores in [0, 1] on a rows x cols grid."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2:
            raise ValueError(f"scores must be 2-d, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores contain non-finite values")
        if scores.size and (scores.min() < 0 or scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class RocCurve:
    """(false-alarm rate, detection probability) sweep plus its area.

    Points are nondecreasing in both coordinates, start at (0, 0), end at
    (1, 1); ``auc`` is their trapezoidal integral.
    """

    far: np.ndarray
    pd: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.far.tolist(), self.pd.tolist()))


def roc(scores: AnomalyScoreMap, gt: GroundTruthMask) -> RocCurve:
    """Threshold sweep over all distinct score values.

    The trapezoidal area equals the Mann-Whitney pair statistic with ties
    counted one half.
    """
    s = np.asarray(scores.scores, dtype=float).ravel()
    y = np.asarray(gt.labels).ravel().astype(bool)
    if s.size != y.size:
        raise ValueError(f"score count {s.size} does not match label count {y.size}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMaskError(
            f"mask must contain both classes (anomalies={n_pos}, background={n_neg})"
        )
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # keep one operating point per distinct threshold value
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)
    last = np.concatenate([boundary, [s.size - 1]])
    tp = np.cumsum(y_sorted)[last]
    fp = np.cumsum(~y_sorted)[last]
    far = np.concatenate([[0.0], fp / n_neg])
    pd = np.concatenate([[0.0], tp / n_pos])
    auc = float(_trapezoid(pd, far))
    return RocCurve(far=far, pd=pd, auc=auc)


def metric_mse(x, recon) -> float:
    """Normalized squared reconstruction error ``||X - R||^2 / ||X||^2``."""
    x = np.asarray(getattr(x, "values", x), dtype=float)
    recon = np.asarray(getattr(recon, "values", recon), dtype=float)
    if x.shape != recon.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {recon.shape}")
    denom = float(np.sum(x * x))
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.sum((x - recon) ** 2) / denom)


def metric_pre(s_map, gt_map) -> float:
    """Normalized squared anomaly-field error ``||R_S - R_gt||^2 / ||R_gt||^2``."""
    s_map = np.asarray(getattr(s_map, "values", s_map), dtype=float)
    gt_map = np.asarray(getattr(gt_map, "values", gt_map), dtype=float)
    if s_map.shape != gt_map.shape:
        raise ValueError(f"shape mismatch: {s_map.shape} vs {gt_map.shape}")
    denom = float(np.sum(gt_map * gt_map))
    if denom == 0:
        raise ValueError("ground truth has zero norm")
    return float(np.sum((s_map - gt_map) ** 2) / denom)


def write_roc_csv(curve: RocCurve, path) -> None:
    """ROC CSV with the AUC recorded in a leading comment line."""
    with open(path, "w") as fh:
        fh.write(f"# auc = {curve.auc!r}\n")
        fh.write("far,pd\n")
        for f, p in zip(curve.far, curve.pd):
            fh.write(f"{f!r},{p!r}\n")
