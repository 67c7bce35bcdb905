"""Depth evaluation: AbsRel, Log10, RMS and threshold accuracies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .imaging import DepthMap

__all__ = ["MetricsReport", "THRESHOLDS", "lower_median", "scale_exact", "evaluate"]

THRESHOLDS = (1.25, 1.25**2, 1.25**3)


@dataclass(frozen=True)
class MetricsReport:
    abs_rel: float
    log10: float
    rms: float
    acc_1: float
    acc_2: float
    acc_3: float
    n_pixels: int

    def to_dict(self) -> dict:
        """Keys follow the usual results-table column headers."""
        return {
            "Abs Rel": self.abs_rel,
            "Log10": self.log10,
            "RMS": self.rms,
            "delta<1.25": self.acc_1,
            "delta<1.25^2": self.acc_2,
            "delta<1.25^3": self.acc_3,
            "n_pixels": self.n_pixels,
        }


def lower_median(a: np.ndarray) -> float:
    """Median; for an even count the lower of the two middle values."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    if a.size == 0:
        raise ContractViolation("median of an empty set")
    return float(a[(a.size - 1) // 2])


def scale_exact(d: np.ndarray, num: float, den: float) -> np.ndarray:
    """``d * num / den`` rounded once from the exact rational value.

    The result depends only on the real quotient, so rescaling ``d`` and
    ``den`` by a common factor (when those products are exact) leaves it
    bitwise unchanged, and ``num == den`` returns ``d`` itself.
    """
    nn, nd = float(num).as_integer_ratio()
    dn, dd = float(den).as_integer_ratio()
    A, B = nn * dd, nd * dn
    # int / int true division is correctly rounded
    out = [(p * A) / (q * B) for p, q in map(float.as_integer_ratio, np.asarray(d, dtype=np.float64).tolist())]
    return np.array(out, dtype=np.float64).reshape(np.shape(d))


def evaluate(pred: DepthMap | np.ndarray, gt: DepthMap | np.ndarray, median_scale: bool = True,
             cap: float = 10.0) -> MetricsReport:
    """Compare a predicted depth map against ground truth.

    Valid pixels have ``0 < gt <= cap`` and a valid prediction. With
    ``median_scale`` the prediction is rescaled to
    ``pred * median(gt) / median(pred)`` with a single rounding (see
    :func:`scale_exact`), so an exactly representable rescaling of the
    input cancels bit for bit. The prediction is then capped at ``cap``.
    """
    p = pred if isinstance(pred, DepthMap) else DepthMap(pred)
    g = gt if isinstance(gt, DepthMap) else DepthMap(gt)
    if p.shape != g.shape:
        raise ContractViolation(f"shape mismatch {p.shape} vs {g.shape}")
    mask = g.valid & (g.data <= cap) & p.valid
    if not mask.any():
        raise ContractViolation("no valid ground-truth pixel")
    d = p.data[mask]
    d_star = g.data[mask]
    if median_scale:
        med = lower_median(d)
        if med == 0:
            raise ContractViolation("median of prediction is zero")
        d = scale_exact(d, lower_median(d_star), med)
    d = np.minimum(d, cap)
    ratio = np.maximum(d / d_star, d_star / d)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(d - d_star) / d_star)),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(d_star)))),
        rms=float(np.sqrt(np.mean((d - d_star) ** 2))),
        acc_1=float(np.mean(ratio < THRESHOLDS[0])),
        acc_2=float(np.mean(ratio < THRESHOLDS[1])),
        acc_3=float(np.mean(ratio < THRESHOLDS[2])),
        n_pixels=int(mask.sum()),
    )
