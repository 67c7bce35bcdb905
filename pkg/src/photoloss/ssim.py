"""Structural similarity: plain SSIM and the k-scaled SSIM' variant.

SSIM' evaluates the luminance and contrast-structure terms on the
statistics of ``k*I_x`` and ``k*I_y`` while keeping the stabilising
constants at the values of the *original* dynamic range::

    C1 = (M1 * L)**2,  C2 = (M2 * L)**2

The scaled statistics are derived analytically (``mu -> k*mu``,
``sigma^2 -> k^2*sigma^2``) so 8-bit inputs never need to be materialised
at ``k*L``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .imaging import ImagePlane, WindowSpec, WindowStats, window_stats

__all__ = [
    "SsimConfig",
    "SimilarityMap",
    "similarity_from_stats",
    "ssim_map",
    "ssim_prime_map",
    "similarity_map",
    "ssim_scale_invariance_check",
    "ssim_loss",
    "AblationLosses",
    "ablation_losses",
    "index_band_fractions",
]


@dataclass(frozen=True)
class SsimConfig:
    """Constants and window for SSIM / SSIM'.

    ``k == 1`` reproduces plain SSIM; the default ``k = 5`` is the SSIM'
    setting used for training.
    """

    M1: float = 0.01
    M2: float = 0.03
    L: float = 1.0
    k: float = 5.0
    window: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        if not (self.M1 > 0 and self.M2 > 0 and self.L > 0):
            raise ContractViolation("M1, M2 and L must be positive")
        if not self.k >= 1:
            raise ContractViolation(f"k must be >= 1, got {self.k}")

    @property
    def C1(self) -> float:
        return (self.M1 * self.L) ** 2

    @property
    def C2(self) -> float:
        return (self.M2 * self.L) ** 2

    def with_k(self, k: float) -> SsimConfig:
        return replace(self, k=k)

    def to_dict(self) -> dict:
        return {"M1": self.M1, "M2": self.M2, "L": self.L, "k": self.k, "window": self.window.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> SsimConfig:
        d = dict(d)
        if "window" in d:
            d["window"] = WindowSpec(**d["window"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimilarityMap:
    """Per-pixel, per-channel index with its two factors (``index = l * cs``)."""

    index: np.ndarray
    luminance: np.ndarray
    contrast_structure: np.ndarray

    @property
    def channel_mean(self) -> np.ndarray:
        """HxW index averaged over channels."""
        return self.index.mean(axis=2)

    def mean(self) -> float:
        if self.index.size == 0:
            raise ContractViolation("empty similarity map")
        return float(self.index.mean())


def similarity_from_stats(stats: WindowStats, C1: float, C2: float, k: float = 1.0) -> SimilarityMap:
    """Evaluate ``l * cs`` from window statistics of ``k*I`` with fixed C1, C2."""
    s = stats if k == 1.0 else stats.scaled(k)
    lum = (2 * s.mu_x * s.mu_y + C1) / (s.mu_x**2 + s.mu_y**2 + C1)
    cs = (2 * s.sigma_xy + C2) / (s.sigma_x2 + s.sigma_y2 + C2)
    return SimilarityMap(lum * cs, lum, cs)


def _check_pair(I_x: ImagePlane, I_y: ImagePlane, cfg: SsimConfig):
    if I_x.shape != I_y.shape:
        raise ContractViolation(f"shape mismatch {I_x.shape} vs {I_y.shape}")
    if I_x.dynamic_range != I_y.dynamic_range:
        raise ContractViolation("dynamic ranges differ")
    if I_x.dynamic_range != cfg.L:
        raise ContractViolation(f"config L={cfg.L} does not match image range {I_x.dynamic_range}")


def ssim_map(I_x: ImagePlane, I_y: ImagePlane, cfg: SsimConfig) -> SimilarityMap:
    """Plain SSIM; ``cfg.k`` must be exactly 1."""
    if cfg.k != 1:
        raise ContractViolation("ssim_map requires k == 1; use ssim_prime_map")
    _check_pair(I_x, I_y, cfg)
    return similarity_from_stats(window_stats(I_x, I_y, cfg.window), cfg.C1, cfg.C2)


def ssim_prime_map(I_x: ImagePlane, I_y: ImagePlane, cfg: SsimConfig) -> SimilarityMap:
    """SSIM' with ``cfg.k > 1``."""
    if not cfg.k > 1:
        raise ContractViolation(f"ssim_prime_map requires k > 1, got {cfg.k}")
    _check_pair(I_x, I_y, cfg)
    return similarity_from_stats(window_stats(I_x, I_y, cfg.window), cfg.C1, cfg.C2, cfg.k)


def similarity_map(I_x: ImagePlane, I_y: ImagePlane, cfg: SsimConfig) -> SimilarityMap:
    """Dispatch to SSIM (k == 1) or SSIM' (k > 1)."""
    return ssim_map(I_x, I_y, cfg) if cfg.k == 1 else ssim_prime_map(I_x, I_y, cfg)


def ssim_scale_invariance_check(I_x: ImagePlane, I_y: ImagePlane, k: float, cfg: SsimConfig) -> float:
    """Max pointwise |SSIM(I_x, I_y) - SSIM(k I_x, k I_y)|.

    The scaled images are materialised and their constants follow ``k*L``,
    so this is an independent evaluation path from SSIM'.
    """
    if not k > 0:
        raise ContractViolation("k must be positive")
    base = ssim_map(I_x, I_y, cfg.with_k(1.0))
    if k == 1:
        return 0.0
    sx, sy = I_x.scaled(k), I_y.scaled(k)
    scaled = ssim_map(sx, sy, replace(cfg, L=cfg.L * k, k=1.0))
    return float(np.max(np.abs(base.index - scaled.index)))


def ssim_loss(smap: SimilarityMap, alpha: float = 0.85) -> float:
    """``(alpha/2) * (1 - mean index)``."""
    if not 0 < alpha <= 1:
        raise ContractViolation("alpha must lie in (0, 1]")
    return alpha / 2 * (1 - smap.mean())


@dataclass(frozen=True)
class AblationLosses:
    offset: float  # method 1: index shifted down by epsilon
    scaled: float  # method 2: index multiplied by rho
    reweighted: float  # method 3: alpha replaced by tau
    base: float
    # closed forms of the first two in terms of the base loss
    offset_decomposed: float
    scaled_decomposed: float


def ablation_losses(smap: SimilarityMap, alpha: float, epsilon: float, rho: float, tau: float) -> AblationLosses:
    """The three naive ways of inflating the SSIM loss, with their decompositions.

    ``offset == base + alpha*epsilon/2`` (a constant shift, no training
    effect) and ``scaled == (alpha/2)(1-rho) + rho*base`` (a shrunk SSIM
    term plus a constant).
    """
    if not 0 < epsilon < 1:
        raise ContractViolation("epsilon must lie in (0, 1)")
    if not 0 < rho < 1:
        raise ContractViolation("rho must lie in (0, 1)")
    if not tau >= alpha:
        raise ContractViolation("tau must be >= alpha")
    m = smap.mean()
    base = ssim_loss(smap, alpha)
    return AblationLosses(
        offset=alpha / 2 * (1 - (m - epsilon)),
        scaled=alpha / 2 * (1 - rho * m),
        reweighted=tau / 2 * (1 - m),
        base=base,
        offset_decomposed=base + alpha * epsilon / 2,
        scaled_decomposed=alpha / 2 * (1 - rho) + rho * base,
    )


def index_band_fractions(smap: SimilarityMap, lower_bound: float, upper_bound: float) -> tuple[float, float]:
    """Fractions of indexes in ``[upper_bound, 1]`` and in ``[-1, lower_bound]``.

    The bounds have no canonical values and must be supplied by the caller.
    """
    if not -1 <= lower_bound < upper_bound <= 1:
        raise ContractViolation("need -1 <= lower_bound < upper_bound <= 1")
    idx = smap.index
    if idx.size == 0:
        raise ContractViolation("empty similarity map")
    return float(np.mean(idx >= upper_bound)), float(np.mean(idx <= lower_bound))
