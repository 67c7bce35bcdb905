"""Photometric, smoothness and plane/line consistency losses.

Per-pixel photometric error (channel-averaged)::

    rho = (alpha/2) * (1 - SSIM_k(I_t, I_s)) + (1 - alpha) * |I_t - I_s|

With ``k > 1`` the SSIM term is SSIM'. Reductions are means over valid
pixels; ``numpy`` sums use pairwise summation, so results do not depend
on how work is split.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .geometry import CameraIntrinsics, DepthMap, PlanarCoeffs, backproject
from .imaging import ImagePlane
from .ssim import SsimConfig, similarity_map

__all__ = [
    "LossWeights",
    "PhotometricResult",
    "photometric_loss",
    "min_reprojection_reduce",
    "multi_source_photometric",
    "image_gradients",
    "smoothness_loss",
    "plane_consistency_loss",
    "line_consistency_loss",
    "SampleSets",
    "sample_plane_sets",
    "sample_line_sets",
    "segment_lattice_points",
    "LossReport",
    "stage_weights_for",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.85
    beta: float = 1.0
    alpha_sm: float = 0.2
    alpha_pc: float = 2.0
    alpha_lc: float = 0.5
    stage_weights: tuple | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ContractViolation("alpha must lie in (0, 1]")
        vals = [self.beta, self.alpha_sm, self.alpha_pc, self.alpha_lc, *(self.stage_weights or ())]
        if any(w < 0 for w in vals):
            raise ContractViolation("loss weights must be non-negative")
        if self.stage_weights is not None:
            object.__setattr__(self, "stage_weights", tuple(float(w) for w in self.stage_weights))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_weights"] = list(self.stage_weights) if self.stage_weights is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LossWeights:
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PhotometricResult:
    loss: float
    ssim_part: float
    l1_part: float
    per_pixel: np.ndarray  # HxW
    ssim_per_pixel: np.ndarray
    l1_per_pixel: np.ndarray
    mask: np.ndarray


def _masked_mean(a: np.ndarray, mask: np.ndarray) -> float:
    return float(a[mask].sum() / mask.sum())


def photometric_loss(I_t: ImagePlane, I_synth: ImagePlane, mask: np.ndarray | None = None,
                     alpha: float = 0.85, ssim_cfg: SsimConfig | None = None) -> PhotometricResult:
    """Weighted SSIM + L1 error averaged over ``mask``."""
    if ssim_cfg is None:
        ssim_cfg = SsimConfig(L=I_t.dynamic_range)
    if I_t.shape != I_synth.shape:
        raise ContractViolation("target and synthesized views differ in shape")
    if not 0 < alpha <= 1:
        raise ContractViolation("alpha must lie in (0, 1]")
    if mask is None:
        mask = np.ones(I_t.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractViolation("photometric loss over an empty mask")
    smap = similarity_map(I_t, I_synth, ssim_cfg)
    ssim_pp = alpha / 2 * (1 - smap.index).mean(axis=2)
    l1_pp = (1 - alpha) * np.abs(I_t.data - I_synth.data).mean(axis=2)
    pp = ssim_pp + l1_pp
    return PhotometricResult(
        loss=_masked_mean(pp, mask),
        ssim_part=_masked_mean(ssim_pp, mask),
        l1_part=_masked_mean(l1_pp, mask),
        per_pixel=pp,
        ssim_per_pixel=ssim_pp,
        l1_per_pixel=l1_pp,
        mask=mask,
    )


def min_reprojection_reduce(per_source_losses, masks, reduction: str = "min"):
    """Combine per-source per-pixel losses.

    ``"min"`` takes the per-pixel minimum over the sources valid at that
    pixel, ``"mean"`` their average. Pixels without any valid source are
    dropped. Returns ``(scalar, per-pixel choice index, combined mask)``.
    """
    losses = np.stack([np.asarray(l, dtype=np.float64) for l in per_source_losses])
    ms = np.stack([np.asarray(m, dtype=bool) for m in masks])
    if losses.shape[0] == 0:
        raise ContractViolation("need at least one source")
    if losses.shape != ms.shape:
        raise ContractViolation("loss and mask rasters differ in shape")
    any_valid = ms.any(axis=0)
    if not any_valid.any():
        raise ContractViolation("no valid pixel in any source")
    if reduction == "min":
        masked = np.where(ms, losses, np.inf)
        choice = np.argmin(masked, axis=0)
        combined = np.take_along_axis(masked, choice[None], axis=0)[0]
    elif reduction == "mean":
        choice = np.zeros(any_valid.shape, dtype=np.int64)
        combined = np.where(any_valid, (losses * ms).sum(axis=0) / np.maximum(ms.sum(axis=0), 1), 0.0)
    else:
        raise ContractViolation(f"unknown reduction {reduction!r}")
    return _masked_mean(combined, any_valid), choice, any_valid


def multi_source_photometric(I_t: ImagePlane, synths, masks, alpha: float = 0.85,
                             ssim_cfg: SsimConfig | None = None, reduction: str = "min") -> PhotometricResult:
    """Photometric loss against several synthesized views, reduced per pixel.

    The SSIM and L1 components are taken from the source selected at each
    pixel, so they still add up to the reduced loss.
    """
    synths, masks = list(synths), list(masks)
    if len(synths) == 1:
        return photometric_loss(I_t, synths[0], masks[0], alpha, ssim_cfg)
    # per-pixel rasters only; masking happens in the reduction
    results = [photometric_loss(I_t, s, None, alpha, ssim_cfg) for s in synths]
    loss, choice, mask = min_reprojection_reduce([r.per_pixel for r in results], masks, reduction)
    if reduction == "min":
        pick = lambda name: np.take_along_axis(np.stack([getattr(r, name) for r in results]), choice[None], 0)[0]
        ssim_pp, l1_pp = pick("ssim_per_pixel"), pick("l1_per_pixel")
    else:
        ms = np.stack(masks).astype(np.float64)
        n = np.maximum(ms.sum(axis=0), 1)
        ssim_pp = (np.stack([r.ssim_per_pixel for r in results]) * ms).sum(axis=0) / n
        l1_pp = (np.stack([r.l1_per_pixel for r in results]) * ms).sum(axis=0) / n
    return PhotometricResult(loss, _masked_mean(ssim_pp, mask), _masked_mean(l1_pp, mask),
                             ssim_pp + l1_pp, ssim_pp, l1_pp, mask)


def image_gradients(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along columns (u) and rows (v); the last column/row is dropped."""
    return a[:, 1:] - a[:, :-1], a[1:, :] - a[:-1, :]


def smoothness_loss(co: PlanarCoeffs, I_t: ImagePlane, skip_zero_channels: bool = False) -> float:
    """Edge-aware smoothness of absolute-mean-normalized planar coefficients.

    Each coefficient channel is divided by the mean of its absolute value,
    which makes the loss invariant to a positive rescaling of ``co``. A
    channel with zero mean magnitude cannot be normalized and raises,
    unless ``skip_zero_channels`` is set (an identically zero channel then
    contributes nothing).
    """
    if co.shape != I_t.shape[:2]:
        raise ContractViolation("coefficients and image differ in shape")
    gu_img, gv_img = image_gradients(I_t.data)
    wu = np.exp(-np.abs(gu_img).mean(axis=2))
    wv = np.exp(-np.abs(gv_img).mean(axis=2))
    total = 0.0
    for i in range(3):
        c = co.data[:, :, i]
        scale = np.abs(c).mean()
        if scale == 0:
            if skip_zero_channels and not c.any():
                continue
            raise ContractViolation(f"coefficient channel {i} has zero mean magnitude")
        gu, gv = image_gradients(c / scale)
        total += float((np.abs(gu) * wu).mean() + (np.abs(gv) * wv).mean())
    return total


def plane_consistency_loss(points: np.ndarray) -> float:
    """Mean ``|(AB x AC) . AD|`` over ``(N, 4, 3)`` point quadruples."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[1:] != (4, 3):
        raise ContractViolation("plane sets must have shape (N, 4, 3)")
    if pts.shape[0] == 0:
        raise ContractViolation("no plane sets")
    A = pts[:, 0]
    ab, ac, ad = pts[:, 1] - A, pts[:, 2] - A, pts[:, 3] - A
    return float(np.abs(np.einsum("ni,ni->n", np.cross(ab, ac), ad)).mean())


def line_consistency_loss(points: np.ndarray) -> float:
    """Mean ``||EF x EG||`` over ``(N, 3, 3)`` point triples."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[1:] != (3, 3):
        raise ContractViolation("line sets must have shape (N, 3, 3)")
    if pts.shape[0] == 0:
        raise ContractViolation("no line sets")
    E = pts[:, 0]
    return float(np.linalg.norm(np.cross(pts[:, 1] - E, pts[:, 2] - E), axis=1).mean())


@dataclass(frozen=True, eq=False)
class SampleSets:
    """Pixel index sets, each entry a ``(row, col)`` pair.

    ``plane_sets``: (N_p, 4, 2); ``line_sets``: (N_l, 3, 2).
    """

    plane_sets: np.ndarray = field(default_factory=lambda: np.zeros((0, 4, 2), dtype=np.int64))
    line_sets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 2), dtype=np.int64))

    def check_bounds(self, height: int, width: int) -> None:
        for s in (self.plane_sets, self.line_sets):
            if s.size and (s.min() < 0 or s[..., 0].max() >= height or s[..., 1].max() >= width):
                raise ContractViolation("sample index out of bounds")

    def plane_points(self, depth: DepthMap, K: CameraIntrinsics) -> np.ndarray:
        return backproject(depth, K, self.plane_sets)

    def line_points(self, depth: DepthMap, K: CameraIntrinsics) -> np.ndarray:
        return backproject(depth, K, self.line_sets)


def sample_plane_sets(labels: np.ndarray, n_per_plane: int, rng: np.random.Generator) -> np.ndarray:
    """Draw 4-pixel sets, each from a single non-zero label of ``labels``."""
    sets = []
    for lab in np.unique(labels):
        if lab == 0:
            continue
        rows, cols = np.nonzero(labels == lab)
        if rows.size < 4:
            continue
        for _ in range(n_per_plane):
            pick = rng.choice(rows.size, size=4, replace=False)
            sets.append(np.stack([rows[pick], cols[pick]], axis=-1))
    if not sets:
        return np.zeros((0, 4, 2), dtype=np.int64)
    return np.asarray(sets, dtype=np.int64)


def segment_lattice_points(p0, p1) -> np.ndarray:
    """Integer pixels exactly on the segment between two integer ``(row, col)`` endpoints."""
    p0 = np.asarray(p0, dtype=np.int64)
    p1 = np.asarray(p1, dtype=np.int64)
    d = p1 - p0
    g = int(np.gcd(abs(int(d[0])), abs(int(d[1]))))
    if g == 0:
        return p0[None]
    step = d // g
    return p0 + np.arange(g + 1)[:, None] * step


def sample_line_sets(segments, n_per_segment: int, rng: np.random.Generator) -> np.ndarray:
    """Draw 3-pixel sets from the lattice points of each segment.

    ``segments`` is a sequence of ``((r0, c0), (r1, c1))`` integer endpoints.
    Sampled pixels are exactly collinear in the image.
    """
    sets = []
    for p0, p1 in segments:
        pts = segment_lattice_points(p0, p1)
        if len(pts) < 3:
            continue
        for _ in range(n_per_segment):
            pick = np.sort(rng.choice(len(pts), size=3, replace=False))
            sets.append(pts[pick])
    if not sets:
        return np.zeros((0, 3, 2), dtype=np.int64)
    return np.asarray(sets, dtype=np.int64)


@dataclass(frozen=True)
class LossReport:
    l_ph: tuple  # per-stage photometric losses
    l_ssim: tuple  # per-stage SSIM components
    l1: tuple  # per-stage L1 components
    stage_weights: tuple
    l_sm: float
    l_pc: float
    l_lc: float
    weights: LossWeights
    total: float

    def recompute_total(self) -> float:
        w = self.weights
        stages = sum(wi * li for wi, li in zip(self.stage_weights, self.l_ph))
        return stages + w.alpha_sm * self.l_sm + w.alpha_pc * self.l_pc + w.alpha_lc * self.l_lc

    def to_dict(self) -> dict:
        return {
            "l_ph": list(self.l_ph),
            "l_ssim": list(self.l_ssim),
            "l1": list(self.l1),
            "stage_weights": list(self.stage_weights),
            "l_sm": self.l_sm,
            "l_pc": self.l_pc,
            "l_lc": self.l_lc,
            "weights": self.weights.to_dict(),
            "total": self.total,
        }


def stage_weights_for(n_stages: int, weights: LossWeights) -> tuple:
    """Stage weights: explicit ``stage_weights`` if given, else ``(1, beta, beta, ...)``."""
    if weights.stage_weights is not None:
        if len(weights.stage_weights) != n_stages:
            raise ContractViolation(
                f"{len(weights.stage_weights)} stage weights for {n_stages} stage losses"
            )
        return weights.stage_weights
    return (1.0,) + (weights.beta,) * (n_stages - 1)


def total_loss(stage_losses, weights: LossWeights = LossWeights(), l_sm: float = 0.0,
               l_pc: float = 0.0, l_lc: float = 0.0) -> LossReport:
    """Weighted stage sum plus the three regularizers.

    ``stage_losses`` holds floats or :class:`PhotometricResult` values.
    With two stages and default weights this is
    ``L1 + beta*L2 + a_sm*L_sm + a_pc*L_pc + a_lc*L_lc``.
    """
    stage_losses = list(stage_losses)
    if not stage_losses:
        raise ContractViolation("need at least one stage loss")
    l_ph, l_ssim, l1 = [], [], []
    for s in stage_losses:
        if isinstance(s, PhotometricResult):
            l_ph.append(s.loss)
            l_ssim.append(s.ssim_part)
            l1.append(s.l1_part)
        else:
            l_ph.append(float(s))
            l_ssim.append(float("nan"))
            l1.append(float("nan"))
    ws = stage_weights_for(len(l_ph), weights)
    report = LossReport(tuple(l_ph), tuple(l_ssim), tuple(l1), tuple(ws), float(l_sm), float(l_pc),
                        float(l_lc), weights, 0.0)
    return replace(report, total=report.recompute_total())
