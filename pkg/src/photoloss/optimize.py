"""Gradients of the photometric objective and a plain gradient-descent fitter.

The objective is the (multi-source, per-pixel minimum) photometric loss of
a target view against warped source views. Free variables are one of

* ``inv_depth`` -- per-pixel inverse depth, HxW
* ``coeffs``    -- per-pixel planar coefficients, HxWx3
* ``pose``      -- one 6-vector ``(axis_angle, translation)`` per source,
  with the rotation taken about a pivot point ``c`` on the optical axis:
  ``X -> R (X - c) + c + t'``. Pivoting at scene depth decouples rotation
  from translation, which keeps plain descent well conditioned.

The analytic gradient is a hand-written reverse sweep through SSIM window
statistics, bilinear sampling, projection and depth. Validity masks are
treated as constants. A pixel enters the objective only when every
sample in its SSIM window is valid, so out-of-bounds zeros never leak into
neighbouring windows. At integer sample coordinates the bilinear
subgradient of the left cell is used.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation
from .geometry import (
    DEPTH_MAX,
    DEPTH_MIN,
    MIN_PROJECTIVE_DEPTH,
    CameraIntrinsics,
    RigidPose,
    bilinear_sample,
    so3_exp,
    so3_left_jacobian,
    so3_log,
)
from .imaging import (
    DepthMap,
    ImagePlane,
    WindowStats,
    window_filter_adjoint,
    window_stats,
    window_support_mask,
)
from .losses import LossWeights, min_reprojection_reduce
from .ssim import SsimConfig, similarity_from_stats

log = logging.getLogger(__name__)

__all__ = [
    "VARIABLES",
    "FitProblem",
    "objective",
    "objective_and_gradient",
    "analytic_gradient",
    "central_differences",
    "finite_diff_gradient",
    "FitResult",
    "fit",
    "write_trajectory_csv",
    "TRAJECTORY_COLUMNS",
]

VARIABLES = ("inv_depth", "coeffs", "pose")
TRAJECTORY_COLUMNS = ("iter", "loss", "depth_abs_rel", "pose_rot_deg", "pose_trans_m")
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Everything needed to evaluate and minimise the photometric objective.

    ``inv_depth`` / ``coeffs`` / ``poses`` hold the starting point of the
    free variable and the fixed values of the others. ``mask`` is a fixed
    HxW region of interest ANDed with warp validity. ``gt_depth`` and
    ``gt_poses`` are only used for error reporting.
    """

    target: ImagePlane
    sources: list
    intrinsics: CameraIntrinsics
    poses: list
    variable: str = "inv_depth"
    inv_depth: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    mask: np.ndarray | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    ssim: SsimConfig = field(default_factory=SsimConfig)
    reduction: str = "min"
    step_size: float = 1.0
    iterations: int = 500
    halving: bool = True
    gradient_mode: str = "analytic"
    fd_step: float = 1e-6
    pose_pivot: object = "median_depth"  # or a 3-vector in the target frame
    seed: int = 0
    gt_depth: DepthMap | None = None
    gt_poses: list | None = None

    def __post_init__(self):
        if self.variable not in VARIABLES:
            raise ContractViolation(f"unknown variable {self.variable!r}")
        if len(self.sources) != len(self.poses) or not self.sources:
            raise ContractViolation("need one pose per source image")
        h, w = self.target.shape[:2]
        for s in self.sources:
            if s.shape != self.target.shape:
                raise ContractViolation("source and target images differ in shape")
        if self.variable == "coeffs":
            if self.coeffs is None or np.shape(self.coeffs) != (h, w, 3):
                raise ContractViolation("coeffs variable needs an HxWx3 starting point")
        elif self.inv_depth is None or np.shape(self.inv_depth) != (h, w):
            raise ContractViolation("an HxW inverse depth is required")
        if self.mask is not None and np.shape(self.mask) != (h, w):
            raise ContractViolation("mask must be HxW")
        if self.ssim.L != self.target.dynamic_range:
            raise ContractViolation("SSIM range does not match the images")
        if self.gradient_mode not in ("analytic", "finite_difference"):
            raise ContractViolation(f"unknown gradient mode {self.gradient_mode!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.target.shape[:2]

    @property
    def pivot(self) -> np.ndarray:
        if isinstance(self.pose_pivot, str):
            if self.pose_pivot != "median_depth":
                raise ContractViolation(f"unknown pose pivot {self.pose_pivot!r}")
            inv = np.asarray(self.inv_depth, dtype=np.float64)
            pos = inv[inv > 0]
            z = float(np.median(1.0 / pos)) if pos.size else 0.0
            return np.array([0.0, 0.0, z])
        return np.asarray(self.pose_pivot, dtype=np.float64).reshape(3)

    def initial_vector(self) -> np.ndarray:
        if self.variable == "inv_depth":
            return np.array(self.inv_depth, dtype=np.float64).ravel()
        if self.variable == "coeffs":
            return np.array(self.coeffs, dtype=np.float64).ravel()
        c = self.pivot
        return np.concatenate([
            np.concatenate([so3_log(p.rotation), p.translation - c + p.rotation @ c]) for p in self.poses
        ])

    def unpack(self, x: np.ndarray):
        """Return ``(inverse depth HxW, list of poses)`` at point ``x``."""
        h, w = self.shape
        x = np.asarray(x, dtype=np.float64)
        if self.variable == "inv_depth":
            return x.reshape(h, w), list(self.poses)
        if self.variable == "coeffs":
            co = x.reshape(h, w, 3)
            return np.einsum("hwc,hwc->hw", co, self.intrinsics.rays(h, w)), list(self.poses)
        c = self.pivot
        poses = []
        for v in x.reshape(-1, 6):
            R = so3_exp(v[:3])
            poses.append(RigidPose(R, v[3:] + c - R @ c))
        return np.asarray(self.inv_depth, dtype=np.float64), poses

    def depth_at(self, x: np.ndarray) -> DepthMap:
        inv, _ = self.unpack(x)
        pos = inv > 0
        d = np.where(pos, 1.0 / np.where(pos, inv, 1.0), 0.0)
        return DepthMap(np.where(pos, np.clip(d, DEPTH_MIN, DEPTH_MAX), 0.0), pos)


def _ssim_partials(st: WindowStats, C1: float, C2: float):
    """d index / d (mu_y, sigma_y^2, sigma_xy) for the per-pixel SSIM with constants C1, C2."""
    A = 2 * st.mu_x * st.mu_y + C1
    B = st.mu_x**2 + st.mu_y**2 + C1
    Cn = 2 * st.sigma_xy + C2
    Cd = st.sigma_x2 + st.sigma_y2 + C2
    lum, cs = A / B, Cn / Cd
    d_mu = cs * (2 * st.mu_x * B - 2 * st.mu_y * A) / B**2
    d_var = -lum * Cn / Cd**2
    d_cov = lum * 2 / Cd
    return d_mu, d_var, d_cov


class _Eval:
    """Forward pass for one point; keeps what the reverse sweep needs."""

    def __init__(self, p: FitProblem, x: np.ndarray):
        self.p = p
        h, w = p.shape
        K = p.intrinsics
        self.rays = K.rays(h, w)
        self.inv, self.poses = p.unpack(x)
        inv = self.inv
        self.pos = inv > 0
        safe = np.where(self.pos, inv, 1.0)
        d_raw = 1.0 / safe
        self.depth = np.where(self.pos, np.clip(d_raw, DEPTH_MIN, DEPTH_MAX), 0.0)
        self.in_range = self.pos & (d_raw > DEPTH_MIN) & (d_raw < DEPTH_MAX)
        X = self.depth[..., None] * self.rays
        self.X = X
        cfg = p.ssim
        alpha = p.weights.alpha
        x_img = p.target.data
        C = x_img.shape[2]
        self.per_source = []
        rho, masks = [], []
        for src, T in zip(p.sources, self.poses):
            Y = T.apply(X)
            z = Y[..., 2]
            ok = self.pos & (z > MIN_PROJECTIVE_DEPTH)
            zs = np.where(ok, z, 1.0)
            u = K.fx * Y[..., 0] / zs + K.cx
            v = K.fy * Y[..., 1] / zs + K.cy
            smp = bilinear_sample(src.data, u, v, ok)
            S = smp.values
            st = window_stats(x_img, S, cfg.window)
            idx = similarity_from_stats(st, cfg.C1, cfg.C2, cfg.k).index
            diff = S - x_img
            r = (alpha / 2 * (1 - idx) + (1 - alpha) * np.abs(diff)).mean(axis=2)
            rho.append(r)
            m = window_support_mask(smp.valid, cfg.window)
            masks.append(m if p.mask is None else m & p.mask)
            self.per_source.append((T, Y, zs, smp, st, diff))
        self.loss, self.choice, self.mask = min_reprojection_reduce(rho, masks, p.reduction)
        self.channels = C
        self.masks = masks

    def gradient(self) -> np.ndarray:
        p = self.p
        K = p.intrinsics
        cfg = p.ssim
        alpha = p.weights.alpha
        C = self.channels
        x_img = p.target.data
        n = self.mask.sum()
        k2 = cfg.k**2
        g_depth = np.zeros(p.shape)
        pose_grads = []
        for s, (T, Y, zs, smp, st, diff) in enumerate(self.per_source):
            if p.reduction == "min":
                sel = self.mask & (self.choice == s)
                g_rho = sel / n
            else:
                cnt = np.maximum(np.sum(self.masks, axis=0), 1)
                g_rho = (self.masks[s] & self.mask) / cnt / n
            g_rho = g_rho[..., None]
            g_idx = -(alpha / 2) / C * g_rho
            d_mu, d_var, d_cov = _ssim_partials(st, cfg.C1 / k2, cfg.C2 / k2)
            g_mu, g_var, g_cov = g_idx * d_mu, g_idx * d_var, g_idx * d_cov
            S = smp.values
            adj = lambda a: window_filter_adjoint(a, cfg.window)
            g_S = adj(g_mu)
            g_S += 2 * (S * adj(g_var) - adj(g_var * st.mu_y))
            g_S += x_img * adj(g_cov) - adj(g_cov * st.mu_x)
            g_S += (1 - alpha) / C * np.sign(diff) * g_rho
            g_S *= smp.valid[..., None]
            g_u = (g_S * smp.du).sum(axis=2)
            g_v = (g_S * smp.dv).sum(axis=2)
            g_Y = np.stack(
                [g_u * K.fx / zs, g_v * K.fy / zs, -(g_u * K.fx * Y[..., 0] + g_v * K.fy * Y[..., 1]) / zs**2],
                axis=-1,
            )
            R = T.rotation
            g_depth += np.einsum("hwc,hwc->hw", g_Y, self.rays @ R.T)
            if p.variable == "pose":
                # rotation acts about the pivot: Y = R (X - c) + c + t'
                RXc = (self.X - p.pivot) @ R.T
                J = so3_left_jacobian(so3_log(R))
                g_rot = J.T @ np.cross(RXc, g_Y).reshape(-1, 3).sum(axis=0)
                pose_grads.append(np.concatenate([g_rot, g_Y.reshape(-1, 3).sum(axis=0)]))
        if p.variable == "pose":
            return np.concatenate(pose_grads)
        safe = np.where(self.pos, self.inv, 1.0)
        g_inv = np.where(self.in_range, -g_depth / safe**2, 0.0)
        if p.variable == "inv_depth":
            return g_inv.ravel()
        return (g_inv[..., None] * self.rays).ravel()


def objective(problem: FitProblem, x: np.ndarray | None = None) -> float:
    if x is None:
        x = problem.initial_vector()
    return _Eval(problem, x).loss


def objective_and_gradient(problem: FitProblem, x: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    if x is None:
        x = problem.initial_vector()
    ev = _Eval(problem, x)
    return ev.loss, ev.gradient()


def analytic_gradient(problem: FitProblem, x: np.ndarray | None = None) -> np.ndarray:
    """Exact derivative of :func:`objective` (masks held fixed)."""
    return objective_and_gradient(problem, x)[1]


def central_differences(f, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for a scalar function ``f`` at ``indices``
    (all coordinates when ``None``)."""
    if not h > 0:
        raise ContractViolation("finite-difference step must be positive")
    x0 = np.array(x, dtype=np.float64)
    if not math.isfinite(f(x0)):
        raise ContractViolation("objective is not finite at the base point")
    idx = np.arange(x0.size) if indices is None else np.asarray(indices, dtype=np.int64)
    g = np.empty(idx.size)
    for j, i in enumerate(idx):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ContractViolation(f"objective not finite around variable {i}")
        g[j] = (fp - fm) / (2 * h)
    return g


def finite_diff_gradient(problem: FitProblem, h: float = 1e-6, indices=None,
                         x: np.ndarray | None = None) -> np.ndarray:
    """Central-difference gradient of :func:`objective` at ``indices``
    (all variables when ``None``)."""
    x0 = problem.initial_vector() if x is None else x
    return central_differences(lambda v: objective(problem, v), x0, h, indices)


# --------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    x: np.ndarray
    trajectory: list  # dict rows keyed by TRAJECTORY_COLUMNS
    status: str  # "converged" (ran all iterations) or "diverged"
    final_depth_median_rel: float = float("nan")
    message: str = ""

    @property
    def final(self) -> dict:
        return self.trajectory[-1]


def _errors(problem: FitProblem, x: np.ndarray) -> tuple[float, float, float, float]:
    """(depth abs-rel, depth median rel, rotation error deg, translation error m)."""
    abs_rel = med_rel = rot = trans = float("nan")
    if problem.gt_depth is not None:
        est = problem.depth_at(x)
        m = problem.gt_depth.valid & est.valid
        rel = np.abs(est.data[m] - problem.gt_depth.data[m]) / problem.gt_depth.data[m]
        abs_rel, med_rel = float(rel.mean()), float(np.median(rel))
    if problem.gt_poses is not None:
        _, poses = problem.unpack(x)
        rots, trs = [], []
        for est, gt in zip(poses, problem.gt_poses):
            dR = est.rotation @ gt.rotation.T
            rots.append(math.degrees(RigidPose(dR, np.zeros(3)).rotation_angle()))
            trs.append(float(np.linalg.norm(est.translation - gt.translation)))
        rot, trans = max(rots), max(trs)
    return abs_rel, med_rel, rot, trans


def fit(problem: FitProblem) -> FitResult:
    """Gradient descent with a fixed step, halved whenever a step would raise the loss.

    Every attempted step counts as an iteration. Deterministic for a given
    problem; single-threaded runs are bitwise reproducible.
    """
    x = problem.initial_vector()

    def grad_at(x):
        if problem.gradient_mode == "analytic":
            return objective_and_gradient(problem, x)
        return objective(problem, x), finite_diff_gradient(problem, problem.fd_step, x=x)

    def trial(x):
        try:
            return objective(problem, x)
        except ContractViolation:  # e.g. every pixel warped out of view
            return math.inf

    loss, g = grad_at(x)
    step = problem.step_size
    rows = []

    def record(it, loss):
        abs_rel, _, rot, trans = _errors(problem, x)
        rows.append(dict(zip(TRAJECTORY_COLUMNS, (it, loss, abs_rel, rot, trans))))

    record(0, loss)
    status, message = "converged", ""
    for it in range(1, problem.iterations + 1):
        cand = x - step * g
        cand_loss = trial(cand)
        if not math.isfinite(cand_loss) or cand_loss > DIVERGENCE_LOSS:
            if problem.halving and math.isfinite(loss):
                step /= 2
                record(it, loss)
                continue
            status, message = "diverged", f"loss {cand_loss} at iteration {it}"
            log.warning("fit diverged: %s", message)
            x = cand
            record(it, cand_loss)
            break
        if problem.halving and cand_loss > loss:
            step /= 2
        else:
            x = cand
            loss, g = grad_at(x)
        record(it, loss)
    _, med_rel, _, _ = _errors(problem, x)
    return FitResult(x, rows, status, med_rel, message)


def write_trajectory_csv(path, result: FitResult) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(TRAJECTORY_COLUMNS)
        for row in result.trajectory:
            wr.writerow([row["iter"]] + [format(row[c], ".17g") for c in TRAJECTORY_COLUMNS[1:]])
