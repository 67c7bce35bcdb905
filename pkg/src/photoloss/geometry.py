"""Pinhole camera, rigid poses, plane-coefficient depth and inverse warping.

Pixel convention: ``p = (u, v, 1)`` with ``u`` the column and ``v`` the
row index; integer coordinates are pixel centers. A pose maps points from
the target camera frame into the source camera frame, ``Y = R X + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .imaging import DepthMap, ImagePlane

__all__ = [
    "DEPTH_MIN",
    "DEPTH_MAX",
    "MIN_PROJECTIVE_DEPTH",
    "CameraIntrinsics",
    "RigidPose",
    "PlanarCoeffs",
    "pixel_grid",
    "skew",
    "so3_exp",
    "so3_log",
    "so3_left_jacobian",
    "compose",
    "coeffs_to_inverse_depth",
    "coeffs_to_depth",
    "backproject",
    "WarpCoords",
    "reproject",
    "BilinearSample",
    "bilinear_sample",
    "synthesize_view",
    "StagedResult",
    "staged_synthesis",
]

DEPTH_MIN = 0.1
DEPTH_MAX = 10.0
MIN_PROJECTIVE_DEPTH = 1e-6
BOUNDS_TOL = 1e-9
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractViolation("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def rays(self, height: int, width: int) -> np.ndarray:
        """``K^-1 p`` for every pixel, shape HxWx3 with unit third component."""
        u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


def skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula for an axis-angle 3-vector."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + np.sin(theta) / theta * W + (1 - np.cos(theta)) / theta**2 * W @ W


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    theta = float(np.arccos(cos))
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * vee
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2
        axis = np.sqrt(np.clip(np.diag(B), 0, None))
        i = int(np.argmax(axis))
        axis = B[i] / axis[i]
        axis /= np.linalg.norm(axis)
        return theta * axis
    return theta / (2 * np.sin(theta)) * vee


def so3_left_jacobian(w) -> np.ndarray:
    """``J`` with ``exp(w + d) ~ exp(J d) exp(w)`` for small ``d``."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    return (
        np.eye(3)
        + (1 - np.cos(theta)) / theta**2 * W
        + (theta - np.sin(theta)) / theta**3 * W @ W
    )


def _polar(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True, eq=False)
class RigidPose:
    """SE(3) transform ``X -> R X + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0:
            raise ContractViolation("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis_angle, translation=(0.0, 0.0, 0.0)) -> RigidPose:
        return cls(so3_exp(axis_angle), translation)

    @classmethod
    def from_vector(cls, xi) -> RigidPose:
        """6-vector ``(axis_angle, translation)``."""
        xi = np.asarray(xi, dtype=np.float64)
        return cls(so3_exp(xi[:3]), xi[3:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([so3_log(self.rotation), self.translation])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> RigidPose:
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.rotation.T + self.translation

    def __matmul__(self, other: RigidPose) -> RigidPose:
        return compose(self, other)

    def rotation_angle(self) -> float:
        return float(np.linalg.norm(so3_log(self.rotation)))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.ravel().tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidPose:
        if "axis_angle" in d:
            return cls.from_axis_angle(d["axis_angle"], d.get("translation", (0, 0, 0)))
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3), d["translation"])


def compose(T_a: RigidPose, T_b: RigidPose) -> RigidPose:
    """``T_a o T_b``: apply ``T_b`` first."""
    R = T_a.rotation @ T_b.rotation
    if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
        R = _polar(R)
    return RigidPose(R, T_a.rotation @ T_b.translation + T_a.translation)


@dataclass(frozen=True, eq=False)
class PlanarCoeffs:
    """Per-pixel 3-vector ``co`` with ``1/D = co . K^-1 p``; shape HxWx3."""

    data: np.ndarray

    def __post_init__(self):
        co = np.array(self.data, dtype=np.float64)
        if co.ndim != 3 or co.shape[2] != 3:
            raise ContractViolation(f"planar coefficients must be HxWx3, got {co.shape}")
        co.setflags(write=False)
        object.__setattr__(self, "data", co)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @classmethod
    def from_plane(cls, normal, distance: float, height: int, width: int) -> PlanarCoeffs:
        """Constant coefficients of the camera-frame plane ``n . X = d``."""
        co = np.asarray(normal, dtype=np.float64) / distance
        return cls(np.broadcast_to(co, (height, width, 3)))


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Homogeneous pixel coordinates, shape HxWx3."""
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return np.stack([u, v, np.ones_like(u)], axis=-1)


def coeffs_to_inverse_depth(co: PlanarCoeffs, K: CameraIntrinsics) -> np.ndarray:
    """Unclamped ``co . K^-1 p`` per pixel."""
    h, w = co.shape
    return np.einsum("hwc,hwc->hw", co.data, K.rays(h, w))


def coeffs_to_depth(co: PlanarCoeffs, K: CameraIntrinsics, clamp: bool = True) -> DepthMap:
    """Depth from planar coefficients, clamped to ``[DEPTH_MIN, DEPTH_MAX]``.

    Pixels whose inverse depth is not strictly positive before clamping are
    marked invalid.
    """
    inv = coeffs_to_inverse_depth(co, K)
    valid = inv > 0
    with np.errstate(divide="ignore"):
        depth = np.where(valid, 1.0 / np.where(valid, inv, 1.0), 0.0)
    if clamp:
        depth = np.where(valid, np.clip(depth, DEPTH_MIN, DEPTH_MAX), 0.0)
    return DepthMap(depth, valid)


def backproject(depth: DepthMap, K: CameraIntrinsics, pixels: np.ndarray | None = None) -> np.ndarray:
    """3-D camera-frame points ``D(p) K^-1 p``.

    ``pixels`` is an ``(..., 2)`` integer array of ``(row, col)`` indices;
    without it the whole raster is returned (HxWx3).
    """
    h, w = depth.shape
    rays = K.rays(h, w)
    pts = depth.data[:, :, None] * rays
    if pixels is None:
        return pts
    pixels = np.asarray(pixels)
    return pts[pixels[..., 0], pixels[..., 1]]


@dataclass(frozen=True, eq=False)
class WarpCoords:
    """Source-image sample positions for every target pixel."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    points: np.ndarray  # source-frame 3-D points, HxWx3

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


def _in_bounds(u, v, height, width):
    # coordinates within BOUNDS_TOL of the border count as on it (rounding in projection)
    t = BOUNDS_TOL
    return (u >= -t) & (u <= width - 1 + t) & (v >= -t) & (v <= height - 1 + t)


def reproject(p_t: np.ndarray | None, D_t: DepthMap, T: RigidPose, K: CameraIntrinsics,
              source_shape: tuple[int, int] | None = None) -> WarpCoords:
    """Project target pixels into the source view: ``p' ~ K T D(p) K^-1 p``.

    Pixels with invalid depth, projective depth ``<= 1e-6`` or a projection
    outside the source raster are flagged invalid.
    """
    h, w = D_t.shape
    if p_t is None:
        p_t = pixel_grid(h, w)
    p_t = np.asarray(p_t, dtype=np.float64)
    if p_t.shape != (h, w, 3):
        raise ContractViolation("pixel grid must match the depth raster")
    rays = p_t @ K.inverse.T
    X = D_t.data[:, :, None] * rays
    Y = T.apply(X)
    z = Y[..., 2]
    ok = D_t.valid & (z > MIN_PROJECTIVE_DEPTH)
    zs = np.where(ok, z, 1.0)
    u = K.fx * Y[..., 0] / zs + K.cx
    v = K.fy * Y[..., 1] / zs + K.cy
    if not T.translation.any() and np.array_equal(T.rotation, np.eye(3)):
        # identity pose: the projection round trip is exact in theory, so make it exact here
        u, v = p_t[..., 0] / p_t[..., 2], p_t[..., 1] / p_t[..., 2]
    sh, sw = source_shape if source_shape is not None else (h, w)
    ok &= _in_bounds(u, v, sh, sw)
    return WarpCoords(u, v, ok, Y)


@dataclass(frozen=True, eq=False)
class BilinearSample:
    """Bilinear sample plus the cell data needed for derivatives."""

    values: np.ndarray  # HxWxC, 0 where invalid
    valid: np.ndarray
    du: np.ndarray  # dvalues/du, HxWxC
    dv: np.ndarray


def _cell(coord: np.ndarray, n: int):
    # left cell at integer coordinates: x0 = ceil(c) - 1
    x0 = np.clip(np.ceil(coord) - 1, 0, max(n - 2, 0)).astype(np.int64)
    return x0, coord - x0


def bilinear_sample(src: np.ndarray, u: np.ndarray, v: np.ndarray, valid: np.ndarray | None = None,
                    src_valid: np.ndarray | None = None) -> BilinearSample:
    """Sample ``src`` (HxWxC) at real coordinates.

    A pixel is invalid when its coordinate leaves ``[0, W-1] x [0, H-1]``
    or any corner with non-zero weight is invalid in ``src_valid``.
    """
    src = np.asarray(src, dtype=np.float64)
    if src.ndim == 2:
        src = src[:, :, None]
    H, W = src.shape[:2]
    ok = _in_bounds(u, v, H, W) & np.isfinite(u) & np.isfinite(v)
    if valid is not None:
        ok &= valid
    uu = np.where(ok, np.clip(u, 0, W - 1), 0.0)
    vv = np.where(ok, np.clip(v, 0, H - 1), 0.0)
    x0, a = _cell(uu, W)
    y0, b = _cell(vv, H)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    if src_valid is not None:
        sv = np.asarray(src_valid, dtype=bool)
        ok &= (sv[y0, x0] | ((a == 1) | (b == 1)))
        ok &= (sv[y0, x1] | ((a == 0) | (b == 1)))
        ok &= (sv[y1, x0] | ((a == 1) | (b == 0)))
        ok &= (sv[y1, x1] | ((a == 0) | (b == 0)))
    I00, I01 = src[y0, x0], src[y0, x1]
    I10, I11 = src[y1, x0], src[y1, x1]
    a3, b3 = a[..., None], b[..., None]
    vals = (1 - a3) * (1 - b3) * I00 + a3 * (1 - b3) * I01 + (1 - a3) * b3 * I10 + a3 * b3 * I11
    du = (1 - b3) * (I01 - I00) + b3 * (I11 - I10)
    dv = (1 - a3) * (I10 - I00) + a3 * (I11 - I01)
    m = ok[..., None]
    return BilinearSample(np.where(m, vals, 0.0), ok, np.where(m, du, 0.0), np.where(m, dv, 0.0))


def synthesize_view(I_src: ImagePlane, coords: WarpCoords, src_valid: np.ndarray | None = None
                    ) -> tuple[ImagePlane, np.ndarray]:
    """Bilinearly resample ``I_src`` at ``coords``; invalid pixels are 0."""
    s = bilinear_sample(I_src.data, coords.u, coords.v, coords.valid, src_valid)
    vals = np.clip(s.values, 0.0, I_src.dynamic_range)
    return ImagePlane(vals, I_src.dynamic_range), s.valid


@dataclass(frozen=True, eq=False)
class StagedResult:
    images: list  # list[ImagePlane], one per stage
    masks: list  # list[np.ndarray]
    composed_pose: RigidPose
    composed_image: ImagePlane
    composed_mask: np.ndarray


def staged_synthesis(I_src: ImagePlane, D_t: DepthMap, K: CameraIntrinsics, poses) -> StagedResult:
    """Chain of resampling stages: stage 0 warps ``I_src`` with ``poses[0]``,
    stage ``i`` warps the stage ``i-1`` output with residual ``poses[i]``.

    Validity only shrinks: a pixel invalid at one stage stays invalid. The
    result also carries a single warp of ``I_src`` under the composed pose
    ``poses[0] o poses[1] o ...`` for comparison.
    """
    poses = list(poses)
    if not 1 <= len(poses) <= 3:
        raise ContractViolation("staged synthesis takes 1 to 3 poses")
    grid = pixel_grid(*D_t.shape)
    images, masks = [], []
    current, current_valid = I_src, None
    for i, T in enumerate(poses):
        coords = reproject(grid, D_t, T, K, I_src.shape[:2])
        img, mask = synthesize_view(current, coords, current_valid)
        if masks:
            mask = mask & masks[-1]
            img = ImagePlane(np.where(mask[..., None], img.data, 0.0), img.dynamic_range)
        images.append(img)
        masks.append(mask)
        current, current_valid = img, mask
    composed = poses[0]
    for T in poses[1:]:
        composed = compose(composed, T)
    cimg, cmask = synthesize_view(I_src, reproject(grid, D_t, composed, K, I_src.shape[:2]))
    return StagedResult(images, masks, composed, cimg, cmask)
