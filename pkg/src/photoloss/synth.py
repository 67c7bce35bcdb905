"""Synthetic scenes of flat textured planes with exact depth and poses.

Poses in a :class:`SceneSpec` map world points into each camera frame.
Every random quantity comes from ``numpy.random.default_rng(seed)``
(PCG64), so a seed reproduces a scene or perturbation bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractViolation
from .geometry import (
    DEPTH_MAX,
    DEPTH_MIN,
    CameraIntrinsics,
    PlanarCoeffs,
    RigidPose,
    compose,
)
from .imaging import DepthMap, ImagePlane

__all__ = [
    "Texture",
    "Plane",
    "SceneSpec",
    "LineSegment",
    "RenderResult",
    "render",
    "relative_pose",
    "perturb",
    "fronto_parallel_scene",
    "room_scene",
    "wall_and_texture_scene",
]


@dataclass(frozen=True)
class Texture:
    """Intensity pattern over plane coordinates ``(a, b)`` in meters.

    kinds: ``constant`` (offset), ``ramp`` (offset + gradient . (a, b)),
    ``sinusoid`` (offset + amplitude * sin(2 pi f . (a, b) + phase)) and
    ``noise``: a sum of ``components`` random sinusoids with frequencies
    below ``max_frequency`` (cycles per meter), drawn from ``seed``, and
    ``solid``: the same over world coordinates ``X`` rather than plane
    coordinates, so planes sharing it meet without an intensity seam.
    """

    kind: str = "constant"
    offset: float = 0.5
    amplitude: float = 0.0
    gradient: tuple = (0.0, 0.0)
    frequency: tuple = (1.0, 0.0)
    phase: float = 0.0
    seed: int = 0
    max_frequency: float = 4.0
    components: int = 24

    def __post_init__(self):
        if self.kind not in ("constant", "ramp", "sinusoid", "noise", "solid"):
            raise ContractViolation(f"unknown texture kind {self.kind!r}")

    def shade(self, X: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Intensity at world points ``X`` (Nx3) with plane coordinates ``(a, b)``."""
        if self.kind != "solid":
            return self.evaluate(a, b)
        rng = np.random.default_rng(self.seed)
        radius = self.max_frequency * np.cbrt(rng.random(self.components))
        dirs = rng.normal(size=(self.components, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        phase = 2 * np.pi * rng.random(self.components)
        freqs = radius[:, None] * dirs
        out = np.zeros(X.shape[0])
        for i in range(self.components):
            out += np.sin(2 * np.pi * (X @ freqs[i]) + phase[i])
        return self.offset + self.amplitude * out / np.sqrt(self.components / 2)

    def evaluate(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == "solid":
            raise ContractViolation("solid textures need world points; use shade()")
        if self.kind == "constant":
            return np.full_like(a, self.offset)
        if self.kind == "ramp":
            return self.offset + self.gradient[0] * a + self.gradient[1] * b
        if self.kind == "sinusoid":
            f = self.frequency
            return self.offset + self.amplitude * np.sin(2 * np.pi * (f[0] * a + f[1] * b) + self.phase)
        rng = np.random.default_rng(self.seed)
        radius = self.max_frequency * np.sqrt(rng.random(self.components))
        angle = 2 * np.pi * rng.random(self.components)
        phase = 2 * np.pi * rng.random(self.components)
        fa, fb = radius * np.cos(angle), radius * np.sin(angle)
        out = np.zeros_like(a)
        for i in range(self.components):
            out += np.sin(2 * np.pi * (fa[i] * a + fb[i] * b) + phase[i])
        # unit-variance sum, scaled to the requested amplitude
        return self.offset + self.amplitude * out / np.sqrt(self.components / 2)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> Texture:
        d = dict(d)
        for k in ("gradient", "frequency"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


@dataclass(frozen=True, eq=False)
class Plane:
    """World plane ``normal . X = distance`` with an optional rectangular extent
    ``(a_min, a_max, b_min, b_max)`` in its own texture coordinates."""

    normal: np.ndarray
    distance: float
    texture: Texture = field(default_factory=Texture)
    extent: tuple | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ContractViolation("plane normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "distance", float(self.distance) / norm)

    def coords(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        e1, e2 = _plane_basis(self.normal)
        rel = X - self.distance * self.normal
        return rel @ e1, rel @ e2

    def to_dict(self) -> dict:
        return {
            "normal": self.normal.tolist(),
            "distance": self.distance,
            "texture": self.texture.to_dict(),
            "extent": list(self.extent) if self.extent is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Plane:
        ext = d.get("extent")
        return cls(d["normal"], d["distance"], Texture.from_dict(d.get("texture", {})),
                   tuple(ext) if ext is not None else None)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    planes: list
    poses: list  # world -> camera RigidPose per view
    intrinsics: CameraIntrinsics
    height: int
    width: int
    channels: int = 1
    dynamic_range: float = 1.0
    tint: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.planes:
            raise ContractViolation("scene needs at least one plane")
        if not self.poses:
            raise ContractViolation("scene needs at least one camera pose")
        if self.channels not in (1, 3):
            raise ContractViolation("channels must be 1 or 3")

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "dynamic_range": self.dynamic_range,
            "tint": list(self.tint),
            "intrinsics": self.intrinsics.to_dict(),
            "planes": [p.to_dict() for p in self.planes],
            "poses": [p.to_dict() for p in self.poses],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        return cls(
            planes=[Plane.from_dict(p) for p in d["planes"]],
            poses=[RigidPose.from_dict(p) for p in d["poses"]],
            intrinsics=CameraIntrinsics.from_dict(d["intrinsics"]),
            height=int(d["height"]),
            width=int(d["width"]),
            channels=int(d.get("channels", 1)),
            dynamic_range=float(d.get("dynamic_range", 1.0)),
            tint=tuple(d.get("tint", (1.0, 1.0, 1.0))),
        )


@dataclass(frozen=True)
class LineSegment:
    """Straight run of integer pixels inside plane ``plane`` next to its
    intersection edge with plane ``other``; endpoints are ``(row, col)``."""

    plane: int
    other: int
    start: tuple
    end: tuple

    def to_dict(self) -> dict:
        return {"plane": self.plane, "other": self.other, "start": list(self.start), "end": list(self.end)}

    @classmethod
    def from_dict(cls, d: dict) -> LineSegment:
        return cls(int(d["plane"]), int(d["other"]), tuple(d["start"]), tuple(d["end"]))


@dataclass(frozen=True, eq=False)
class RenderResult:
    image: ImagePlane
    depth: DepthMap
    coeffs: PlanarCoeffs
    labels: np.ndarray  # plane index + 1 per pixel
    segments: list


def relative_pose(spec: SceneSpec, target: int, source: int) -> RigidPose:
    """Pose mapping target-camera points into the source camera."""
    return compose(spec.poses[source], spec.poses[target].inverse())


def _ray_cast(spec: SceneSpec, pose: RigidPose):
    K = spec.intrinsics
    rays = K.rays(spec.height, spec.width)
    Rt = pose.rotation.T
    center = -Rt @ pose.translation
    dirs = rays @ Rt.T  # world-frame directions, camera z = 1
    best = np.full((spec.height, spec.width), np.inf)
    label = np.zeros((spec.height, spec.width), dtype=np.int64)
    for i, pl in enumerate(spec.planes):
        denom = dirs @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (pl.distance - pl.normal @ center) / denom
        hit = np.isfinite(lam) & (lam > 0)
        if pl.extent is not None:
            a, b = pl.coords(center + lam[..., None] * dirs)
            a0, a1, b0, b1 = pl.extent
            hit &= (a >= a0) & (a <= a1) & (b >= b0) & (b <= b1)
        closer = hit & (lam < best)
        best = np.where(closer, lam, best)
        label = np.where(closer, i + 1, label)
    return best, label, center, dirs


def render(spec: SceneSpec, pose_index: int = 0) -> RenderResult:
    """Ray-cast view ``pose_index``: image, depth, planar coefficients, labels, segments."""
    pose = spec.poses[pose_index]
    depth, label, center, dirs = _ray_cast(spec, pose)
    if np.any(label == 0):
        raise ContractViolation(f"{int(np.sum(label == 0))} pixels are not covered by any plane")
    if depth.min() <= DEPTH_MIN or depth.max() >= DEPTH_MAX:
        raise ContractViolation(f"depth range [{depth.min()}, {depth.max()}] outside ({DEPTH_MIN}, {DEPTH_MAX})")
    X = center + depth[..., None] * dirs
    gray = np.zeros_like(depth)
    co = np.zeros(depth.shape + (3,))
    for i, pl in enumerate(spec.planes):
        m = label == i + 1
        if not m.any():
            continue
        a, b = pl.coords(X[m])
        gray[m] = pl.texture.shade(X[m], a, b)
        n_c = pose.rotation @ pl.normal
        d_c = pl.distance + n_c @ pose.translation
        co[m] = n_c / d_c
    L = spec.dynamic_range
    gray = np.clip(gray, 0.0, 1.0) * L
    if spec.channels == 3:
        img = np.clip(gray[..., None] * np.asarray(spec.tint), 0.0, L)
    else:
        img = gray[..., None]
    segments = _edge_segments(spec, pose, label)
    return RenderResult(ImagePlane(img, L), DepthMap(depth), PlanarCoeffs(co), label, segments)


def _lattice_step(direction: np.ndarray, max_den: int = 6) -> np.ndarray:
    """Small integer (row, col) step approximating a 2-D (du, dv) direction."""
    du, dv = direction
    if abs(du) >= abs(dv):
        q = Fraction(dv / du).limit_denominator(max_den) if du != 0 else Fraction(0)
        step = np.array([q.numerator, q.denominator]) * np.sign(du)
    else:
        q = Fraction(du / dv).limit_denominator(max_den)
        step = np.array([q.denominator, q.numerator]) * np.sign(dv)
    return step.astype(np.int64)


def _edge_segments(spec: SceneSpec, pose: RigidPose, label: np.ndarray, min_points: int = 5,
                   inset: float = 2.5) -> list:
    K = spec.intrinsics
    h, w = label.shape
    segs = []
    n = len(spec.planes)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            mi, mj = label == i + 1, label == j + 1
            touching = (mi[:, 1:] & mj[:, :-1]).any() or (mi[:, :-1] & mj[:, 1:]).any() \
                or (mi[1:] & mj[:-1]).any() or (mi[:-1] & mj[1:]).any()
            if not touching:
                continue
            ni, nj = spec.planes[i].normal, spec.planes[j].normal
            dvec = np.cross(ni, nj)
            if np.linalg.norm(dvec) < 1e-9:
                continue
            A = np.stack([ni, nj, dvec])
            p0 = np.linalg.solve(A, [spec.planes[i].distance, spec.planes[j].distance, 0.0])
            Y0, Y1 = pose.apply(p0), pose.apply(p0 + dvec)
            if Y0[2] <= 0 or Y1[2] <= 0:
                continue
            q0 = np.array([K.fx * Y0[0] / Y0[2] + K.cx, K.fy * Y0[1] / Y0[2] + K.cy])
            q1 = np.array([K.fx * Y1[0] / Y1[2] + K.cx, K.fy * Y1[1] / Y1[2] + K.cy])
            direc = q1 - q0
            if np.linalg.norm(direc) < 1e-9:
                continue
            direc /= np.linalg.norm(direc)
            normal2d = np.array([-direc[1], direc[0]])
            # side of the edge that belongs to plane i
            rows, cols = np.nonzero(mi)
            side = np.sign(np.median((np.stack([cols, rows], -1) - q0) @ normal2d))
            if side == 0:
                continue
            step = _lattice_step(direc)
            # march along the inset line across the whole image
            start = q0 + side * inset * normal2d
            ts = np.arange(-2 * (h + w), 2 * (h + w))
            base = np.rint(start).astype(np.int64)
            pts = np.array([base[1], base[0]]) + ts[:, None] * step[None, :]
            inside = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
            ok = np.zeros(len(pts), dtype=bool)
            ok[inside] = label[pts[inside, 0], pts[inside, 1]] == i + 1
            run = []
            for k in range(len(pts) + 1):
                if k < len(pts) and ok[k]:
                    run.append(k)
                    continue
                if len(run) >= min_points:
                    segs.append(LineSegment(i, j, tuple(int(x) for x in pts[run[0]]),
                                            tuple(int(x) for x in pts[run[-1]])))
                run = []
    return segs


def perturb(obj, magnitude: float, seed: int, translation_magnitude: float | None = None):
    """Seeded perturbation of a :class:`RigidPose` or :class:`DepthMap`.

    Pose: rotation by ``magnitude`` radians about a random axis composed
    on the left, plus a translation of norm ``translation_magnitude``
    (meters, defaults to ``magnitude``) in a random direction.
    Depth: multiplied by ``exp(magnitude * N(0, 1))`` per pixel.
    """
    if magnitude < 0 or (translation_magnitude is not None and translation_magnitude < 0):
        raise ContractViolation("perturbation magnitude must be non-negative")
    rng = np.random.default_rng(seed)
    if isinstance(obj, RigidPose):
        tm = magnitude if translation_magnitude is None else translation_magnitude
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        tdir = rng.standard_normal(3)
        tdir /= np.linalg.norm(tdir)
        if magnitude == 0 and tm == 0:
            return RigidPose(obj.rotation.copy(), obj.translation.copy())
        return compose(RigidPose.from_axis_angle(axis * magnitude, tdir * tm), obj)
    if isinstance(obj, DepthMap):
        if magnitude == 0:
            return DepthMap(obj.data.copy(), obj.valid.copy())
        noise = np.exp(magnitude * rng.standard_normal(obj.shape))
        return DepthMap(obj.data * noise, obj.valid)
    raise TypeError(f"cannot perturb {type(obj).__name__}")


# --------------------------------------------------------------------------
# stock scenes


def _default_intrinsics(height: int, width: int) -> CameraIntrinsics:
    f = 0.8 * width
    return CameraIntrinsics(f, f, (width - 1) / 2, (height - 1) / 2)


def fronto_parallel_scene(depth: float = 2.0, height: int = 96, width: int = 128,
                          texture: Texture | None = None, source_translations=((0.1, 0.0, 0.0),),
                          channels: int = 1) -> SceneSpec:
    """One wall at ``depth`` facing the first camera; extra views are pure translations."""
    if texture is None:
        texture = Texture("noise", offset=0.5, amplitude=0.12, seed=7, max_frequency=6.0)
    planes = [Plane((0.0, 0.0, -1.0), -depth, texture)]
    poses = [RigidPose.identity()] + [RigidPose(np.eye(3), -np.asarray(t, float)) for t in source_translations]
    return SceneSpec(planes, poses, _default_intrinsics(height, width), height, width, channels)


def room_scene(height: int = 96, width: int = 128, seed: int = 3, source_poses=None,
               max_frequency: float = 2.5, size: float = 1.0) -> SceneSpec:
    """Back wall, floor, ceiling and two side walls sharing one solid texture
    (continuous across the room's edges). ``size`` scales the room; the
    texture scales with it, so the image looks the same."""
    tex = Texture("solid", offset=0.5, amplitude=0.12, seed=seed, max_frequency=max_frequency / size)
    planes = [
        Plane((0.0, 0.0, -1.0), -4.0 * size, tex),  # back wall z = 4
        Plane((0.0, -1.0, 0.0), -1.2 * size, tex),  # floor y = 1.2
        Plane((0.0, 1.0, 0.0), -1.4 * size, tex),  # ceiling y = -1.4
        Plane((1.0, 0.0, 0.0), -1.8 * size, tex),  # left wall x = -1.8
        Plane((-1.0, 0.0, 0.0), -1.9 * size, tex),  # right wall x = 1.9
    ]
    if source_poses is None:
        source_poses = [RigidPose.from_axis_angle((0.0, 0.02, 0.0), (-0.08, 0.01, -0.03))]
    poses = [RigidPose.identity()] + list(source_poses)
    return SceneSpec(planes, poses, _default_intrinsics(height, width), height, width)


def wall_and_texture_scene(height: int = 96, width: int = 128, wall_amplitude: float = 0.004,
                           source_translation=(0.1, 0.0, 0.0)) -> SceneSpec:
    """A faintly textured back wall (low-texture region) with a strongly
    textured panel in front of its left part."""
    wall = Plane((0.0, 0.0, -1.0), -3.0,
                 Texture("noise", offset=0.6, amplitude=wall_amplitude, seed=11, max_frequency=3.0))
    panel = Plane((0.0, 0.0, -1.0), -2.0,
                  Texture("noise", offset=0.45, amplitude=0.15, seed=12, max_frequency=6.0),
                  extent=(0.1, 1.5, -1.0, 1.0))
    poses = [RigidPose.identity(), RigidPose(np.eye(3), -np.asarray(source_translation, float))]
    return SceneSpec([wall, panel], poses, _default_intrinsics(height, width), height, width)
