"""Rotations, similarity transforms and pinhole cameras.

Conventions
-----------
* Quaternions are ``(w, x, y, z)`` and canonicalized to ``w >= 0``.
* A :class:`Sim3Transform` maps ``p -> scale * (R @ p + t)``; the translation
  is stored *before* scaling.
* Camera frames follow the OpenCV layout (x right, y down, z forward) and
  pixel ``(i, j)`` has its center at ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, NonPositiveDepth

# ---------------------------------------------------------------------------
# quaternion / so(3) helpers (vectorized over leading axes)
# ---------------------------------------------------------------------------


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Shepperd's method; returns a canonical (w >= 0) unit quaternion."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(np.array(q))


def quat_multiply(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotvec_to_quat(v):
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(x/2)/x, stable near zero
    k = np.where(theta > 1e-12, np.sin(half) / np.where(theta > 1e-12, theta, 1.0), 0.5 - theta**2 / 48.0)
    return np.concatenate([np.cos(half), v * k], axis=-1)


def quat_to_rotvec(q):
    q = quat_normalize(q)
    w = np.clip(q[..., :1], -1.0, 1.0)
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    k = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return q[..., 1:] * k


def so3_exp(v):
    return quat_to_matrix(rotvec_to_quat(v))


def skew(v):
    v = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rot_x(deg):
    return Rotation.from_rotvec(np.radians(deg) * np.array([1.0, 0.0, 0.0]))


def rot_y(deg):
    return Rotation.from_rotvec(np.radians(deg) * np.array([0.0, 1.0, 0.0]))


def rot_z(deg):
    return Rotation.from_rotvec(np.radians(deg) * np.array([0.0, 0.0, 1.0]))


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion rotation, canonicalized to ``w >= 0``."""

    quat: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(q)) or np.linalg.norm(q) == 0:
            raise ValueError("rotation quaternion must be finite and nonzero")
        object.__setattr__(self, "quat", _frozen(quat_normalize(q)))

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m):
        return cls(matrix_to_quat(m))

    @classmethod
    def from_rotvec(cls, v):
        return cls(rotvec_to_quat(np.asarray(v, dtype=np.float64)))

    @property
    def matrix(self):
        return quat_to_matrix(self.quat)

    def as_rotvec(self):
        return quat_to_rotvec(self.quat)

    def inverse(self):
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(quat_multiply(self.quat, other.quat))
        return np.asarray(other, dtype=np.float64) @ self.matrix.T if np.ndim(other) > 1 else self.matrix @ other

    def angle_to(self, other):
        """Geodesic angle (radians) between two rotations."""
        d = abs(float(np.dot(self.quat, other.quat)))
        return 2.0 * np.arccos(min(1.0, d))

    def __repr__(self):
        return "Rotation(w={:.6g}, x={:.6g}, y={:.6g}, z={:.6g})".format(*self.quat)


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform ``p -> scale * (R p + t)``."""

    scale: float = 1.0
    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        scale = float(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise ValueError(f"Sim3 scale must be positive, got {scale}")
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("Sim3 translation must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, scale, rmat, t):
        return cls(scale, Rotation.from_matrix(rmat), t)

    def apply(self, p):
        """Apply to a point ``(3,)`` or a batch ``(..., 3)``."""
        p = np.asarray(p, dtype=np.float64)
        return self.scale * (p @ self.rotation.matrix.T + self.translation)

    __call__ = apply

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        """``self.compose(other)`` applies ``other`` first, then ``self``."""
        ra = self.rotation.matrix
        return Sim3Transform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            ra @ other.translation + self.translation / other.scale,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self) -> "Sim3Transform":
        rinv = self.rotation.inverse()
        return Sim3Transform(1.0 / self.scale, rinv, -self.scale * (rinv.matrix @ self.translation))

    def as_matrix(self):
        """4x4 homogeneous matrix of the mapping."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation.matrix
        m[:3, 3] = self.scale * self.translation
        return m

    @property
    def center(self):
        """Image of the origin (the camera center for world_from_camera poses)."""
        return self.scale * self.translation

    def rigid(self) -> "Sim3Transform":
        """Drop the scale while keeping the image of the origin fixed."""
        return Sim3Transform(1.0, self.rotation, self.center)

    def __repr__(self):
        return (
            f"Sim3Transform(scale={self.scale:.9g}, rotation={self.rotation!r}, "
            f"translation={np.array2string(self.translation, precision=6)})"
        )


def sim3_apply(t: Sim3Transform, p):
    return t.apply(p)


def sim3_compose(a: Sim3Transform, b: Sim3Transform) -> Sim3Transform:
    return a.compose(b)


def sim3_inverse(a: Sim3Transform) -> Sim3Transform:
    return a.inverse()


def rigid_pose(rotation, center) -> Sim3Transform:
    """Scale-1 pose with the given rotation and origin image."""
    if not isinstance(rotation, Rotation):
        rotation = Rotation.from_matrix(rotation)
    return Sim3Transform(1.0, rotation, np.asarray(center, dtype=np.float64))


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_px: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig("image dimensions must be positive")
        if not self.focal_px > 0:
            raise InvalidConfig("focal length must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidConfig("principal point must lie inside the image")

    @classmethod
    def centered(cls, focal_px, width, height):
        return cls(float(focal_px), width / 2.0, height / 2.0, int(width), int(height))

    @property
    def principal_point(self):
        return np.array([self.cx, self.cy])

    def with_focal(self, focal_px):
        return CameraIntrinsics(float(focal_px), self.cx, self.cy, self.width, self.height)

    def pixel_centers(self):
        """``(H, W, 2)`` array of pixel-center coordinates ``(u, v)``."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv], axis=-1)

    def rays(self):
        """Unnormalized camera-frame ray directions ``(H, W, 3)`` with z = 1."""
        uv = self.pixel_centers()
        d = np.empty(uv.shape[:2] + (3,))
        d[..., 0] = (uv[..., 0] - self.cx) / self.focal_px
        d[..., 1] = (uv[..., 1] - self.cy) / self.focal_px
        d[..., 2] = 1.0
        return d


def project(intr: CameraIntrinsics, p_cam):
    """Pinhole projection of a camera-frame point to pixel coordinates."""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 1e-9):
        raise NonPositiveDepth(f"point depth must be positive, got z={np.min(z)}")
    u = intr.focal_px * p[..., 0] / z + intr.cx
    v = intr.focal_px * p[..., 1] / z + intr.cy
    if np.ndim(u) == 0:
        return float(u), float(v)
    return np.stack([u, v], axis=-1)


def unproject(intr: CameraIntrinsics, u, v, depth):
    """Inverse of :func:`project` for a given depth (z) value."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    x = (u - intr.cx) / intr.focal_px * z
    y = (v - intr.cy) / intr.focal_px * z
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


@dataclass(frozen=True, eq=False)
class CameraView:
    """A calibrated image: intrinsics, pose, RGB image, mask and minutiae.

    ``image`` is an ``(H, W, 3)`` float array in [0, 1]; ``mask`` is ``(H, W)``
    bool. ``minutiae_px`` holds ``(id, x, y)`` tuples.
    """

    intrinsics: CameraIntrinsics
    world_from_camera: Sim3Transform
    image: np.ndarray
    mask: np.ndarray
    minutiae_px: tuple = ()

    def __post_init__(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        image = np.asarray(self.image, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if image.shape != (h, w, 3) or mask.shape != (h, w):
            raise DimensionMismatch(
                f"image {image.shape} / mask {mask.shape} do not match intrinsics {w}x{h}"
            )
        if abs(self.world_from_camera.scale - 1.0) > 1e-9:
            raise ValueError("camera poses must be rigid (scale 1)")
        if np.any(image < 0) or np.any(image > 1):
            raise ValueError("image channels must lie in [0, 1]")
        image = image.copy()
        image.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "minutiae_px", tuple((int(i), float(x), float(y)) for i, x, y in self.minutiae_px))

    @property
    def camera_from_world(self) -> Sim3Transform:
        return self.world_from_camera.inverse()

    def replace(self, **kw) -> "CameraView":
        fields = dict(
            intrinsics=self.intrinsics,
            world_from_camera=self.world_from_camera,
            image=self.image,
            mask=self.mask,
            minutiae_px=self.minutiae_px,
        )
        fields.update(kw)
        return CameraView(**fields)
