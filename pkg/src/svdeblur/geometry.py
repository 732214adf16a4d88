"""Rigid motions on SE(3), their twist coordinates, and plane-induced homographies.

Conventions
-----------
* The reference camera images a world point ``P`` as ``K (P - center)``; it has
  no rotation of its own.
* A :class:`PlanePatch` stores the scaled normal ``n`` of its plane at the
  reference time, so plane points satisfy ``P @ n == 1``.
* A patch motion maps points at the reference time ``t0`` to their position one
  frame interval later.  Intermediate times are reached by scaling the twist.
* Pixel coordinates are ``(x, y) = (column, row)`` with pixel centers on the
  integer grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AngleTooLarge,
    DegenerateHomography,
    InvariantViolation,
    NotARotation,
    SingularProjection,
)

# below this rotation angle a motion is treated as a pure translation
PURE_TRANSLATION_ANGLE = 1e-9
# below this angle the trigonometric coefficients switch to Taylor series
SERIES_ANGLE = 1e-4
# log branch guard: angles this close to a half turn are rejected
HALF_TURN_MARGIN = 1e-6
ORTHONORMAL_TOL = 1e-9
MAX_CONDITION = 1e12
MIN_HOMOGRAPHY_DET = 1e-12


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


def hat(v) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    """Inverse of :func:`hat` (uses the antisymmetric part of ``m``)."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def _so3_coefficients(angle):
    """Return sin(a)/a, (1-cos a)/a^2 and (a-sin a)/a^3."""
    if angle < SERIES_ANGLE:
        a2 = angle * angle
        return (
            1.0 - a2 / 6.0 + a2 * a2 / 120.0,
            0.5 - a2 / 24.0 + a2 * a2 / 720.0,
            1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0,
        )
    s = math.sin(angle)
    half = math.sin(0.5 * angle)
    return s / angle, 2.0 * half * half / (angle * angle), (angle - s) / angle**3


def rotation_from_rotvec(rotvec) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(rotvec, dtype=float).reshape(3)
    angle = float(np.linalg.norm(w))
    a, b, _ = _so3_coefficients(angle)
    W = hat(w)
    return np.eye(3) + a * W + b * (W @ W)


@dataclass(frozen=True)
class RigidMotion:
    """A rigid body motion ``P -> rotation @ P + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _frozen(self.rotation, (3, 3))
        T = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise NotARotation("motion contains non-finite entries")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err >= ORTHONORMAL_TOL:
            raise NotARotation(f"rotation is not orthonormal (|R^T R - I|_F = {err:.3g})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise NotARotation(f"rotation has determinant {det:.12g}, expected 1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> RigidMotion:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidMotion:
        return cls(rotation_from_rotvec(rotvec), translation)

    @classmethod
    def about_point(cls, center, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidMotion:
        """Rotate by ``rotvec`` about an axis through ``center``, then translate."""
        R = rotation_from_rotvec(rotvec)
        c = np.asarray(center, dtype=float)
        return cls(R, c - R @ c + np.asarray(translation, dtype=float))

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self) -> RigidMotion:
        Rt = self.rotation.T
        return RigidMotion(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidMotion) -> RigidMotion:
        return RigidMotion(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        """Transform an ``(..., 3)`` array of points."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    @property
    def angle(self) -> float:
        R = self.rotation
        c = 0.5 * (np.trace(R) - 1.0)
        s = float(np.linalg.norm(vee(R)))
        return math.atan2(s, c)


@dataclass(frozen=True)
class Twist:
    """Twist coordinates ``theta * xi`` of a rigid motion.

    ``xi`` is 4x4 with a skew-symmetric upper-left block built from a unit
    rotation axis.  For pure translations ``theta`` is 0, the rotation block is
    zero and the translation column holds the full translation.
    """

    theta: float
    xi: np.ndarray

    def __post_init__(self):
        xi = _frozen(self.xi, (4, 4))
        theta = float(self.theta)
        if not (math.isfinite(theta) and np.all(np.isfinite(xi))):
            raise InvariantViolation("twist contains non-finite entries")
        W = xi[:3, :3]
        if np.max(np.abs(W + W.T)) > 1e-12:
            raise InvariantViolation("rotation block of xi is not skew-symmetric")
        if np.any(xi[3] != 0.0):
            raise InvariantViolation("bottom row of xi must be zero")
        axis_norm = float(np.linalg.norm(vee(W)))
        if theta != 0.0 and abs(axis_norm - 1.0) > 1e-9:
            raise InvariantViolation(f"rotation axis has norm {axis_norm}, expected 1")
        if theta == 0.0 and axis_norm != 0.0:
            raise InvariantViolation("zero-angle twist must have a zero rotation block")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_vectors(cls, rotvec, linear) -> Twist:
        """Build from the rotation vector and the linear part of ``log(M)``."""
        w = np.asarray(rotvec, dtype=float).reshape(3)
        v = np.asarray(linear, dtype=float).reshape(3)
        theta = float(np.linalg.norm(w))
        xi = np.zeros((4, 4))
        if theta < PURE_TRANSLATION_ANGLE:
            xi[:3, 3] = v
            return cls(0.0, xi)
        xi[:3, :3] = hat(w / theta)
        xi[:3, 3] = v / theta
        return cls(theta, xi)

    @classmethod
    def zero(cls) -> Twist:
        return cls(0.0, np.zeros((4, 4)))

    @property
    def rotvec(self) -> np.ndarray:
        return self.theta * vee(self.xi[:3, :3])

    @property
    def linear(self) -> np.ndarray:
        if self.theta == 0.0:
            return self.xi[:3, 3].copy()
        return self.theta * self.xi[:3, 3]

    def matrix(self) -> np.ndarray:
        """The Lie algebra element ``theta * xi`` (pure translation: ``xi``)."""
        out = np.zeros((4, 4))
        out[:3, :3] = hat(self.rotvec)
        out[:3, 3] = self.linear
        return out


def se3_exp(twist: Twist, fraction: float = 1.0) -> RigidMotion:
    """Exponential of ``fraction * theta * xi``.

    Scaling by ``fraction`` moves along the one-parameter subgroup, so
    ``fraction = 0.5`` is the motion over half a frame interval and negative
    fractions run backwards in time.
    """
    fraction = float(fraction)
    if not math.isfinite(fraction):
        raise ValueError("fraction must be finite")
    w = fraction * twist.rotvec
    v = fraction * twist.linear
    angle = float(np.linalg.norm(w))
    a, b, c = _so3_coefficients(angle)
    W = hat(w)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return RigidMotion(R, V @ v)


def se3_log(motion: RigidMotion) -> Twist:
    """Principal logarithm of a rigid motion as a :class:`Twist`."""
    if not isinstance(motion, RigidMotion):
        motion = RigidMotion(*motion)
    R, T = motion.rotation, motion.translation
    angle = motion.angle
    if angle >= math.pi - HALF_TURN_MARGIN:
        raise AngleTooLarge(f"rotation angle {angle:.9f} is too close to pi")
    if angle < PURE_TRANSLATION_ANGLE:
        return Twist.from_vectors(np.zeros(3), T)
    s = vee(R)
    if angle < SERIES_ANGLE:
        w = s * (1.0 + angle * angle / 6.0)
    else:
        w = s * (angle / math.sin(angle))
    W = hat(w)
    if angle < SERIES_ANGLE:
        d = 1.0 / 12.0 + angle * angle / 720.0
    else:
        half = 0.5 * angle
        d = (1.0 - half / math.tan(half)) / (angle * angle)
    V_inv = np.eye(3) - 0.5 * W + d * (W @ W)
    return Twist.from_vectors(w, V_inv @ T)


@dataclass(frozen=True)
class CameraModel:
    intrinsics: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        K = _frozen(self.intrinsics, (3, 3))
        c = _frozen(self.center, (3,))
        if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
            raise InvariantViolation("intrinsics must be upper triangular with K[2,2] = 1")
        if abs(np.linalg.det(K)) < 1e-12 or not np.all(np.isfinite(K)):
            raise InvariantViolation("intrinsics are singular")
        if not np.all(np.isfinite(c)):
            raise InvariantViolation("camera center is not finite")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "center", c)

    @classmethod
    def pinhole(cls, focal, cx, cy, center=(0.0, 0.0, 0.0)) -> CameraModel:
        K = np.array([[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]])
        return cls(K, center)

    @property
    def K(self) -> np.ndarray:
        return self.intrinsics

    def project(self, points) -> np.ndarray:
        """Project ``(..., 3)`` world points to ``(..., 2)`` pixel coordinates."""
        h = (np.asarray(points, dtype=float) - self.center) @ self.intrinsics.T
        return h[..., :2] / h[..., 2:3]


@dataclass(frozen=True)
class PlanePatch:
    normal: np.ndarray
    motion: Twist
    segment_id: int = 0

    def __post_init__(self):
        n = _frozen(self.normal, (3,))
        if not np.all(np.isfinite(n)) or not np.any(n != 0.0):
            raise InvariantViolation("plane normal must be finite and nonzero")
        if not isinstance(self.motion, Twist):
            object.__setattr__(self, "motion", se3_log(self.motion))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "segment_id", int(self.segment_id))

    def backproject(self, camera: CameraModel, xy) -> np.ndarray:
        """Intersect the viewing rays of pixels ``(..., 2)`` with the plane."""
        xy = np.asarray(xy, dtype=float)
        h = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
        d = h @ np.linalg.inv(camera.intrinsics).T
        lam = (1.0 - camera.center @ self.normal) / (d @ self.normal)
        return camera.center + lam[..., None] * d


def transport_normal(normal, motion: RigidMotion) -> np.ndarray:
    """Scaled normal of a plane after it has undergone ``motion``."""
    Rn = motion.rotation @ np.asarray(normal, dtype=float)
    return Rn / (1.0 + motion.translation @ Rn)


def plane_projection(camera: CameraModel, patch: PlanePatch, normal=None) -> np.ndarray:
    """``K - K center n^T``: maps plane points to homogeneous pixels.

    ``normal`` overrides the patch normal, e.g. with a transported one.
    """
    n = patch.normal if normal is None else np.asarray(normal, dtype=float)
    if abs(camera.center @ n - 1.0) <= 1e-6:
        raise SingularProjection("camera center lies on the plane")
    K = camera.intrinsics
    Pr = K - np.outer(K @ camera.center, n)
    cond = np.linalg.cond(Pr)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularProjection(f"plane projection is ill-conditioned (cond = {cond:.3g})")
    return Pr


def _normalize(H: np.ndarray) -> np.ndarray:
    det = np.linalg.det(H)
    if abs(det) < MIN_HOMOGRAPHY_DET or not np.isfinite(det):
        raise DegenerateHomography(f"homography determinant {det:.3g}")
    # scale by |det| only: the sign of the homogeneous coordinate marks
    # points in front of the camera
    return H / np.cbrt(abs(det))


def forward_homography(camera: CameraModel, patch: PlanePatch, t_offset: float) -> np.ndarray:
    """Map a reference-time pixel to where its surface point is at ``t0 + t_offset``."""
    Pr = plane_projection(camera, patch)
    M = se3_exp(patch.motion, t_offset)
    G = camera.intrinsics @ (
        M.rotation + np.outer(M.translation - camera.center, patch.normal)
    ) @ np.linalg.inv(Pr)
    return _normalize(G)


def blur_homography(camera: CameraModel, patch: PlanePatch, t_offset: float) -> np.ndarray:
    """Map a pixel observed at ``t0 + t_offset`` to its reference-time position.

    This is the inverse of :func:`forward_homography`, normalized to unit
    absolute determinant.  It equals ``Pr_t0 exp(-t theta xi) Pr_t^{-1}`` with the
    plane normal transported to time ``t``.
    """
    t_offset = float(t_offset)
    if not -1.0 <= t_offset <= 1.0:
        raise ValueError(f"t_offset must lie in [-1, 1], got {t_offset}")
    G = forward_homography(camera, patch, t_offset)
    return _normalize(np.linalg.inv(G))


def apply_homography(H, x, y):
    """Apply ``H`` to pixel arrays ``x``, ``y``.

    Written out per entry (no matrix product) so results do not depend on
    how the pixel arrays are chunked.  Returns ``(u, v, w)`` where ``w`` is
    the homogeneous coordinate before division; callers should discard
    samples with ``w <= 0``.
    """
    h = np.asarray(H, dtype=float)
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
        v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    return u, v, w
