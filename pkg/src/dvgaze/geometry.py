"""Camera, rectification, epipolar and gaze-direction math for the dual-view rig.

Single source of truth for coordinate conventions:

* World points map into a camera as ``p_cam = R @ p_world + t`` (R orthonormal,
  det +1). The camera looks along its +z axis; x is image-right, y image-down.
* Gaze angles are (pitch, yaw) in radians. The matching unit vector is
      x = -cos(pitch) * sin(yaw)
      y = -sin(pitch)
      z = -cos(pitch) * cos(yaw)
  so (0, 0) is the straight-ahead gaze (0, 0, -1), pointing out of the scene
  back toward the camera.
* Rectification maps a raw camera to a virtual camera that looks straight at a
  reference point from a fixed distance: M = S @ R_rec with
  S = diag(1, 1, norm_distance / ||c||) and R_rec chosen so its third row is
  the unit reference direction and its first row is the head x-axis projected
  orthogonal to it (cancels head roll).

All functions are pure; rotations are validated, never silently fixed.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ROTATION_TOL = 1e-9
TRIANGULATION_COND_LIMIT = 1e12


class GeometryError(ValueError):
    """Invalid geometric input (bad rotation, non-unit vector, ...)."""


class DegenerateGeometryError(GeometryError):
    """Configuration has no well-defined answer (parallel rays, zero average, ...)."""


def check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    """Validate that R is a proper rotation; returns R as a float64 array."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err >= tol:
        raise GeometryError(f"rotation is not orthonormal (||R^T R - I||_inf = {err:.3e})")
    if np.linalg.det(R) <= 0:
        raise GeometryError("rotation has negative determinant (reflection)")
    return R


@dataclass(frozen=True)
class CameraPose:
    """World -> camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    def to_camera(self, p_world: np.ndarray) -> np.ndarray:
        p = np.asarray(p_world, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class HeadPose:
    """Head frame -> reference frame transform (reference frame is contextual:
    world for scene-level poses, camera for per-view poses)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    focal: tuple
    principal_point: tuple

    def __post_init__(self):
        fx, fy = self.focal
        if not (fx > 0 and fy > 0):
            raise GeometryError(f"focal lengths must be positive, got {self.focal}")
        object.__setattr__(self, "focal", (float(fx), float(fy)))
        cx, cy = self.principal_point
        object.__setattr__(self, "principal_point", (float(cx), float(cy)))

    def matrix(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal_point
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RectificationTransform:
    """Scale + rotation pair mapping a raw camera view to its rectified virtual camera.

    scale           diag(1, 1, norm_distance / ||reference_point||)
    rotation        orthonormal; rotation @ reference_point is parallel to (0, 0, 1)
    reference_point reference point in raw-camera coordinates (meters)
    norm_distance   virtual camera distance to the reference point (meters)
    """

    scale: np.ndarray
    rotation: np.ndarray
    reference_point: np.ndarray
    norm_distance: float

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        S = np.asarray(self.scale, dtype=np.float64)
        c = np.asarray(self.reference_point, dtype=np.float64).reshape(3)
        object.__setattr__(self, "scale", S)
        object.__setattr__(self, "reference_point", c)
        d = np.linalg.norm(c)
        if d <= 0:
            raise GeometryError("reference point must not be at the camera origin")
        expected = np.diag([1.0, 1.0, self.norm_distance / d])
        if np.abs(S - expected).max() > 1e-9:
            raise GeometryError("scale must equal diag(1, 1, norm_distance/||reference_point||)")
        aligned = self.rotation @ (c / d)
        angle = np.arctan2(np.hypot(aligned[0], aligned[1]), aligned[2])
        if angle >= ROTATION_TOL:
            raise GeometryError(
                f"rotation must map the reference point onto +z (off by {angle:.3e} rad)"
            )

    @property
    def matrix(self) -> np.ndarray:
        """Composed transform M = S @ R_rec."""
        return self.scale @ self.rotation


@dataclass(frozen=True)
class CameraRig:
    """Calibrated dual-camera system, optionally with per-view rectifications."""

    cam_a: CameraPose
    cam_b: CameraPose
    intr_a: CameraIntrinsics
    intr_b: CameraIntrinsics
    rect_a: Optional[RectificationTransform] = None
    rect_b: Optional[RectificationTransform] = None


# ---------------------------------------------------------------------------
# Gaze parameterization
# ---------------------------------------------------------------------------

def angles_to_vector(pitch, yaw) -> np.ndarray:
    """(pitch, yaw) -> unit gaze vector. Broadcasts; appends a trailing axis of 3."""
    pitch = np.asarray(pitch, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    x = -np.cos(pitch) * np.sin(yaw)
    y = -np.sin(pitch)
    z = -np.cos(pitch) * np.cos(yaw)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def vector_to_angles(v: np.ndarray):
    """Unit gaze vector -> (pitch, yaw). Gimbal case |y| = 1 returns yaw = 0."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise GeometryError("vector_to_angles expects unit vectors")
    y = np.clip(v[..., 1], -1.0, 1.0)
    pitch = np.arcsin(-y)
    gimbal = np.abs(y) >= 1.0 - 1e-12
    yaw = np.where(gimbal, 0.0, np.arctan2(-v[..., 0], -v[..., 2]))
    if pitch.ndim == 0:
        return float(pitch), float(yaw)
    return pitch, yaw


def angular_error(a: np.ndarray, b: np.ndarray):
    """Angle between unit vectors in degrees; symmetric, in [0, 180]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    deg = np.degrees(np.arccos(dot))
    return float(deg) if deg.ndim == 0 else deg


# ---------------------------------------------------------------------------
# Rectification
# ---------------------------------------------------------------------------

def build_rectification(
    cam: CameraPose,
    intr: CameraIntrinsics,
    head: HeadPose,
    reference_point: np.ndarray,
    norm_distance: float,
) -> RectificationTransform:
    """Build the scale+rotation pair normalizing one view.

    ``reference_point`` is in world coordinates; ``head`` is the head pose in
    world coordinates (its x-axis is what the virtual camera keeps horizontal).
    ``intr`` identifies the raw view the transform belongs to and is validated
    here; the pixel-space warp pairs it with a virtual one in `warp_image`.

    The virtual camera rotation has rows (right, down, forward) where forward
    is the unit reference direction, right is the head x-axis made orthogonal
    to forward, and down completes the right-handed frame.
    """
    del intr  # participates only via warp_image; kept to bind transform to a view
    c = cam.to_camera(np.asarray(reference_point, dtype=np.float64).reshape(3))
    depth = c[2]
    dist = np.linalg.norm(c)
    if depth <= 0 or dist <= 0:
        raise DegenerateGeometryError(
            f"reference point must be in front of the camera (z = {depth:.4f} m)"
        )
    forward = c / dist
    head_x = cam.rotation @ head.rotation[:, 0]
    right = head_x - np.dot(head_x, forward) * forward
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise DegenerateGeometryError("head x-axis is parallel to the viewing direction")
    right = right / n
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    scale = np.diag([1.0, 1.0, float(norm_distance) / dist])
    return RectificationTransform(
        scale=scale, rotation=rotation, reference_point=c, norm_distance=float(norm_distance)
    )


def virtual_camera_rotation(rect: RectificationTransform, cam: CameraPose) -> np.ndarray:
    """World -> virtual-camera rotation of the rectified view: R_rec @ R_c."""
    return rect.rotation @ cam.rotation


def warp_image(
    img: np.ndarray,
    rect: RectificationTransform,
    intr_src: CameraIntrinsics,
    intr_virtual: CameraIntrinsics,
    out_shape: Optional[tuple] = None,
) -> np.ndarray:
    """Resample a raw view into its rectified virtual view.

    Applies the homography H = K_virtual @ M @ K_src^-1 by inverse-mapping each
    destination pixel and sampling bilinearly; source lookups that fall outside
    the image fill with zeros. ``out_shape`` defaults to the input (H, W).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h_src, w_src, channels = img.shape
    h_out, w_out = out_shape if out_shape is not None else (h_src, w_src)

    H = intr_virtual.matrix() @ rect.matrix @ np.linalg.inv(intr_src.matrix())
    if abs(np.linalg.det(H)) < 1e-15:
        raise DegenerateGeometryError("homography is singular")
    H_inv = np.linalg.inv(H)

    u, v = np.meshgrid(np.arange(w_out, dtype=np.float64), np.arange(h_out, dtype=np.float64))
    ones = np.ones_like(u)
    src = np.stack([u, v, ones], axis=0).reshape(3, -1)
    src = H_inv @ src
    xs = src[0] / src[2]
    ys = src[1] / src[2]

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    out = np.zeros((h_out * w_out, channels), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w_src) & (yi >= 0) & (yi < h_src)
            idx = np.where(valid, yi * w_src + xi, 0)
            sample = img.reshape(-1, channels)[idx]
            out += np.where(valid, weight, 0.0)[:, None] * sample
    return out.reshape(h_out, w_out, channels)


# ---------------------------------------------------------------------------
# Triangulation and gaze re-calculation
# ---------------------------------------------------------------------------

def _projection_matrix(cam: CameraPose, intr: CameraIntrinsics) -> np.ndarray:
    return intr.matrix() @ np.hstack([cam.rotation, cam.translation[:, None]])


def project_point(cam: CameraPose, intr: CameraIntrinsics, p_world: np.ndarray) -> np.ndarray:
    """World point -> pixel coordinates (u, v)."""
    p = cam.to_camera(p_world)
    if np.any(np.atleast_2d(p)[:, 2] <= 0):
        raise DegenerateGeometryError("point is not in front of the camera")
    fx, fy = intr.focal
    cx, cy = intr.principal_point
    uv = np.stack(
        [fx * p[..., 0] / p[..., 2] + cx, fy * p[..., 1] / p[..., 2] + cy], axis=-1
    )
    return uv


def triangulate(
    p_a: np.ndarray,
    p_b: np.ndarray,
    cam_a: CameraPose,
    intr_a: CameraIntrinsics,
    cam_b: CameraPose,
    intr_b: CameraIntrinsics,
):
    """DLT triangulation of one pixel correspondence.

    Returns ``(point_world, residual)`` where residual is the RMS reprojection
    error in pixels over both views. Raises `DegenerateGeometryError` when the
    two viewing rays are (near-)parallel.
    """
    p_a = np.asarray(p_a, dtype=np.float64).reshape(2)
    p_b = np.asarray(p_b, dtype=np.float64).reshape(2)
    P1 = _projection_matrix(cam_a, intr_a)
    P2 = _projection_matrix(cam_b, intr_b)
    A = np.stack(
        [
            p_a[0] * P1[2] - P1[0],
            p_a[1] * P1[2] - P1[1],
            p_b[0] * P2[2] - P2[0],
            p_b[1] * P2[2] - P2[1],
        ]
    )
    _, s, Vt = np.linalg.svd(A)
    if s[2] <= 0 or s[0] / s[2] > TRIANGULATION_COND_LIMIT:
        raise DegenerateGeometryError(
            "viewing rays are parallel or coincident; point cannot be triangulated"
        )
    X = Vt[-1]
    if abs(X[3]) < 1e-15:
        raise DegenerateGeometryError("triangulated point is at infinity")
    point = X[:3] / X[3]
    err_a = project_point(cam_a, intr_a, point) - p_a
    err_b = project_point(cam_b, intr_b, point) - p_b
    residual = float(np.sqrt(np.mean(np.concatenate([err_a, err_b]) ** 2)))
    return point, residual


def recompute_gaze_origin(
    landmarks_a,
    landmarks_b,
    rig: CameraRig,
    nose_index: int,
    target: np.ndarray,
):
    """Re-derive per-view gaze angles with a triangulated nose as the origin.

    Triangulates the nose landmark from both views, forms the world gaze ray
    toward ``target``, rotates it into each rectified virtual camera and
    converts to (pitch, yaw). The rig must carry both rectifications.
    """
    landmarks_a = np.asarray(landmarks_a, dtype=np.float64)
    landmarks_b = np.asarray(landmarks_b, dtype=np.float64)
    if not (0 <= nose_index < len(landmarks_a) and nose_index < len(landmarks_b)):
        raise GeometryError(f"nose_index {nose_index} out of range")
    if rig.rect_a is None or rig.rect_b is None:
        raise GeometryError("rig carries no rectification transforms")
    nose, _ = triangulate(
        landmarks_a[nose_index], landmarks_b[nose_index],
        rig.cam_a, rig.intr_a, rig.cam_b, rig.intr_b,
    )
    g_world = np.asarray(target, dtype=np.float64).reshape(3) - nose
    n = np.linalg.norm(g_world)
    if n < 1e-12:
        raise DegenerateGeometryError("gaze target coincides with the gaze origin")
    g_world = g_world / n
    out = []
    for rect, cam in ((rig.rect_a, rig.cam_a), (rig.rect_b, rig.cam_b)):
        g_virtual = virtual_camera_rotation(rect, cam) @ g_world
        out.append(vector_to_angles(g_virtual))
    return tuple(out)


# ---------------------------------------------------------------------------
# Dual-view gaze relations
# ---------------------------------------------------------------------------

def consistency_residual(gaze_a, gaze_b, rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """World-frame disagreement between two per-view gaze angle pairs.

    ``rot_a`` / ``rot_b`` are the world -> virtual-camera rotations. Returns
    ||rot_a^-1 v_a - rot_b^-1 v_b||_2, zero iff the views agree in world frame.
    """
    rot_a = check_rotation(rot_a)
    rot_b = check_rotation(rot_b)
    v_a = angles_to_vector(*gaze_a)
    v_b = angles_to_vector(*gaze_b)
    return float(np.linalg.norm(rot_a.T @ v_a - rot_b.T @ v_b))


def world_average_gaze(gaze_a, gaze_b, rot_a: np.ndarray, rot_b: np.ndarray) -> np.ndarray:
    """Average the two per-view gazes in the world frame; returns a unit vector."""
    rot_a = check_rotation(rot_a)
    rot_b = check_rotation(rot_b)
    mean = 0.5 * (rot_a.T @ angles_to_vector(*gaze_a) + rot_b.T @ angles_to_vector(*gaze_b))
    n = np.linalg.norm(mean)
    if n < 1e-9:
        raise DegenerateGeometryError("average of antipodal gazes is undefined")
    return mean / n
