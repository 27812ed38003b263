"""Procedural dual-view scene generator with exact geometric ground truth.

A stylized head (face ellipse, two eyes with gaze-driven pupils, nose marker)
is placed near the world origin and photographed by a calibrated camera pair
on a horizontal arc. Raw views are rectified with the same scale+rotation
normalization the estimator assumes, so generated labels satisfy the
dual-view consistency identity exactly and epipolar lines land on matching
pixel rows of the two crops.

World frame: origin at the nominal face center, x right, y down, z pointing
from the cameras toward the subject (cameras sit near z = -distance).
Head frame at identity coincides with the world frame; the face looks along
-z, i.e. back toward the cameras.
"""

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import geometry as geo

MAGIC = b"DVGZ1"
MANIFEST_NAME = "manifest.json"

PRESET_BASELINES = {"small": 8.0, "medium": 30.0, "long": 60.0}


class DatasetError(RuntimeError):
    """Reading or writing a generated dataset failed."""


@dataclass(frozen=True)
class RigConfig:
    """Dual-camera placement: angle between optical axes about the subject."""

    baseline_angle: float
    distance: float = 0.8
    preset: str = "custom"

    def __post_init__(self):
        if not (0.0 <= self.baseline_angle <= 120.0):
            raise ValueError(f"baseline_angle must be in [0, 120], got {self.baseline_angle}")
        if self.distance <= 0:
            raise ValueError("distance must be positive")

    @classmethod
    def from_preset(cls, preset: str, distance: float = 0.8) -> "RigConfig":
        if preset not in PRESET_BASELINES:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESET_BASELINES)}")
        return cls(baseline_angle=PRESET_BASELINES[preset], distance=distance, preset=preset)


@dataclass(frozen=True)
class FaceParams:
    """Stylized face layout in the canonical head frame (meters)."""

    face_axes: tuple = (0.030, 0.036)
    eye_offset: tuple = (0.014, -0.008, -0.024)
    eye_radius: float = 0.007
    pupil_radius: float = 0.0028
    nose_offset: tuple = (0.0, 0.007, -0.030)
    nose_radius: float = 0.0032
    pupil_gain: float = 0.0099   # +-25 deg of yaw sweeps the pupil across the eye disc
    eye_side_angle: float = 28.0  # outward tilt of each eye's surface normal, degrees


@dataclass(frozen=True)
class SamplingLimits:
    """Bounds for scene sampling. Head roll is fixed at zero and the vertical
    translation range is kept small: both keep the head x-axis close to the
    plane of the two optical axes, which is what makes rectified rows match."""

    target_pitch: float = 25.0   # degrees, head frame
    target_yaw: float = 25.0
    head_yaw: float = 22.0
    head_pitch: float = 12.0
    translation: tuple = (0.05, 0.008, 0.05)
    target_distance: float = 1.0


@dataclass(frozen=True)
class RenderConfig:
    """Raster settings for raw views and rectified crops."""

    raw_size: int = 160
    raw_focal: float = 600.0
    crop_size: int = 64
    crop_focal: float = 500.0
    norm_distance: float = 0.6
    noise_sigma: float = 0.02
    occlusion_threshold: float = 40.0  # degrees between eye normal and eye->camera ray
    face: FaceParams = field(default_factory=FaceParams)

    def raw_intrinsics(self) -> geo.CameraIntrinsics:
        c = (self.raw_size - 1) / 2.0
        return geo.CameraIntrinsics((self.raw_focal, self.raw_focal), (c, c))

    def crop_intrinsics(self) -> geo.CameraIntrinsics:
        c = (self.crop_size - 1) / 2.0
        return geo.CameraIntrinsics((self.crop_focal, self.crop_focal), (c, c))


@dataclass(frozen=True)
class SceneSpec:
    """One sampled subject configuration."""

    gaze_target: np.ndarray        # world, meters
    head_pose: geo.HeadPose        # head -> world
    face: FaceParams
    rng_seed: int


COLORS = {
    "background": (0.10, 0.10, 0.12),
    "face": (0.62, 0.50, 0.42),
    "eye": (0.93, 0.93, 0.90),
    "pupil": (0.05, 0.05, 0.08),
    "nose": (0.40, 0.28, 0.22),
    "lid": (0.50, 0.40, 0.34),
}


# ---------------------------------------------------------------------------
# Rig and scene sampling
# ---------------------------------------------------------------------------

def _look_at(center: np.ndarray, target: np.ndarray) -> geo.CameraPose:
    """Camera at ``center`` pointing at ``target``, row axes (right, down, forward)."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    right = np.cross([0.0, 1.0, 0.0], forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return geo.CameraPose(R, -R @ center)


def build_rig(rig: RigConfig, render: RenderConfig) -> geo.CameraRig:
    """Place both cameras on the horizontal arc around the nominal face center."""
    half = np.radians(rig.baseline_angle) / 2.0
    d = rig.distance
    center_a = np.array([-np.sin(half) * d, 0.0, -np.cos(half) * d])
    center_b = np.array([+np.sin(half) * d, 0.0, -np.cos(half) * d])
    intr = render.raw_intrinsics()
    return geo.CameraRig(
        cam_a=_look_at(center_a, np.zeros(3)),
        cam_b=_look_at(center_b, np.zeros(3)),
        intr_a=intr,
        intr_b=intr,
    )


def _head_rotation(yaw: float, pitch: float) -> np.ndarray:
    """Yaw about the vertical, then pitch about the local x-axis; roll is zero."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return ry @ rx


def sample_scene(
    rng: np.random.Generator,
    rig: RigConfig,
    limits: SamplingLimits = SamplingLimits(),
    face: FaceParams = FaceParams(),
) -> SceneSpec:
    """Draw one scene: head pose with bounded yaw/pitch, uniform gaze cone."""
    del rig  # placement is independent of the rig; kept for call-site symmetry
    yaw = rng.uniform(-np.radians(limits.head_yaw), np.radians(limits.head_yaw))
    pitch = rng.uniform(-np.radians(limits.head_pitch), np.radians(limits.head_pitch))
    t = rng.uniform(-1.0, 1.0, 3) * np.asarray(limits.translation)
    head = geo.HeadPose(_head_rotation(yaw, pitch), t)

    g_pitch = rng.uniform(-np.radians(limits.target_pitch), np.radians(limits.target_pitch))
    g_yaw = rng.uniform(-np.radians(limits.target_yaw), np.radians(limits.target_yaw))
    direction = head.rotation @ geo.angles_to_vector(g_pitch, g_yaw)
    target = t + direction * limits.target_distance
    return SceneSpec(
        gaze_target=target,
        head_pose=head,
        face=face,
        rng_seed=int(rng.integers(0, 2**31 - 1)),
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _paint(canvas, coverage, color):
    canvas *= (1.0 - coverage)[..., None]
    canvas += coverage[..., None] * np.asarray(color)


def _disc_coverage(uu, vv, center, radius):
    dist = np.hypot(uu - center[0], vv - center[1]) - radius
    return np.clip(0.5 - dist, 0.0, 1.0)


def _project(cam: geo.CameraPose, intr: geo.CameraIntrinsics, p_world):
    p = cam.to_camera(p_world)
    fx, fy = intr.focal
    cx, cy = intr.principal_point
    return np.array([fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy]), p[2]


def eye_occluded(scene: SceneSpec, cam: geo.CameraPose, side: int, threshold_deg: float) -> bool:
    """True when this eye's outward surface normal points away from the camera.

    ``side`` is -1 for the eye at -x in the head frame, +1 for the other.
    """
    face = scene.face
    tilt = np.radians(face.eye_side_angle) * side
    normal_head = np.array([np.sin(tilt), 0.0, -np.cos(tilt)])
    normal_world = scene.head_pose.rotation @ normal_head
    eye_world = scene.head_pose.translation + scene.head_pose.rotation @ (
        np.asarray(face.eye_offset) * np.array([side, 1.0, 1.0])
    )
    to_camera = cam.center() - eye_world
    to_camera = to_camera / np.linalg.norm(to_camera)
    angle = np.degrees(np.arccos(np.clip(normal_world @ to_camera, -1.0, 1.0)))
    return bool(angle > threshold_deg)


def render_view(
    scene: SceneSpec,
    cam: geo.CameraPose,
    intr: geo.CameraIntrinsics,
    render: RenderConfig,
    size: int = None,
) -> np.ndarray:
    """Rasterize one raw camera view of the scene; values in [0, 1], HxWx3."""
    size = render.raw_size if size is None else size
    face = scene.face
    head = scene.head_pose
    uu, vv = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64))
    uu, vv = uu, vv  # (row=v, col=u) grids share the same layout
    canvas = np.tile(np.asarray(COLORS["background"]), (size, size, 1))

    center_world = head.translation
    center_px, center_depth = _project(cam, intr, center_world)
    px_per_m = intr.focal[0] / center_depth

    # face ellipse footprint from the projected head x/y axes
    ax = _project(cam, intr, center_world + head.rotation[:, 0] * face.face_axes[0])[0] - center_px
    ay = _project(cam, intr, center_world + head.rotation[:, 1] * face.face_axes[1])[0] - center_px
    A = np.stack([ax, ay], axis=1)
    if abs(np.linalg.det(A)) > 1e-9:
        d = np.stack([uu - center_px[0], vv - center_px[1]], axis=-1)
        q = d @ np.linalg.inv(A).T
        r = np.linalg.norm(q, axis=-1)
        edge = min(np.linalg.norm(ax), np.linalg.norm(ay))
        _paint(canvas, np.clip(0.5 + (1.0 - r) * edge, 0.0, 1.0), COLORS["face"])

    # gaze in this camera's frame drives the pupil offset
    g_world = scene.gaze_target - center_world
    g_world = g_world / np.linalg.norm(g_world)
    g_cam = cam.rotation @ g_world
    pupil_shift = np.asarray(face.pupil_gain) * g_cam[:2]
    max_shift = face.eye_radius - face.pupil_radius
    norm = np.hypot(*pupil_shift)
    if norm > max_shift:
        pupil_shift = pupil_shift * (max_shift / norm)

    for side in (-1, 1):
        eye_world = head.translation + head.rotation @ (
            np.asarray(face.eye_offset) * np.array([side, 1.0, 1.0])
        )
        eye_px, eye_depth = _project(cam, intr, eye_world)
        eye_r = intr.focal[0] * face.eye_radius / eye_depth
        if eye_occluded(scene, cam, side, render.occlusion_threshold):
            _paint(canvas, _disc_coverage(uu, vv, eye_px, eye_r), COLORS["lid"])
            continue
        _paint(canvas, _disc_coverage(uu, vv, eye_px, eye_r), COLORS["eye"])
        pupil_px = eye_px + intr.focal[0] * pupil_shift / eye_depth
        pupil_r = intr.focal[0] * face.pupil_radius / eye_depth
        _paint(canvas, _disc_coverage(uu, vv, pupil_px, pupil_r), COLORS["pupil"])

    nose_world = head.translation + head.rotation @ np.asarray(face.nose_offset)
    nose_px, nose_depth = _project(cam, intr, nose_world)
    nose_r = intr.focal[0] * face.nose_radius / nose_depth
    _paint(canvas, _disc_coverage(uu, vv, nose_px, nose_r), COLORS["nose"])

    if render.noise_sigma > 0:
        noise_rng = np.random.default_rng(scene.rng_seed)
        canvas = canvas + noise_rng.normal(0.0, render.noise_sigma, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Portable array files
# ---------------------------------------------------------------------------

def write_array(path, arr: np.ndarray) -> None:
    """Write a float32 array: magic, uint32 ndim, uint32 dims, little-endian data."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DatasetError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        data = f.read()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise DatasetError(f"{path}: payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _rot_list(R: np.ndarray):
    return [float(x) for x in np.asarray(R, dtype=np.float64).reshape(-1)]


def sample_geometry(scene: SceneSpec, rig: geo.CameraRig, render: RenderConfig) -> dict:
    """Rectify both views of a scene and derive labels, poses and rotations."""
    reference = scene.head_pose.translation
    rects, rotations, poses, gazes = [], [], [], []
    g_world = scene.gaze_target - reference
    g_world = g_world / np.linalg.norm(g_world)
    for cam, intr in ((rig.cam_a, rig.intr_a), (rig.cam_b, rig.intr_b)):
        rect = geo.build_rectification(cam, intr, scene.head_pose, reference, render.norm_distance)
        r_virtual = geo.virtual_camera_rotation(rect, cam)
        rects.append(rect)
        rotations.append(r_virtual)
        poses.append(np.concatenate([r_virtual[:, 2], cam.translation]))
        gazes.append(geo.vector_to_angles(r_virtual @ g_world))
    return {
        "rects": rects,
        "rotations": rotations,
        "poses": poses,
        "gazes": gazes,
        "gaze_world": g_world,
    }


def generate_dataset(
    count: int,
    rig_cfg: RigConfig,
    render: RenderConfig,
    seed: int,
    out_path,
    limits: SamplingLimits = SamplingLimits(),
) -> dict:
    """Render, rectify and write ``count`` dual-view samples plus a manifest.

    Re-running with the same arguments produces byte-identical output.
    Returns the manifest dictionary.
    """
    out = Path(out_path)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create dataset directory {out}: {e}") from e

    rig = build_rig(rig_cfg, render)
    intr_raw = render.raw_intrinsics()
    intr_crop = render.crop_intrinsics()
    rng = np.random.default_rng(seed)
    crop_shape = (render.crop_size, render.crop_size)

    samples = []
    occl_counts = {"a": 0, "b": 0, "one_eye_a": 0, "one_eye_b": 0}
    for i in range(count):
        scene = sample_scene(rng, rig_cfg, limits, render.face)
        info = sample_geometry(scene, rig, render)
        record = {
            "id": f"{i:06d}",
            "gaze_a": [float(info["gazes"][0][0]), float(info["gazes"][0][1])],
            "gaze_b": [float(info["gazes"][1][0]), float(info["gazes"][1][1])],
            "gaze_world": [float(x) for x in info["gaze_world"]],
            "pose_a": [float(x) for x in info["poses"][0]],
            "pose_b": [float(x) for x in info["poses"][1]],
            "virtual_rotation_a": _rot_list(info["rotations"][0]),
            "virtual_rotation_b": _rot_list(info["rotations"][1]),
            "head_rotation": _rot_list(scene.head_pose.rotation),
            "head_translation": [float(x) for x in scene.head_pose.translation],
            "gaze_target": [float(x) for x in scene.gaze_target],
            "rng_seed": scene.rng_seed,
        }
        for key, cam, intr, rect in (
            ("a", rig.cam_a, rig.intr_a, info["rects"][0]),
            ("b", rig.cam_b, rig.intr_b, info["rects"][1]),
        ):
            raw = render_view(scene, cam, intr, render)
            crop = geo.warp_image(raw, rect, intr_raw, intr_crop, out_shape=crop_shape)
            crop = np.clip(crop, 0.0, 1.0).astype(np.float32)
            fname = f"images/{record['id']}_{key}.dvz"
            try:
                write_array(out / fname, crop)
            except OSError as e:
                raise DatasetError(f"cannot write {out / fname}: {e}") from e
            occluded = [
                eye_occluded(scene, cam, -1, render.occlusion_threshold),
                eye_occluded(scene, cam, +1, render.occlusion_threshold),
            ]
            record[f"file_{key}"] = fname
            record[f"occluded_{key}"] = occluded
            occl_counts[key] += int(any(occluded))
            occl_counts[f"one_eye_{key}"] += int(sum(occluded) == 1)
        samples.append(record)

    manifest = {
        "format_version": 1,
        "seed": seed,
        "count": count,
        "rig": {
            "preset": rig_cfg.preset,
            "baseline_angle": rig_cfg.baseline_angle,
            "distance": rig_cfg.distance,
            "camera_a_rotation": _rot_list(rig.cam_a.rotation),
            "camera_a_translation": [float(x) for x in rig.cam_a.translation],
            "camera_b_rotation": _rot_list(rig.cam_b.rotation),
            "camera_b_translation": [float(x) for x in rig.cam_b.translation],
        },
        "render": _render_to_dict(render),
        "limits": asdict(limits),
        "occlusion_stats": {
            "frac_any_occluded_a": occl_counts["a"] / count if count else 0.0,
            "frac_any_occluded_b": occl_counts["b"] / count if count else 0.0,
            "frac_exactly_one_eye_a": occl_counts["one_eye_a"] / count if count else 0.0,
            "frac_exactly_one_eye_b": occl_counts["one_eye_b"] / count if count else 0.0,
        },
        "samples": samples,
    }
    try:
        with open(out / MANIFEST_NAME, "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise DatasetError(f"cannot write manifest in {out}: {e}") from e
    return manifest


def _render_to_dict(render: RenderConfig) -> dict:
    d = asdict(render)
    d["face"] = asdict(render.face)
    return d


def render_config_from_dict(d: dict) -> RenderConfig:
    face = FaceParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["face"].items()})
    rest = {k: v for k, v in d.items() if k != "face"}
    return RenderConfig(face=face, **rest)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """In-memory dual-view dataset: everything the estimator consumes."""

    images: np.ndarray          # (N, 2, H, W, 3) float32
    gazes: np.ndarray           # (N, 2, 2) float64, per-view (pitch, yaw)
    poses: np.ndarray           # (N, 2, 6) float64 raw pose features
    rotations: np.ndarray       # (N, 2, 3, 3) float64 world->virtual rotations
    gaze_world: np.ndarray      # (N, 3) float64
    ids: list
    manifest: dict

    def __len__(self):
        return self.images.shape[0]


def load_manifest(path) -> dict:
    p = Path(path) / MANIFEST_NAME
    if not p.exists():
        raise DatasetError(f"no {MANIFEST_NAME} in {path}")
    with open(p) as f:
        return json.load(f)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = load_manifest(root)
    records = manifest["samples"]
    n = len(records)
    if n == 0:
        raise DatasetError(f"{path}: dataset is empty")
    size = manifest["render"]["crop_size"]
    images = np.empty((n, 2, size, size, 3), dtype=np.float32)
    gazes = np.empty((n, 2, 2))
    poses = np.empty((n, 2, 6))
    rotations = np.empty((n, 2, 3, 3))
    gaze_world = np.empty((n, 3))
    ids = []
    for i, rec in enumerate(records):
        images[i, 0] = read_array(root / rec["file_a"])
        images[i, 1] = read_array(root / rec["file_b"])
        gazes[i, 0] = rec["gaze_a"]
        gazes[i, 1] = rec["gaze_b"]
        poses[i, 0] = rec["pose_a"]
        poses[i, 1] = rec["pose_b"]
        rotations[i, 0] = np.asarray(rec["virtual_rotation_a"]).reshape(3, 3)
        rotations[i, 1] = np.asarray(rec["virtual_rotation_b"]).reshape(3, 3)
        gaze_world[i] = rec["gaze_world"]
        ids.append(rec["id"])
    return Dataset(images, gazes, poses, rotations, gaze_world, ids, manifest)
