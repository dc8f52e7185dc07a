"""Scene data model: Gaussian splats, cameras, label maps.

Camera convention is COLMAP-style throughout: x right, y down, z forward,
with `X_cam = R @ X_world + t`. Pixel centers sit at integer coordinates,
so a centered principal point is ((width - 1) / 2, (height - 1) / 2).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

FEATURE_DIM = 16
MAX_OBJECT_IDS = 256
SH_DEGREE_MAX = 3
SH_REST_COEFFS = (SH_DEGREE_MAX + 1) ** 2 - 1  # 15 per channel at degree 3


class SceneError(ValueError):
    """Invalid scene data (non-finite values, bad shapes, unknown ids)."""


def activate_scale(raw: np.ndarray) -> np.ndarray:
    return np.exp(raw)


def deactivate_scale(scale: np.ndarray) -> np.ndarray:
    return np.log(scale)


def activate_opacity(raw):
    return 1.0 / (1.0 + np.exp(-raw))


def deactivate_opacity(opacity):
    return np.log(opacity) - np.log1p(-opacity)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions, normalized first.

    Accepts (4,) or (N, 4); returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norm < 1e-12):
        raise SceneError("zero-norm quaternion")
    w, x, y, z = (q / norm).T
    m = np.empty(q.shape[:1] + (3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


@dataclass
class Classifier:
    """Linear map from identity features to class logits; class slot 0 is background."""

    weight: np.ndarray  # (num_classes, FEATURE_DIM)
    bias: np.ndarray    # (num_classes,)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.T + self.bias

    def copy(self) -> "Classifier":
        return Classifier(self.weight.copy(), self.bias.copy())


@dataclass
class GaussianScene:
    """Ordered collection of Gaussian splats (struct-of-arrays layout).

    Raw fields mirror the on-disk convention: scales are stored as logs,
    opacities as logits, colors as SH coefficients (dc + rest, channel major).
    Indices into the arrays are stable identifiers for individual splats.
    """

    positions: np.ndarray      # (N, 3) world units
    log_scales: np.ndarray     # (N, 3)
    rotations: np.ndarray      # (N, 4) quaternion (w, x, y, z)
    opacities_raw: np.ndarray  # (N,)
    sh_dc: np.ndarray          # (N, 3) degree-0 coefficients
    sh_rest: np.ndarray        # (N, 3, 15) higher bands, zero-padded
    features: np.ndarray       # (N, FEATURE_DIM) identity embedding
    object_ids: np.ndarray | None = None  # (N,) int32; 0 = background
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    classifier: Classifier | None = None

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def num_gaussians(self) -> int:
        return self.positions.shape[0]

    @property
    def scales(self) -> np.ndarray:
        return activate_scale(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return activate_opacity(self.opacities_raw)

    def validate(self) -> None:
        n = len(self)
        fields = {
            "positions": (self.positions, (n, 3)),
            "log_scales": (self.log_scales, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "opacities_raw": (self.opacities_raw, (n,)),
            "sh_dc": (self.sh_dc, (n, 3)),
            "sh_rest": (self.sh_rest, (n, 3, SH_REST_COEFFS)),
            "features": (self.features, (n, FEATURE_DIM)),
        }
        for name, (arr, shape) in fields.items():
            if arr.shape != shape:
                raise SceneError(f"{name} has shape {arr.shape}, expected {shape}")
            bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1) if n else np.zeros(0, bool)
            if bad.any():
                raise SceneError(f"non-finite {name} at record {int(np.argmax(bad))}")
        if self.object_ids is not None:
            if self.object_ids.shape != (n,):
                raise SceneError("object_ids shape mismatch")
            if n and (self.object_ids.min() < 0 or self.object_ids.max() > MAX_OBJECT_IDS):
                raise SceneError("object_ids out of range [0, 256]")
        if not (np.all(self.background >= 0) and np.all(self.background <= 1)):
            raise SceneError("background color outside [0, 1]")

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacities_raw=self.opacities_raw.copy(),
            sh_dc=self.sh_dc.copy(),
            sh_rest=self.sh_rest.copy(),
            features=self.features.copy(),
            object_ids=None if self.object_ids is None else self.object_ids.copy(),
            background=self.background.copy(),
            classifier=None if self.classifier is None else self.classifier.copy(),
        )

    def subset(self, indices: np.ndarray) -> "GaussianScene":
        indices = np.asarray(indices)
        return GaussianScene(
            positions=self.positions[indices],
            log_scales=self.log_scales[indices],
            rotations=self.rotations[indices],
            opacities_raw=self.opacities_raw[indices],
            sh_dc=self.sh_dc[indices],
            sh_rest=self.sh_rest[indices],
            features=self.features[indices],
            object_ids=None if self.object_ids is None else self.object_ids[indices],
            background=self.background.copy(),
            classifier=None if self.classifier is None else self.classifier.copy(),
        )

    def present_object_ids(self) -> np.ndarray:
        """Distinct nonzero object ids, ascending."""
        if self.object_ids is None:
            return np.zeros(0, dtype=np.int32)
        ids = np.unique(self.object_ids)
        return ids[ids > 0].astype(np.int32)


def concat_scenes(a: GaussianScene, b: GaussianScene) -> GaussianScene:
    """Append b's splats after a's. Background/classifier come from a."""
    ids = None
    if a.object_ids is not None or b.object_ids is not None:
        ia = a.object_ids if a.object_ids is not None else np.zeros(len(a), np.int32)
        ib = b.object_ids if b.object_ids is not None else np.zeros(len(b), np.int32)
        ids = np.concatenate([ia, ib]).astype(np.int32)
    return GaussianScene(
        positions=np.concatenate([a.positions, b.positions]),
        log_scales=np.concatenate([a.log_scales, b.log_scales]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        opacities_raw=np.concatenate([a.opacities_raw, b.opacities_raw]),
        sh_dc=np.concatenate([a.sh_dc, b.sh_dc]),
        sh_rest=np.concatenate([a.sh_rest, b.sh_rest]),
        features=np.concatenate([a.features, b.features]),
        object_ids=ids,
        background=a.background.copy(),
        classifier=None if a.classifier is None else a.classifier.copy(),
    )


def empty_scene(background=(0.0, 0.0, 0.0)) -> GaussianScene:
    return GaussianScene(
        positions=np.zeros((0, 3)),
        log_scales=np.zeros((0, 3)),
        rotations=np.zeros((0, 4)),
        opacities_raw=np.zeros(0),
        sh_dc=np.zeros((0, 3)),
        sh_rest=np.zeros((0, 3, SH_REST_COEFFS)),
        features=np.zeros((0, FEATURE_DIM)),
        background=np.asarray(background, dtype=np.float64),
    )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a rigid world-to-camera pose (COLMAP axes)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise SceneError("principal point outside image")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def world_to_camera(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates (+z of the camera)."""
        return self.rotation[2]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray):
        """World points -> (pixel uv (N, 2), camera-space depth z (N,))."""
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def unproject(self, u, v, depth):
        """Pixel coordinates + camera-space depth -> world points."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        x = (u - self.cx) / self.fx * depth
        y = (v - self.cy) / self.fy * depth
        pc = np.stack([x, y, depth], axis=-1)
        return (pc - self.translation) @ self.rotation


def look_at_camera(eye, target, up, fx, fy, cx, cy, width, height) -> Camera:
    """Camera at `eye` whose optical axis passes through `target`.

    `up` is the approximate world up; the image up direction aligns with it.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise SceneError("look-at target coincides with eye")
    z = z / nz
    down = -up
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        # optical axis parallel to up: pick an arbitrary orthogonal right vector
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
        if np.linalg.norm(x) < 1e-12:
            x = np.cross(np.array([0.0, 1.0, 0.0]), z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                  rotation=rot, translation=-rot @ eye)
