"""Pose, box, and distance primitives shared by every other module.

Conventions used throughout the package:

* 2D coordinates are pixels, x to the right and y downward.
* 3D coordinates are meters, torso-centered: the mean over the spec's
  torso anchor joints is the origin. The z axis points into the image
  plane, so dropping z from an oriented 3D pose yields its 2D layout.
* All arrays are float64; pose objects are immutable value objects and
  every operation here is pure, so unrestricted concurrent use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Margin used when deriving a bounding box from the joints of a pose,
# as a fraction of the tight box extent (split evenly on both sides).
DEFAULT_BOX_MARGIN = 0.10


@dataclass(frozen=True)
class PoseSpec:
    """Joint layout shared by all poses of one skeleton convention.

    Attributes:
        name: short identifier ("h13", "h17") used in serialized files.
        joint_names: one label per joint.
        torso_anchor_joints: indices whose coordinate mean defines the
            torso center (the origin of torso-centered 3D poses).
        head_joints: indices defining the head segment for PCKh; the
            first entry is the head joint, the mean of the remaining
            entries gives the segment base (neck) point.
        kinematic_tree: parent index per joint, -1 at the single root.
        lower_body_joints: indices treated as lower body (hips, knees,
            ankles) when building upper-body anchor variants.
    """

    name: str
    joint_names: tuple[str, ...]
    torso_anchor_joints: tuple[int, ...]
    head_joints: tuple[int, ...]
    kinematic_tree: tuple[int, ...]
    lower_body_joints: tuple[int, ...] = ()

    def __post_init__(self):
        j = len(self.joint_names)
        if j < 2:
            raise ValueError(f"need at least 2 joints, got {j}")
        if len(self.kinematic_tree) != j:
            raise ValueError("kinematic_tree length must equal joint count")
        if not self.torso_anchor_joints:
            raise ValueError("torso_anchor_joints must be non-empty")
        for grp in (self.torso_anchor_joints, self.head_joints, self.lower_body_joints):
            if any(i < 0 or i >= j for i in grp):
                raise ValueError(f"joint index out of range in {grp}")
        if len(self.head_joints) < 2:
            raise ValueError("head_joints needs a head joint plus base joints")
        roots = [i for i, p in enumerate(self.kinematic_tree) if p == -1]
        if len(roots) != 1:
            raise ValueError(f"kinematic_tree must have exactly one root, got {roots}")
        # every joint must reach the root without cycles
        for i in range(j):
            seen, cur = set(), i
            while cur != -1:
                if cur in seen:
                    raise ValueError("kinematic_tree contains a cycle")
                seen.add(cur)
                p = self.kinematic_tree[cur]
                if p != -1 and not (0 <= p < j):
                    raise ValueError(f"invalid parent {p} for joint {cur}")
                cur = p

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def root_joint(self) -> int:
        return self.kinematic_tree.index(-1)

    @property
    def upper_body_joints(self) -> tuple[int, ...]:
        lower = set(self.lower_body_joints)
        return tuple(i for i in range(self.joint_count) if i not in lower)

    @property
    def head_torso_joints(self) -> tuple[int, ...]:
        """Head + torso anchor joints, used for conservative overlap boxes."""
        return (self.head_joints[0],) + self.torso_anchor_joints


H13 = PoseSpec(
    name="h13",
    joint_names=(
        "head",
        "left_shoulder", "right_shoulder",
        "left_elbow", "right_elbow",
        "left_wrist", "right_wrist",
        "left_hip", "right_hip",
        "left_knee", "right_knee",
        "left_ankle", "right_ankle",
    ),
    torso_anchor_joints=(1, 2, 7, 8),
    head_joints=(0, 1, 2),  # neck proxy = mid-shoulders
    kinematic_tree=(-1, 0, 0, 1, 2, 3, 4, 1, 2, 7, 8, 9, 10),
    lower_body_joints=(7, 8, 9, 10, 11, 12),
)

H17 = PoseSpec(
    name="h17",
    joint_names=H13.joint_names + ("pelvis", "back", "torso", "neck"),
    torso_anchor_joints=(1, 2, 7, 8),
    head_joints=(0, 16),
    kinematic_tree=(16, 16, 16, 1, 2, 3, 4, 13, 13, 7, 8, 9, 10, -1, 13, 14, 15),
    lower_body_joints=(7, 8, 9, 10, 11, 12),
)

SPEC_REGISTRY = {H13.name: H13, H17.name: H17}


def _coords_array(coords, width) -> np.ndarray:
    arr = np.array(coords, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"expected (J, {width}) coordinates, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose2D:
    """2D pose: per-joint pixel coordinates plus a visibility flag."""

    coords: np.ndarray  # (J, 2) pixels
    visibility: np.ndarray = None  # (J,) bool; defaults to all visible

    def __post_init__(self):
        coords = _coords_array(self.coords, 2)
        object.__setattr__(self, "coords", coords)
        if self.visibility is None:
            vis = np.ones(len(coords), dtype=bool)
        else:
            vis = np.array(self.visibility, dtype=bool, copy=True)
        if vis.shape != (len(coords),):
            raise ValueError("visibility length must equal joint count")
        vis.setflags(write=False)
        object.__setattr__(self, "visibility", vis)
        if not np.isfinite(coords[vis]).all():
            raise ValueError("visible joints must have finite coordinates")

    @property
    def joint_count(self) -> int:
        return len(self.coords)


@dataclass(frozen=True, eq=False)
class Pose3D:
    """Torso-centered 3D pose in meters."""

    coords: np.ndarray  # (J, 3)

    def __post_init__(self):
        coords = _coords_array(self.coords, 3)
        if not np.isfinite(coords).all():
            raise ValueError("3D coordinates must be finite")
        object.__setattr__(self, "coords", coords)

    @property
    def joint_count(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with strictly positive extent."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True, eq=False)
class AnchorPose:
    """Canonical paired 2D-3D pose used as a classification target.

    The 2D layout lives in unit-box coordinates (placed into a candidate
    box via denormalize_from_box); the 3D pose is torso-centered.
    """

    id: int
    pose2d: Pose2D
    pose3d: Pose3D
    body_extent: str = "full_body"  # or "upper_body"

    def __post_init__(self):
        if self.body_extent not in ("full_body", "upper_body"):
            raise ValueError(f"unknown body_extent {self.body_extent!r}")


def center_3d(spec: PoseSpec, coords) -> Pose3D:
    """Torso-center raw (J, 3) coordinates into a Pose3D."""
    arr = np.array(coords, dtype=np.float64)
    if arr.shape != (spec.joint_count, 3):
        raise ValueError(f"expected ({spec.joint_count}, 3) coords, got {arr.shape}")
    center = arr[list(spec.torso_anchor_joints)].mean(axis=0)
    return Pose3D(arr - center)


def d3d(p: Pose3D, q: Pose3D) -> float:
    """Mean per-joint Euclidean distance between torso-centered 3D poses."""
    if p.coords.shape != q.coords.shape:
        raise ValueError(f"pose spec mismatch: {p.coords.shape} vs {q.coords.shape}")
    return float(np.linalg.norm(p.coords - q.coords, axis=1).mean())


def d3d_matrix(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Pairwise d3d between coordinate stacks a (N, J, 3) and b (M, J, 3)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"pose spec mismatch: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        blk = a[start:start + chunk]
        out[start:start + chunk] = np.linalg.norm(
            blk[:, None, :, :] - b[None, :, :, :], axis=3
        ).mean(axis=2)
    return out


def d2d(p: Pose2D, q: Pose2D, mask: np.ndarray | None = None) -> float:
    """Mean Euclidean pixel distance over a subset of joints.

    Args:
        p, q: poses with the same joint count.
        mask: boolean joint subset; must select only jointly visible
            joints. Defaults to the full set of jointly visible joints.
    """
    if p.coords.shape != q.coords.shape:
        raise ValueError(f"pose spec mismatch: {p.coords.shape} vs {q.coords.shape}")
    both = p.visibility & q.visibility
    if mask is None:
        mask = both
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != both.shape:
            raise ValueError("mask length must equal joint count")
        if (mask & ~both).any():
            raise ValueError("mask selects joints not visible in both poses")
    if not mask.any():
        raise ValueError("empty joint mask")
    return float(np.linalg.norm(p.coords[mask] - q.coords[mask], axis=1).mean())


def box_around(pose: Pose2D, margin_fraction: float = DEFAULT_BOX_MARGIN) -> BoundingBox:
    """Tight box over the visible joints, expanded by a symmetric margin.

    The margin adds margin_fraction of the tight extent per axis, half
    on each side. Degenerate inputs (no visible joints, or a single
    visible joint / zero extent, which cannot anchor a proposal box)
    raise ValueError.
    """
    vis = pose.visibility
    if not vis.any():
        raise ValueError("pose has no visible joints")
    pts = pose.coords[vis]
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    if x_max <= x_min or y_max <= y_min:
        raise ValueError("visible joints span a degenerate (zero-extent) box")
    dx = 0.5 * margin_fraction * (x_max - x_min)
    dy = 0.5 * margin_fraction * (y_max - y_min)
    return BoundingBox(x_min - dx, y_min - dy, x_max + dx, y_max + dy)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def normalize_to_box(pose: Pose2D, box: BoundingBox) -> Pose2D:
    """Map coordinates so the box corners land on (0,0) and (1,1)."""
    scale = np.array([box.width, box.height])
    offset = np.array([box.x_min, box.y_min])
    return Pose2D((pose.coords - offset) / scale, pose.visibility)


def denormalize_from_box(pose: Pose2D, box: BoundingBox) -> Pose2D:
    """Inverse of normalize_to_box."""
    scale = np.array([box.width, box.height])
    offset = np.array([box.x_min, box.y_min])
    return Pose2D(pose.coords * scale + offset, pose.visibility)


def fit_scale_offset(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray]:
    """Least-squares uniform scale + translation mapping src onto dst.

    Minimizes sum ||s * src_i + t - dst_i||^2 over scalar s and 2D/any-D
    offset t. Raises on fewer than 2 points or zero spread in src.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or len(src) < 2:
        raise ValueError("need matching point sets with at least 2 points")
    src_c = src.mean(axis=0)
    dst_c = dst.mean(axis=0)
    src0 = src - src_c
    denom = float((src0 ** 2).sum())
    if denom <= 0.0:
        raise ValueError("source points are coincident; scale is undetermined")
    s = float((src0 * (dst - dst_c)).sum() / denom)
    t = dst_c - s * src_c
    return s, t


def extrapolate_head_top(spec: PoseSpec, pose: Pose2D, ratio: float = 1.0) -> np.ndarray:
    """Head-top point extrapolated along the neck-to-head direction.

    The 13-joint spec has no head-top joint; the point at
    head + ratio * (head - neck) stands in for it when computing head
    sizes (neck = mean of the base joints in spec.head_joints).
    """
    head = pose.coords[spec.head_joints[0]]
    neck = pose.coords[list(spec.head_joints[1:])].mean(axis=0)
    return head + ratio * (head - neck)
