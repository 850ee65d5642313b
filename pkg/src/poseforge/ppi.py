"""Pose proposal integration: rescoring, overlap grouping, 3D mode
extraction, score-weighted averaging into detections, and the NMS
baseline that keeps only the top proposal per overlap group.

All functions are pure; per-image calls are independent. Ties on equal
rescored score are broken by lower proposal position for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from poseforge.pose import BoundingBox, Pose2D, Pose3D, d3d, iou

DEFAULT_T3D = 0.125      # meters (125 mm)
DEFAULT_IOU = 0.12
DEFAULT_SIGMA_B = 25.0   # pixels


@dataclass(frozen=True, eq=False)
class PoseProposal:
    """A refined 2D-3D pose hypothesized in a candidate box.

    score is the classification probability; rescored is filled by
    rescore() and never exceeds score.
    """

    anchor_id: int
    box: BoundingBox
    pose2d: Pose2D
    pose3d: Pose3D
    score: float
    rescored: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.rescored is not None and self.rescored > self.score + 1e-12:
            raise ValueError("rescored score cannot exceed the raw score")


@dataclass(frozen=True)
class PpiParams:
    """Thresholds for grouping and integration.

    t3d is in meters (default 0.125, i.e. 125 mm); sigma_b in pixels.
    overlap_joints optionally restricts the grouping box to a joint
    subset (e.g. head + torso) to avoid unwanted merges.
    """

    iou_threshold: float = DEFAULT_IOU
    t3d: float = DEFAULT_T3D
    sigma_b: float = DEFAULT_SIGMA_B
    min_score: float | None = None
    overlap_joints: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in [0, 1]")
        if self.t3d <= 0.0:
            raise ValueError("t3d must be positive")
        if self.sigma_b <= 0.0:
            raise ValueError("sigma_b must be positive")


@dataclass(frozen=True, eq=False)
class Detection:
    """Aggregated 2D-3D pose with the accumulated score of its mode."""

    pose2d: Pose2D
    pose3d: Pose3D
    score: float          # sum of member rescored scores
    member_count: int
    unweighted: bool = False  # True when all member scores were zero


def _boundary_distance(point: np.ndarray, box: BoundingBox) -> float:
    """Euclidean distance to the box boundary; 0 inside or on it."""
    dx = max(box.x_min - point[0], 0.0, point[0] - box.x_max)
    dy = max(box.y_min - point[1], 0.0, point[1] - box.y_max)
    return math.hypot(dx, dy)


def rescore(proposal: PoseProposal, sigma_b: float = DEFAULT_SIGMA_B) -> PoseProposal:
    """Penalize joints outside the proposal's box.

    s' = s * mean_j f(p_j, B) with f = 1 inside the box and
    exp(-D^2 / sigma_b^2) outside, D being the distance of the joint to
    the box boundary. All J regressed joints participate, visible or
    not; if every joint lies inside or on the box, s' = s exactly.
    """
    coords = proposal.pose2d.coords
    total = 0.0
    for j in range(len(coords)):
        d = _boundary_distance(coords[j], proposal.box)
        total += 1.0 if d == 0.0 else math.exp(-(d * d) / (sigma_b * sigma_b))
    s_prime = proposal.score * total / len(coords)
    return replace(proposal, rescored=s_prime)


def overlap_box(pose2d: Pose2D, joints: tuple[int, ...] | None = None) -> BoundingBox:
    """Tight box around the 2D joints used for overlap grouping.

    Uses all joint coordinates (visibility is ignored: proposals carry
    fully regressed poses); a zero extent is padded by 1e-6 px so the
    box stays valid and such a proposal simply groups alone.
    """
    coords = pose2d.coords if joints is None else pose2d.coords[list(joints)]
    x_min, y_min = coords.min(axis=0)
    x_max, y_max = coords.max(axis=0)
    if x_max <= x_min:
        x_min, x_max = x_min - 1e-6, x_max + 1e-6
    if y_max <= y_min:
        y_min, y_max = y_min - 1e-6, y_max + 1e-6
    return BoundingBox(x_min, y_min, x_max, y_max)


def _require_rescored(proposals) -> list[float]:
    scores = []
    for p in proposals:
        if p.rescored is None:
            raise ValueError("proposals must be rescored first")
        scores.append(p.rescored)
    return scores


def group_by_overlap(
    proposals: list[PoseProposal],
    iou_threshold: float = DEFAULT_IOU,
    overlap_joints: tuple[int, ...] | None = None,
) -> list[list[PoseProposal]]:
    """Greedy grouping by 2D overlap of joint bounding boxes.

    Repeatedly seeds a group with the highest-rescored unassigned
    proposal and absorbs every unassigned proposal whose joint-box IoU
    with the seed is >= iou_threshold. Groups partition the input;
    members keep their input order.
    """
    scores = _require_rescored(proposals)
    boxes = [overlap_box(p.pose2d, overlap_joints) for p in proposals]
    order = sorted(range(len(proposals)), key=lambda i: (-scores[i], i))
    unassigned = [True] * len(proposals)
    groups = []
    for seed in order:
        if not unassigned[seed]:
            continue
        member_ids = [
            i for i in range(len(proposals))
            if unassigned[i] and iou(boxes[i], boxes[seed]) >= iou_threshold
        ]
        for i in member_ids:
            unassigned[i] = False
        groups.append([proposals[i] for i in member_ids])
    return groups


def extract_modes(
    group: list[PoseProposal], t3d: float = DEFAULT_T3D
) -> list[list[PoseProposal]]:
    """Split a group into 3D modes; each mode lists its seed first.

    Repeatedly picks the highest-rescored uncovered proposal as the
    mode seed and absorbs the uncovered proposals whose d3d to the seed
    is strictly below t3d, so modes partition the group.
    """
    if not group:
        raise ValueError("empty group")
    scores = _require_rescored(group)
    covered = [False] * len(group)
    modes = []
    while not all(covered):
        seed = min(
            (i for i in range(len(group)) if not covered[i]),
            key=lambda i: (-scores[i], i),
        )
        mode = [group[seed]]
        covered[seed] = True
        for i in range(len(group)):
            if not covered[i] and d3d(group[seed].pose3d, group[i].pose3d) < t3d:
                mode.append(group[i])
                covered[i] = True
        modes.append(mode)
    return modes


def average_mode(mode: list[PoseProposal]) -> Detection:
    """Score-weighted mean of a mode's 2D and 3D poses.

    The detection score S is the sum of member rescored scores; when
    every member score is zero the poses fall back to an unweighted
    mean with S = 0, flagged via Detection.unweighted.
    """
    if not mode:
        raise ValueError("empty mode")
    weights = np.array(_require_rescored(mode))
    total = float(weights.sum())
    coords2d = np.stack([p.pose2d.coords for p in mode])
    coords3d = np.stack([p.pose3d.coords for p in mode])
    if total > 0.0:
        w = weights / total
        mean2d = np.einsum("i,ijk->jk", w, coords2d)
        mean3d = np.einsum("i,ijk->jk", w, coords3d)
        unweighted = False
    else:
        mean2d = coords2d.mean(axis=0)
        mean3d = coords3d.mean(axis=0)
        unweighted = True
    return Detection(
        pose2d=Pose2D(mean2d),
        pose3d=Pose3D(mean3d),
        score=total,
        member_count=len(mode),
        unweighted=unweighted,
    )


def _finalize(detections: list[Detection], min_score: float | None) -> list[Detection]:
    if min_score is not None:
        detections = [d for d in detections if d.score >= min_score]
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    return [detections[i] for i in order]


def ppi(proposals: list[PoseProposal], params: PpiParams = PpiParams()) -> list[Detection]:
    """Full integration: rescore, group, extract modes, average, filter.

    Returns detections sorted by descending score; every input proposal
    contributes to exactly one mode.
    """
    rescored = [rescore(p, params.sigma_b) for p in proposals]
    detections = []
    for group in group_by_overlap(rescored, params.iou_threshold, params.overlap_joints):
        for mode in extract_modes(group, params.t3d):
            detections.append(average_mode(mode))
    return _finalize(detections, params.min_score)


def nms(proposals: list[PoseProposal], params: PpiParams = PpiParams()) -> list[Detection]:
    """Baseline: keep only the top-rescored proposal of each overlap group."""
    rescored = [rescore(p, params.sigma_b) for p in proposals]
    detections = []
    for group in group_by_overlap(rescored, params.iou_threshold, params.overlap_joints):
        scores = [p.rescored for p in group]
        top = group[min(range(len(group)), key=lambda i: (-scores[i], i))]
        detections.append(
            Detection(
                pose2d=top.pose2d,
                pose3d=top.pose3d,
                score=top.rescored,
                member_count=1,
            )
        )
    return _finalize(detections, params.min_score)
