import math

import numpy as np
import pytest

from poseforge.pose import H13, BoundingBox, Pose2D, Pose3D, center_3d, d3d, iou
from poseforge.ppi import (
    Detection,
    PoseProposal,
    PpiParams,
    average_mode,
    extract_modes,
    group_by_overlap,
    nms,
    overlap_box,
    ppi,
    rescore,
)


def make_proposal(rng, center=(200.0, 200.0), spread=40.0, score=None, pose3d=None):
    coords = rng.normal(center, spread, size=(13, 2))
    pose2d = Pose2D(coords)
    box = overlap_box(pose2d)
    if pose3d is None:
        pose3d = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
    s = float(rng.uniform(0.05, 0.95)) if score is None else score
    return PoseProposal(anchor_id=int(rng.integers(0, 5)), box=box,
                        pose2d=pose2d, pose3d=pose3d, score=s)


def inside_box_proposal(score=0.8):
    coords = np.linspace([10, 10], [90, 90], 13)
    pose2d = Pose2D(coords)
    return PoseProposal(0, BoundingBox(0, 0, 100, 100), pose2d,
                        center_3d(H13, np.zeros((13, 3))), score)


class TestRescore:
    def test_all_joints_inside_keeps_score(self):
        p = rescore(inside_box_proposal(0.8))
        assert p.rescored == 0.8

    def test_joint_on_boundary_contributes_one(self):
        coords = np.linspace([10, 10], [90, 90], 13)
        coords[0] = [0.0, 50.0]  # exactly on the left edge
        p = PoseProposal(0, BoundingBox(0, 0, 100, 100), Pose2D(coords),
                         center_3d(H13, np.zeros((13, 3))), 0.7)
        assert rescore(p).rescored == 0.7

    def test_one_joint_at_sigma_b(self):
        sigma = 25.0
        coords = np.linspace([10, 10], [90, 90], 13)
        coords[5] = [50.0, 100.0 + sigma]  # sigma_b below the bottom edge
        p = PoseProposal(0, BoundingBox(0, 0, 100, 100), Pose2D(coords),
                         center_3d(H13, np.zeros((13, 3))), 0.6)
        expected = 0.6 * (12 + math.exp(-1)) / 13
        assert abs(rescore(p, sigma).rescored - expected) < 1e-12

    def test_never_increases(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = make_proposal(rng)
            # shrink the box so joints leak out
            b = p.box
            small = BoundingBox(b.x_min + 5, b.y_min + 5, b.x_max - 5, b.y_max - 5)
            shrunk = PoseProposal(p.anchor_id, small, p.pose2d, p.pose3d, p.score)
            r = rescore(shrunk)
            assert r.rescored <= r.score + 1e-15
            inside = all(
                small.x_min <= x <= small.x_max and small.y_min <= y <= small.y_max
                for x, y in p.pose2d.coords
            )
            assert (r.rescored == r.score) == inside


def greedy_group_oracle(proposals, threshold):
    """Independent re-implementation of the greedy grouping rule."""
    boxes = [overlap_box(p.pose2d) for p in proposals]
    remaining = list(range(len(proposals)))
    groups = []
    while remaining:
        seed = remaining[0]
        for i in remaining:
            if proposals[i].rescored > proposals[seed].rescored:
                seed = i
        members = [i for i in remaining if iou(boxes[i], boxes[seed]) >= threshold]
        groups.append(members)
        remaining = [i for i in remaining if i not in members]
    return groups


def modes_oracle(group, t3d):
    """Independent re-implementation of mode extraction."""
    left = list(range(len(group)))
    modes = []
    while left:
        seed = left[0]
        for i in left:
            if group[i].rescored > group[seed].rescored:
                seed = i
        mode = [seed] + [
            i for i in left if i != seed and d3d(group[seed].pose3d, group[i].pose3d) < t3d
        ]
        modes.append(mode)
        left = [i for i in left if i not in mode]
    return modes


def ids(proposals, subset):
    index = {id(p): i for i, p in enumerate(proposals)}
    return [index[id(p)] for p in subset]


class TestGrouping:
    def test_single_proposal(self):
        rng = np.random.default_rng(1)
        p = rescore(make_proposal(rng))
        groups = group_by_overlap([p], 0.2)
        assert len(groups) == 1 and groups[0] == [p]

    def test_disjoint_boxes_two_groups(self):
        rng = np.random.default_rng(2)
        a = rescore(make_proposal(rng, center=(100, 100), spread=10))
        b = rescore(make_proposal(rng, center=(900, 900), spread=10))
        assert len(group_by_overlap([a, b], 0.1)) == 2

    def test_matches_oracle_on_random_sets(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 21))
            proposals = [
                rescore(make_proposal(
                    rng,
                    center=rng.uniform(50, 450, size=2),
                    spread=float(rng.uniform(20, 80)),
                ))
                for _ in range(n)
            ]
            threshold = float(rng.uniform(0.05, 0.6))
            got = [ids(proposals, g) for g in group_by_overlap(proposals, threshold)]
            assert got == greedy_group_oracle(proposals, threshold)

    def test_groups_partition_input(self):
        rng = np.random.default_rng(4)
        proposals = [rescore(make_proposal(rng)) for _ in range(30)]
        groups = group_by_overlap(proposals, 0.3)
        flat = [i for g in groups for i in ids(proposals, g)]
        assert sorted(flat) == list(range(30))

    def test_requires_rescored(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            group_by_overlap([make_proposal(rng)], 0.2)


class TestModes:
    def test_identical_poses_one_mode(self):
        rng = np.random.default_rng(6)
        p3 = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
        group = [rescore(make_proposal(rng, pose3d=p3)) for _ in range(5)]
        modes = extract_modes(group, 0.125)
        assert len(modes) == 1 and len(modes[0]) == 5

    def test_two_separated_subpopulations(self):
        rng = np.random.default_rng(7)
        base_a = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
        base_b = center_3d(H13, base_a.coords + rng.normal(0, 1.0, (13, 3)))
        assert d3d(base_a, base_b) > 0.5
        group = []
        for base in (base_a, base_b):
            for _ in range(4):
                p3 = center_3d(H13, base.coords + rng.normal(0, 0.01, (13, 3)))
                group.append(rescore(make_proposal(rng, pose3d=p3)))
        modes = extract_modes(group, 0.125)
        assert len(modes) == 2
        assert sorted(len(m) for m in modes) == [4, 4]
        assert [ids(group, m) for m in modes] == modes_oracle(group, 0.125)

    def test_singleton(self):
        rng = np.random.default_rng(8)
        group = [rescore(make_proposal(rng))]
        modes = extract_modes(group, 0.125)
        assert modes == [group]

    def test_seed_is_highest_scored(self):
        rng = np.random.default_rng(9)
        p3 = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
        group = [rescore(make_proposal(rng, pose3d=p3)) for _ in range(6)]
        modes = extract_modes(group, 10.0)
        top = max(group, key=lambda p: p.rescored)
        assert modes[0][0] is top


class TestAverageMode:
    def test_singleton_detection(self):
        rng = np.random.default_rng(10)
        p = rescore(make_proposal(rng))
        det = average_mode([p])
        assert det.score == p.rescored
        assert det.member_count == 1
        assert np.allclose(det.pose2d.coords, p.pose2d.coords)

    def test_two_copies_sum_scores(self):
        coords = np.linspace([10, 10], [90, 90], 13)
        p3 = center_3d(H13, np.zeros((13, 3)))
        box = BoundingBox(0, 0, 100, 100)
        a = rescore(PoseProposal(0, box, Pose2D(coords), p3, 0.3))
        b = rescore(PoseProposal(0, box, Pose2D(coords), p3, 0.2))
        det = average_mode([a, b])
        assert det.score == pytest.approx(0.5, abs=1e-12)
        assert np.abs(det.pose2d.coords - coords).max() < 1e-12

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            mode = [rescore(make_proposal(rng)) for _ in range(int(rng.integers(1, 8)))]
            det = average_mode(mode)
            s = sum(p.rescored for p in mode)
            exp2d = sum(p.rescored * p.pose2d.coords for p in mode) / s
            exp3d = sum(p.rescored * p.pose3d.coords for p in mode) / s
            assert np.abs(det.pose2d.coords - exp2d).max() < 1e-12
            assert np.abs(det.pose3d.coords - exp3d).max() < 1e-12
            assert det.score == pytest.approx(s, abs=1e-12)

    def test_all_zero_scores_unweighted(self):
        rng = np.random.default_rng(12)
        mode = [
            rescore(PoseProposal(0, BoundingBox(0, 0, 100, 100),
                                 Pose2D(rng.uniform(10, 90, (13, 2))),
                                 center_3d(H13, rng.normal(0, 0.3, (13, 3))), 0.0))
            for _ in range(3)
        ]
        det = average_mode(mode)
        assert det.score == 0.0 and det.unweighted
        exp = np.mean([p.pose2d.coords for p in mode], axis=0)
        assert np.allclose(det.pose2d.coords, exp)


class TestPpiEndToEnd:
    def test_empty_input(self):
        assert ppi([], PpiParams()) == []

    def test_noisy_replicas_concentrate(self):
        rng = np.random.default_rng(13)
        wins = 0
        trials = 50
        for _ in range(trials):
            gt3d = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
            gt2d = rng.uniform(100, 400, (13, 2))
            replicas = []
            for _ in range(12):
                p3 = center_3d(H13, gt3d.coords + rng.normal(0, 0.05, (13, 3)))
                p2 = Pose2D(gt2d + rng.normal(0, 5.0, (13, 2)))
                replicas.append(PoseProposal(0, overlap_box(Pose2D(gt2d)), p2, p3,
                                             float(rng.uniform(0.3, 0.9))))
            dets = ppi(replicas, PpiParams(iou_threshold=0.1, t3d=1.0))
            assert len(dets) == 1
            det_err = d3d(dets[0].pose3d, gt3d)
            best = min(d3d(p.pose3d, gt3d) for p in replicas)
            wins += det_err <= best
        assert wins / trials >= 0.80

    def test_two_people_two_detections(self):
        rng = np.random.default_rng(14)
        proposals = []
        for center in ((100.0, 100.0), (800.0, 100.0)):
            gt3d = center_3d(H13, rng.normal(0, 0.3, (13, 3)))
            base2d = rng.normal(center, 30, (13, 2))
            for _ in range(6):
                p3 = center_3d(H13, gt3d.coords + rng.normal(0, 0.01, (13, 3)))
                proposals.append(PoseProposal(
                    0, overlap_box(Pose2D(base2d)),
                    Pose2D(base2d + rng.normal(0, 2.0, (13, 2))), p3,
                    float(rng.uniform(0.3, 0.9))))
        dets = ppi(proposals, PpiParams(iou_threshold=0.1, t3d=0.125))
        assert len(dets) == 2

    def test_detection_count_and_score_invariants(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            proposals = [make_proposal(rng) for _ in range(int(rng.integers(1, 30)))]
            dets = ppi(proposals, PpiParams())
            assert len(dets) <= len(proposals)
            assert sum(d.member_count for d in dets) == len(proposals)
            total = sum(d.score for d in dets)
            expected = sum(rescore(p).rescored for p in proposals)
            assert total == pytest.approx(expected, abs=1e-9)
            assert all(dets[i].score >= dets[i + 1].score for i in range(len(dets) - 1))

    def test_min_score_filters(self):
        rng = np.random.default_rng(16)
        proposals = [make_proposal(rng) for _ in range(10)]
        dets_all = ppi(proposals, PpiParams())
        cut = dets_all[len(dets_all) // 2].score if len(dets_all) > 1 else 0.0
        dets_cut = ppi(proposals, PpiParams(min_score=cut + 1e-9))
        assert all(d.score > cut for d in dets_cut)


class TestNms:
    def test_singleton(self):
        rng = np.random.default_rng(17)
        p = make_proposal(rng)
        dets = nms([p], PpiParams())
        assert len(dets) == 1
        assert dets[0].member_count == 1
        assert np.array_equal(dets[0].pose2d.coords, p.pose2d.coords)

    def test_known_max_in_group(self):
        rng = np.random.default_rng(18)
        base2d = rng.normal((200, 200), 30, (13, 2))
        proposals = [
            PoseProposal(0, overlap_box(Pose2D(base2d)),
                         Pose2D(base2d + rng.normal(0, 1.0, (13, 2))),
                         center_3d(H13, rng.normal(0, 0.3, (13, 3))),
                         score)
            for score in (0.2, 0.9, 0.5)
        ]
        dets = nms(proposals, PpiParams(iou_threshold=0.1))
        assert len(dets) == 1
        top = rescore(proposals[1])
        assert dets[0].score == pytest.approx(top.rescored)

    def test_matches_argmax_per_group_oracle(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            proposals = [make_proposal(rng) for _ in range(int(rng.integers(1, 25)))]
            params = PpiParams(iou_threshold=float(rng.uniform(0.05, 0.5)))
            dets = nms(proposals, params)
            rescored = [rescore(p, params.sigma_b) for p in proposals]
            oracle_groups = greedy_group_oracle(rescored, params.iou_threshold)
            oracle_tops = sorted(
                (max((rescored[i] for i in g), key=lambda p: p.rescored).rescored
                 for g in oracle_groups),
                reverse=True,
            )
            assert len(dets) == len(oracle_groups)
            assert [d.score for d in dets] == pytest.approx(oracle_tops)

    def test_result_is_group_member(self):
        rng = np.random.default_rng(20)
        proposals = [make_proposal(rng) for _ in range(15)]
        dets = nms(proposals, PpiParams())
        originals = {tuple(p.pose2d.coords.ravel()) for p in proposals}
        for d in dets:
            assert tuple(d.pose2d.coords.ravel()) in originals
