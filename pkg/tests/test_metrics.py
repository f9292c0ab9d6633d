import numpy as np
import pytest

from bg2.errors import (DegenerateNormalizer, EmptyJoints, FrameMismatch,
                        JointSetMismatch, MissingSourceJoint,
                        ModelCountMismatch)
from bg2.metrics import (PoseRecord, ReportRow, RigConfig, SkeletonMap,
                         bbox_from_joints, build_report, evaluate_set,
                         load_builtin_map, load_builtin_rig, nme, pck,
                         remap_skeleton)


# --- bounding box ---

def test_bbox_pad30_example():
    joints = [(100, 200), (300, 250), (150, 400)]
    assert bbox_from_joints(joints) == (70, 170, 330, 430)


def test_bbox_single_point():
    assert bbox_from_joints([(50, 50)]) == (20, 20, 80, 80)


def test_bbox_zero_pad_tight():
    joints = [(1, 9), (4, 2), (7, 5)]
    assert bbox_from_joints(joints, pad=0) == (1, 2, 7, 9)


def test_bbox_empty_rejected():
    with pytest.raises(EmptyJoints):
        bbox_from_joints([])


# --- pck ---

def rec(joints, frame="f0"):
    return PoseRecord(frame_id=frame, joints=joints)


def test_pck_perfect_prediction():
    gt = rec({"a": (10, 10), "b": (50, 80)})
    assert pck(gt, gt, (0, 0, 100, 100)) == 1.0


def test_pck_hand_case():
    # distances {3, 8}, cutoff 0.05*100 = 5 -> one of two correct
    gt = rec({"a": (0, 0), "b": (10, 0)})
    pred = rec({"a": (3, 0), "b": (10, 8)})
    assert pck(pred, gt, (0, 0, 100, 50)) == 0.5


def test_pck_boundary_inclusive():
    gt = rec({"a": (0, 0), "b": (10, 10)})
    pred = rec({"a": (5, 0), "b": (10, 15)})   # both displaced exactly 5
    assert pck(pred, gt, (0, 0, 100, 100)) == 1.0


def test_pck_joint_set_mismatch():
    with pytest.raises(JointSetMismatch):
        pck(rec({"a": (0, 0)}), rec({"b": (0, 0)}), (0, 0, 10, 10))


def test_pck_normalizer_is_max_side():
    gt = rec({"a": (0, 0)})
    pred = rec({"a": (6, 0)})
    # bbox 200 wide, 20 tall: cutoff 10 -> correct
    assert pck(pred, gt, (0, 0, 200, 20)) == 1.0
    # bbox 20 wide, 20 tall: cutoff 1 -> wrong
    assert pck(pred, gt, (0, 0, 20, 20)) == 0.0


# --- nme ---

def test_nme_zero_for_exact():
    gt = rec({"head": (0, 0), "thorax": (0, 100), "a": (5, 5)})
    assert nme(gt, gt, "head", "thorax") == 0.0


def test_nme_hand_case():
    gt = rec({"head": (0, 0), "thorax": (0, 100)})
    pred = rec({"head": (10, 0), "thorax": (0, 130)})
    # errors {10, 30}, normalizer 100 -> (0.1 + 0.3)/2 = 0.2
    assert nme(pred, gt, "head", "thorax") == pytest.approx(0.2)


def test_nme_degenerate_normalizer():
    gt = rec({"head": (5, 5), "thorax": (5, 5)})
    with pytest.raises(DegenerateNormalizer):
        nme(gt, gt, "head", "thorax")


# --- scale/translation invariance ---

def test_metrics_rigid_invariance():
    rng = np.random.default_rng(0)
    names = [f"j{i}" for i in range(14)]
    for _ in range(20):
        gt_pts = rng.uniform(0, 500, (14, 2))
        pred_pts = gt_pts + rng.normal(0, 12, (14, 2))
        gt = rec({n: tuple(p) for n, p in zip(names, gt_pts)})
        pred = rec({n: tuple(p) for n, p in zip(names, pred_pts)})
        bbox = bbox_from_joints(gt_pts)
        base_pck = pck(pred, gt, bbox)
        base_nme = nme(pred, gt, "j0", "j1")

        shift = rng.uniform(-300, 300, 2)
        scale = rng.uniform(0.2, 5.0)
        for factor, offset in [(1.0, shift), (scale, np.zeros(2))]:
            gt2 = rec({n: tuple(p * factor + offset)
                       for n, p in zip(names, gt_pts)})
            pred2 = rec({n: tuple(p * factor + offset)
                         for n, p in zip(names, pred_pts)})
            bbox2 = bbox_from_joints([p * factor + offset for p in gt_pts],
                                     pad=30 * factor)
            assert pck(pred2, gt2, bbox2) == pytest.approx(base_pck)
            assert nme(pred2, gt2, "j0", "j1") == pytest.approx(base_nme)


# --- oracle equivalence ---

def naive_pck(pred, gt, bbox, threshold=0.05):
    size = max(bbox[2] - bbox[0], bbox[3] - bbox[1])
    good = 0
    total = 0
    for name, (gx, gy) in gt.joints.items():
        px, py = pred.joints[name]
        d = ((px - gx) ** 2 + (py - gy) ** 2) ** 0.5
        good += 1 if d <= threshold * size else 0
        total += 1
    return good / total


def naive_nme(pred, gt, head, thorax):
    hx, hy = gt.joints[head]
    tx, ty = gt.joints[thorax]
    norm = ((hx - tx) ** 2 + (hy - ty) ** 2) ** 0.5
    errs = []
    for name, (gx, gy) in gt.joints.items():
        px, py = pred.joints[name]
        errs.append((((px - gx) ** 2 + (py - gy) ** 2) ** 0.5) / norm)
    return sum(errs) / len(errs)


def test_pck_nme_match_naive_oracle():
    rng = np.random.default_rng(7)
    names = [f"j{i}" for i in range(14)]
    for _ in range(200):
        gt_pts = rng.uniform(0, 900, (14, 2))
        pred_pts = gt_pts + rng.normal(0, rng.uniform(1, 40), (14, 2))
        gt = rec({n: tuple(p) for n, p in zip(names, gt_pts)})
        pred = rec({n: tuple(p) for n, p in zip(names, pred_pts)})
        bbox = bbox_from_joints(gt_pts)
        assert abs(pck(pred, gt, bbox) - naive_pck(pred, gt, bbox)) < 1e-12
        assert abs(nme(pred, gt, "j0", "j1")
                   - naive_nme(pred, gt, "j0", "j1")) < 1e-12


# --- skeleton remapping ---

def test_remap_identity():
    m = SkeletonMap(source_rig="r", target_rig="r",
                    entries=(("a", "a"), ("b", "b")))
    record = rec({"a": (1, 2), "b": (3, 4)})
    assert remap_skeleton(record, m).joints == record.joints


def test_remap_drops_and_counts():
    src = {f"s{i}": (i, i) for i in range(17)}
    entries = tuple((f"s{i}", f"t{i}") for i in range(14))
    m = SkeletonMap(source_rig="a", target_rig="b", entries=entries)
    out = remap_skeleton(rec(src), m)
    assert len(out.joints) == 14
    assert out.joints["t3"] == (3, 3)


def test_remap_missing_source():
    m = SkeletonMap(source_rig="a", target_rig="b", entries=(("zz", "t"),))
    with pytest.raises(MissingSourceJoint):
        remap_skeleton(rec({"a": (0, 0)}), m)


def test_remap_round_trip_bijective():
    entries = tuple((f"s{i}", f"t{i}") for i in range(5))
    fwd = SkeletonMap(source_rig="a", target_rig="b", entries=entries)
    back = SkeletonMap(source_rig="b", target_rig="a",
                       entries=tuple((t, s) for s, t in entries))
    record = rec({f"s{i}": (i, 2 * i) for i in range(5)})
    assert remap_skeleton(remap_skeleton(record, fwd), back).joints \
        == record.joints


def test_builtin_rigs_and_map():
    slp = load_builtin_rig("slp14")
    fit3d = load_builtin_rig("fit3d")
    assert len(slp.joints) == 14
    m = load_builtin_map()
    m.validate_against(slp.joints)
    assert {s for s, _ in m.entries} <= set(fit3d.joints)


# --- evaluate_set ---

def test_evaluate_set_perfect():
    rigt = RigConfig(name="t", joints=("head", "thorax", "a"),
                     head="head", thorax="thorax")
    gt = [rec({"head": (0, 0), "thorax": (0, 100), "a": (40, 40)}, "f0")]
    out = evaluate_set(gt, gt, rigt)
    assert out.pck == 1.0 and out.nme == 0.0 and out.frames == 1


def test_evaluate_set_mean_over_frames():
    rigt = RigConfig(name="t", joints=("head", "thorax"),
                     head="head", thorax="thorax")
    gt = [rec({"head": (0, 0), "thorax": (0, 100)}, "f0"),
          rec({"head": (0, 0), "thorax": (0, 100)}, "f1")]
    # frame f0 perfect (pck 1), frame f1 half correct (pck 0.5)
    pred = [rec({"head": (0, 0), "thorax": (0, 100)}, "f0"),
            rec({"head": (0, 0), "thorax": (0, 200)}, "f1")]
    out = evaluate_set(pred, gt, rigt)
    assert out.pck == pytest.approx(0.75)


def test_evaluate_set_through_builtin_map():
    slp = load_builtin_rig("slp14")
    skeleton_map = load_builtin_map()
    rng = np.random.default_rng(9)
    gt_joints = {n: tuple(rng.uniform(0, 200, 2)) for n in slp.joints}
    back = {t: s for s, t in skeleton_map.entries}
    pred_joints = {back[n]: v for n, v in gt_joints.items()}
    pred_joints["pelvis"] = (5.0, 5.0)        # extra source joint is dropped
    out = evaluate_set([rec(pred_joints, "f0")], [rec(gt_joints, "f0")],
                       slp, split="cover", skeleton_map=skeleton_map)
    assert out.pck == 1.0 and out.nme == 0.0
    assert out.split == "cover"


def test_evaluate_set_frame_mismatch():
    rigt = RigConfig(name="t", joints=("head", "thorax"),
                     head="head", thorax="thorax")
    gt = [rec({"head": (0, 0), "thorax": (0, 100)}, "f0")]
    with pytest.raises(FrameMismatch) as err:
        evaluate_set([], gt, rigt)
    assert "f0" in str(err.value)


# --- report ---

def table_rows():
    return [
        ReportRow("Fit3D", "No", "FT-Fit3D", 0.983, 0.147),
        ReportRow("Fit3D", "No", "FT-Mixed", 0.984, 0.142),
        ReportRow("BG2-Fit3D", "Synthetic", "FT-Fit3D", 0.933, 0.230),
        ReportRow("BG2-Fit3D", "Synthetic", "FT-Mixed", 0.977, 0.149),
        ReportRow("SLP-uncover", "No", "FT-Fit3D", 0.810, 0.262),
        ReportRow("SLP-uncover", "No", "FT-Mixed", 0.798, 0.279),
        ReportRow("SLP-cover", "Real", "FT-Fit3D", 0.313, 1.179),
        ReportRow("SLP-cover", "Real", "FT-Mixed", 0.336, 1.115),
    ]


def test_report_differences_and_best_flags():
    report = build_report(table_rows())
    assert report.difference_for("BG2-Fit3D") == (pytest.approx(0.044),
                                                  pytest.approx(-0.081))
    assert report.difference_for("SLP-cover") == (pytest.approx(0.023),
                                                  pytest.approx(-0.064))
    assert report.best_for("Fit3D") == ("FT-Mixed", "FT-Mixed")
    assert report.best_for("SLP-uncover") == ("FT-Fit3D", "FT-Fit3D")
    text = report.render_text()
    assert "Difference" in text
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0].startswith("testSet,")


def test_report_identical_models_zero_difference():
    rows = [ReportRow("S", "No", "A", 0.5, 0.2),
            ReportRow("S", "No", "B", 0.5, 0.2)]
    report = build_report(rows)
    assert report.difference_for("S") == (0.0, 0.0)


def test_report_model_count_enforced():
    rows = table_rows()[:3]
    with pytest.raises(ModelCountMismatch):
        build_report(rows)
