"""Pose-estimation metrics, skeleton remapping, and report building.

Conventions pinned here (they matter when comparing against other toolkits):

* the PCK normalizer is max(bbox width, bbox height), a single scalar, and
  the threshold comparison is inclusive (error <= threshold * size counts);
* ground-truth bounding boxes are the joint min/max box padded by 30 px on
  every side, never clamped to the image;
* NME divides the mean joint error by the ground-truth head-thorax distance;
* set-level aggregates weight every frame equally.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateNormalizer, EmptyJoints, FrameMismatch,
                     JointSetMismatch, MissingSourceJoint, ModelCountMismatch)

_PAD_DEFAULT = 30.0


def bbox_from_joints(joints, pad: float = _PAD_DEFAULT):
    """Joint min/max box expanded by `pad` on all four sides.

    `joints` is an iterable of (x, y) pairs; returns (xmin, ymin, xmax, ymax).
    """
    pts = np.asarray(list(joints) if not isinstance(joints, np.ndarray)
                     else joints, dtype=np.float64)
    if pts.size == 0:
        raise EmptyJoints("bounding box needs at least one joint")
    pts = pts.reshape(-1, 2)
    return (float(pts[:, 0].min() - pad), float(pts[:, 1].min() - pad),
            float(pts[:, 0].max() + pad), float(pts[:, 1].max() + pad))


@dataclass(frozen=True)
class PoseRecord:
    """Named 2-D joints of one frame."""

    frame_id: str
    joints: dict
    confidence: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "frame_id", str(self.frame_id))
        object.__setattr__(
            self, "joints",
            {str(k): (float(v[0]), float(v[1])) for k, v in self.joints.items()})

    def to_json(self) -> str:
        payload = {"frameId": self.frame_id,
                   "joints": {k: [v[0], v[1]] for k, v in self.joints.items()}}
        if self.confidence:
            payload["confidence"] = self.confidence
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "PoseRecord":
        return cls(frame_id=raw["frameId"], joints=raw["joints"],
                   confidence=raw.get("confidence"))


def read_pose_records(path) -> list[PoseRecord]:
    """Read a JSON-lines file of PoseRecords."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PoseRecord.from_dict(json.loads(line)))
    return records


def _paired_arrays(pred: PoseRecord, gt: PoseRecord):
    pred_names = set(pred.joints)
    gt_names = set(gt.joints)
    if pred_names != gt_names:
        raise JointSetMismatch(
            f"pred-only {sorted(pred_names - gt_names)}, "
            f"gt-only {sorted(gt_names - pred_names)}")
    names = sorted(gt_names)
    p = np.array([pred.joints[n] for n in names])
    g = np.array([gt.joints[n] for n in names])
    return names, p, g


def pck(pred: PoseRecord, gt: PoseRecord, bbox, threshold: float = 0.05) -> float:
    """Fraction of joints whose error is within threshold * max(bbox side)."""
    _, p, g = _paired_arrays(pred, gt)
    size = max(bbox[2] - bbox[0], bbox[3] - bbox[1])
    dist = np.linalg.norm(p - g, axis=1)
    return float(np.mean(dist <= threshold * size))


def nme(pred: PoseRecord, gt: PoseRecord, head_joint: str,
        thorax_joint: str) -> float:
    """Mean joint error normalized by the ground-truth head-thorax distance."""
    _, p, g = _paired_arrays(pred, gt)
    head = np.asarray(gt.joints[head_joint])
    thorax = np.asarray(gt.joints[thorax_joint])
    norm = float(np.linalg.norm(head - thorax))
    if norm < 1e-6:
        raise DegenerateNormalizer("head and thorax coincide in ground truth")
    return float(np.mean(np.linalg.norm(p - g, axis=1)) / norm)


@dataclass(frozen=True)
class SkeletonMap:
    """Joint-name mapping from one rig to another."""

    source_rig: str
    target_rig: str
    entries: tuple              # ((source_name, target_name), ...)

    def __post_init__(self):
        entries = tuple((str(s), str(t)) for s, t in self.entries)
        object.__setattr__(self, "entries", entries)
        targets = [t for _, t in entries]
        if len(set(targets)) != len(targets):
            raise ValueError("duplicate target joints in skeleton map")

    def validate_against(self, target_joints) -> "SkeletonMap":
        mapped = {t for _, t in self.entries}
        missing = set(target_joints) - mapped
        if missing:
            raise ValueError(f"map leaves target joints unmapped: {sorted(missing)}")
        return self

    @classmethod
    def from_json_file(cls, path) -> "SkeletonMap":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(source_rig=raw["sourceRig"], target_rig=raw["targetRig"],
                   entries=tuple((e["from"], e["to"]) for e in raw["entries"]))


def remap_skeleton(pred: PoseRecord, skeleton_map: SkeletonMap) -> PoseRecord:
    """Rename joints into the target rig; unmapped source joints are dropped."""
    joints = {}
    for src, dst in skeleton_map.entries:
        if src not in pred.joints:
            raise MissingSourceJoint(f"prediction lacks joint {src!r}")
        joints[dst] = pred.joints[src]
    return PoseRecord(frame_id=pred.frame_id, joints=joints)


@dataclass(frozen=True)
class RigConfig:
    """Joint names of a rig plus which of them normalize NME."""

    name: str
    joints: tuple
    head: str
    thorax: str

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(str(j) for j in self.joints))
        if self.head not in self.joints or self.thorax not in self.joints:
            raise ValueError("head/thorax must be rig joints")

    @classmethod
    def from_json_file(cls, path) -> "RigConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(name=raw["name"], joints=tuple(raw["joints"]),
                   head=raw["head"], thorax=raw["thorax"])


def load_builtin_rig(name: str) -> RigConfig:
    from importlib.resources import files
    return RigConfig.from_json_file(files("bg2.data") / f"{name}_rig.json")


def load_builtin_map(name: str = "fit3d_to_slp14") -> SkeletonMap:
    from importlib.resources import files
    return SkeletonMap.from_json_file(files("bg2.data") / f"{name}.json")


@dataclass(frozen=True)
class EvalResult:
    split: str
    pck: float
    nme: float
    frames: int


def evaluate_set(pred_records, gt_records, rig: RigConfig, split: str = "none",
                 skeleton_map: SkeletonMap | None = None,
                 threshold: float = 0.05, pad: float = _PAD_DEFAULT) -> EvalResult:
    """Frame-aligned PCK/NME aggregate over a test set.

    Predictions may arrive in a different rig when `skeleton_map` is given.
    Every ground-truth frame needs exactly one prediction (FrameMismatch
    otherwise); frames are weighted equally.
    """
    preds = {r.frame_id: r for r in pred_records}
    gts = {r.frame_id: r for r in gt_records}
    missing = set(gts) - set(preds)
    extra = set(preds) - set(gts)
    if missing or extra:
        raise FrameMismatch(missing=missing, extra=extra)

    pcks = []
    nmes = []
    for fid in sorted(gts):
        pred = preds[fid]
        if skeleton_map is not None:
            pred = remap_skeleton(pred, skeleton_map)
        gt = gts[fid]
        bbox = bbox_from_joints(list(gt.joints.values()), pad=pad)
        pcks.append(pck(pred, gt, bbox, threshold))
        nmes.append(nme(pred, gt, rig.head, rig.thorax))
    return EvalResult(split=split, pck=float(np.mean(pcks)),
                      nme=float(np.mean(nmes)), frames=len(pcks))


# --- reporting ---

@dataclass(frozen=True)
class ReportRow:
    test_set: str
    blanket: str          # "No" | "Synthetic" | "Real"
    model: str
    pck: float
    nme: float


@dataclass(frozen=True)
class MetricReport:
    """Per-test-set model rows plus recomputed difference rows."""

    rows: tuple
    difference_rows: tuple = field(init=False)
    best_flags: tuple = field(init=False)

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        sets: dict[str, list[ReportRow]] = {}
        for row in rows:
            sets.setdefault(row.test_set, []).append(row)
        diffs = []
        flags = []
        for name, group in sets.items():
            if len(group) != 2:
                raise ModelCountMismatch(
                    f"test set {name!r} has {len(group)} model rows, need 2")
            a, b = group
            diffs.append((name, b.pck - a.pck, b.nme - a.nme))
            best_pck = max(group, key=lambda r: r.pck).model
            best_nme = min(group, key=lambda r: r.nme).model
            flags.append((name, best_pck, best_nme))
        object.__setattr__(self, "difference_rows", tuple(diffs))
        object.__setattr__(self, "best_flags", tuple(flags))

    def difference_for(self, test_set: str):
        for name, dp, dn in self.difference_rows:
            if name == test_set:
                return dp, dn
        raise KeyError(test_set)

    def best_for(self, test_set: str):
        for name, bp, bn in self.best_flags:
            if name == test_set:
                return bp, bn
        raise KeyError(test_set)

    def render_text(self) -> str:
        """Aligned table; best PCK/NME per set marked with '*'."""
        lines = [f"{'Test set':<14}{'Blanket':<11}{'Model':<14}"
                 f"{'PCK':>8}  {'NME':>8}"]
        lines.append("-" * len(lines[0]))
        sets: dict[str, list[ReportRow]] = {}
        for row in self.rows:
            sets.setdefault(row.test_set, []).append(row)
        for name, group in sets.items():
            best_pck, best_nme = self.best_for(name)
            for row in group:
                p_mark = "*" if row.model == best_pck else " "
                n_mark = "*" if row.model == best_nme else " "
                lines.append(f"{row.test_set:<14}{row.blanket:<11}"
                             f"{row.model:<14}{row.pck:>7.3f}{p_mark} "
                             f"{row.nme:>8.3f}{n_mark}")
            dp, dn = self.difference_for(name)
            lines.append(f"{'':<14}{'':<11}{'Difference':<14}"
                         f"{dp:>+7.3f}  {dn:>+8.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["testSet", "blanket", "model", "pck", "nme",
                         "bestPck", "bestNme"])
        sets: dict[str, list[ReportRow]] = {}
        for row in self.rows:
            sets.setdefault(row.test_set, []).append(row)
        for name, group in sets.items():
            best_pck, best_nme = self.best_for(name)
            for row in group:
                writer.writerow([row.test_set, row.blanket, row.model,
                                 f"{row.pck:.6g}", f"{row.nme:.6g}",
                                 int(row.model == best_pck),
                                 int(row.model == best_nme)])
            dp, dn = self.difference_for(name)
            writer.writerow([name, group[0].blanket, "Difference",
                             f"{dp:.6g}", f"{dn:.6g}", "", ""])
        return buf.getvalue()


def build_report(rows) -> MetricReport:
    """Assemble a MetricReport; differences are always recomputed here."""
    return MetricReport(rows=tuple(rows))
