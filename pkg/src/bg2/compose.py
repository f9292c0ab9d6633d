"""Alpha-over compositing and occlusion-aware keypoint annotation."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DimensionMismatch
from .geometry import Camera, project
from .metrics import bbox_from_joints
from .render import RenderTarget


class KeypointState(enum.Enum):
    VISIBLE = "visible"
    BLANKET_OCCLUDED = "blanket_occluded"
    OUT_OF_FRAME = "out_of_frame"


@dataclass(frozen=True)
class Keypoint2D:
    """Projected joint with its occlusion state. Out-of-frame keypoints
    (including joints behind the camera, stored as (-1, -1)) always have
    coordinates outside the image bounds."""

    name: str
    x: float
    y: float
    state: KeypointState

    def to_dict(self) -> dict:
        return {"name": self.name, "x": self.x, "y": self.y,
                "state": self.state.value}


def alpha_over(fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Straight-alpha over operator: out = a * fg.rgb + (1 - a) * bg.

    fg is (H, W, 4) linear RGBA, bg is (H, W, 3) linear RGB.
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    if fg.ndim != 3 or fg.shape[2] != 4:
        raise DimensionMismatch("foreground must be (H, W, 4) RGBA")
    if bg.ndim != 3 or bg.shape[2] != 3:
        raise DimensionMismatch("background must be (H, W, 3) RGB")
    if fg.shape[:2] != bg.shape[:2]:
        raise DimensionMismatch(
            f"layer {fg.shape[:2]} does not match frame {bg.shape[:2]}")
    a = fg[:, :, 3:4]
    return a * fg[:, :, :3] + (1.0 - a) * bg


def merge_layers(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """Straight-alpha merge of two RGBA layers (top over bottom)."""
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    if top.shape != bottom.shape or top.shape[2] != 4:
        raise DimensionMismatch("layers must share an (H, W, 4) shape")
    at = top[:, :, 3:4]
    ab = bottom[:, :, 3:4]
    a_out = at + ab * (1.0 - at)
    safe = np.where(a_out == 0.0, 1.0, a_out)
    rgb = (at * top[:, :, :3] + ab * (1.0 - at) * bottom[:, :, :3]) / safe
    return np.concatenate([rgb, a_out], axis=2)


def annotate(joints: dict, camera: Camera, layer: RenderTarget,
             alpha_threshold: float = 0.5) -> list[Keypoint2D]:
    """Project named 3-D joints and classify each against the blanket layer.

    A joint is BLANKET_OCCLUDED when the layer pixel under it is covered
    (alpha > threshold) and the blanket surface is nearer than the joint.
    """
    if (layer.width, layer.height) != (camera.width, camera.height):
        raise DimensionMismatch("layer dimensions do not match the camera")
    out = []
    for name, pos in joints.items():
        try:
            x, y, depth = project(camera, pos)
        except BehindCamera:
            out.append(Keypoint2D(name, -1.0, -1.0, KeypointState.OUT_OF_FRAME))
            continue
        if not (0.0 <= x < camera.width and 0.0 <= y < camera.height):
            out.append(Keypoint2D(name, x, y, KeypointState.OUT_OF_FRAME))
            continue
        px = int(np.floor(x))
        py = int(np.floor(y))
        covered = layer.color[py, px, 3] > alpha_threshold
        if covered and layer.depth[py, px] < depth:
            state = KeypointState.BLANKET_OCCLUDED
        else:
            state = KeypointState.VISIBLE
        out.append(Keypoint2D(name, x, y, state))
    return out


def annotation_record(video_id: str, segment_id: int, frame_idx: int,
                      cam_id: str, joints: dict, camera: Camera,
                      layer: RenderTarget, texture_seed: int) -> dict:
    """One JSON-lines record for a composited frame."""
    keypoints = annotate(joints, camera, layer)
    projectable = []
    for name, pos in joints.items():
        try:
            x, y, _ = project(camera, pos)
            projectable.append((x, y))
        except BehindCamera:
            continue
    bbox = bbox_from_joints(projectable) if projectable else None
    return {"videoId": video_id,
            "segmentId": segment_id,
            "frameIdx": frame_idx,
            "camId": cam_id,
            "bbox": list(bbox) if bbox is not None else None,
            "joints": [kp.to_dict() for kp in keypoints],
            "textureSeed": int(texture_seed)}
