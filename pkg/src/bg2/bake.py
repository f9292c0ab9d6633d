"""Stage 1: simulate the blanket over a mesh sequence and persist the result.

A video bakes into one or more segments: the blanket is draped and settled,
then advanced frame by frame; when too much of it slides off the body the
segment is closed and a fresh drape starts a new one. Each segment persists
as a BGK2 file (little-endian binary of per-frame cloth positions) plus an
entry in a JSON segments manifest, so rendering can re-run at will without
touching the simulation.

BGK2 layout:
    magic "BGK2" | version u32=1 | segmentId u32 | nx u16 | ny u16
    | spacing f32 | fps f32 | firstFrame u32 | frameCount u32
    | gravity f32 x 3 | per frame: positions f32 x 3*nx*ny
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cloth import (ClothParams, detect_falloff, drape_init, spacing_for_body,
                    step)
from .errors import MixedExcluded, NumericalBlowup
from .geometry import MeshCollider, MeshSequence, SequenceCategory

MAGIC = b"BGK2"
VERSION = 1


class ResetReason(Enum):
    NONE = "none"
    FALL_OFF = "fall_off"


@dataclass(frozen=True)
class SimSegment:
    """Bookkeeping for one contiguous simulated span of a source video."""

    segment_id: int
    source_video_id: str
    first_frame: int
    last_frame: int
    reset_reason: ResetReason = ResetReason.NONE

    def __post_init__(self):
        if self.last_frame < self.first_frame:
            raise ValueError("segment must span at least one frame")

    @property
    def frame_count(self) -> int:
        return self.last_frame - self.first_frame + 1

    def to_dict(self) -> dict:
        return {"segmentId": self.segment_id,
                "sourceVideoId": self.source_video_id,
                "firstFrame": self.first_frame,
                "lastFrame": self.last_frame,
                "resetReason": self.reset_reason.value}

    @classmethod
    def from_dict(cls, raw: dict) -> "SimSegment":
        return cls(segment_id=int(raw["segmentId"]),
                   source_video_id=str(raw["sourceVideoId"]),
                   first_frame=int(raw["firstFrame"]),
                   last_frame=int(raw["lastFrame"]),
                   reset_reason=ResetReason(raw["resetReason"]))


@dataclass(frozen=True)
class BakeFile:
    """Persisted cloth positions for one segment."""

    nx: int
    ny: int
    spacing: float
    fps: float
    segment_id: int
    first_frame: int
    last_frame: int
    gravity: np.ndarray          # unit 3-vector
    frames: np.ndarray           # (F, nx*ny, 3) float32

    def __post_init__(self):
        object.__setattr__(self, "gravity",
                           np.ascontiguousarray(self.gravity, dtype=np.float64))
        object.__setattr__(self, "frames",
                           np.ascontiguousarray(self.frames, dtype=np.float32))
        if abs(np.linalg.norm(self.gravity) - 1.0) > 1e-6:
            raise ValueError("gravity must be unit length")
        expect = (self.last_frame - self.first_frame + 1, self.nx * self.ny, 3)
        if self.frames.shape != expect:
            raise ValueError(f"frames must have shape {expect}")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class BakeConfig:
    """Grid sizing, settle pre-roll, and fall-off thresholds for baking."""

    nx: int = 48
    ny: int = 48
    spacing: float | None = None      # None: derived from the body footprint
    cover_scale: float = 1.6
    settle_frames: int = 25
    falloff_fraction: float = 0.6
    falloff_margin: float = 0.3

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 vertices per axis")
        if not 0.0 < self.falloff_fraction <= 1.0:
            raise ValueError("falloff fraction must lie in (0, 1]")
        if self.falloff_margin < 0 or self.settle_frames < 0:
            raise ValueError("margin and settle frames must be >= 0")


def bake_video(sequence: MeshSequence, category: SequenceCategory,
               gravity, bed, params: ClothParams,
               config: BakeConfig, video_id: str):
    """Simulate one video; returns (list[BakeFile], list[SimSegment]).

    Deterministic: identical inputs give bit-identical bake frames. Raises
    MixedExcluded for mixed sequences and NumericalBlowup (annotated with
    video and frame) if the solver leaves the stable regime.
    """
    if category == SequenceCategory.MIXED:
        raise MixedExcluded(f"{video_id}: mixed sequences are excluded")
    gravity = np.asarray(gravity, dtype=np.float64)
    dt = 1.0 / sequence.fps
    total = sequence.frame_count

    bakes: list[BakeFile] = []
    segments: list[SimSegment] = []
    colliders: dict[int, MeshCollider] = {}

    def collider(frame: int) -> MeshCollider:
        if frame not in colliders:
            colliders.clear()            # keep at most one body frame alive
            colliders[frame] = MeshCollider(sequence.frames[frame],
                                            sequence.topology.triangles)
        return colliders[frame]

    seg_start = 0
    reason = ResetReason.NONE
    segment_id = 0
    while seg_start < total:
        body0 = sequence.frames[seg_start]
        spacing = config.spacing or spacing_for_body(
            body0, gravity, config.nx, config.ny, config.cover_scale)
        cloth = drape_init(config.nx, config.ny, spacing, body0,
                           gravity, params.thickness)
        try:
            for _ in range(config.settle_frames):
                cloth = step(cloth, collider(seg_start), bed, params,
                             gravity, dt)
        except NumericalBlowup as e:
            raise NumericalBlowup(
                f"{video_id}: segment {segment_id} blew up during settle "
                f"at frame {seg_start}: {e}") from None

        recorded = [cloth.positions.astype(np.float32)]
        fell_off = False
        frame = seg_start
        for frame in range(seg_start + 1, total):
            try:
                cloth = step(cloth, collider(frame), bed, params, gravity, dt)
            except NumericalBlowup as e:
                raise NumericalBlowup(
                    f"{video_id}: segment {segment_id} blew up at source "
                    f"frame {frame}: {e}") from None
            recorded.append(cloth.positions.astype(np.float32))
            body_aabb = (sequence.frames[frame].min(axis=0),
                         sequence.frames[frame].max(axis=0))
            if detect_falloff(cloth, body_aabb, config.falloff_fraction,
                              config.falloff_margin):
                fell_off = True
                break

        last = frame if total > seg_start + 1 else seg_start
        seg = SimSegment(segment_id=segment_id, source_video_id=video_id,
                         first_frame=seg_start, last_frame=last,
                         reset_reason=reason)
        segments.append(seg)
        bakes.append(BakeFile(nx=config.nx, ny=config.ny, spacing=spacing,
                              fps=sequence.fps, segment_id=segment_id,
                              first_frame=seg_start, last_frame=last,
                              gravity=gravity,
                              frames=np.stack(recorded)))
        segment_id += 1
        seg_start = last + 1
        reason = ResetReason.FALL_OFF if fell_off else ResetReason.NONE
    return bakes, segments


def write_bake(path, bake: BakeFile) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, bake.segment_id))
        fh.write(struct.pack("<HH", bake.nx, bake.ny))
        fh.write(struct.pack("<ff", bake.spacing, bake.fps))
        fh.write(struct.pack("<II", bake.first_frame, bake.frame_count))
        fh.write(np.asarray(bake.gravity, dtype="<f4").tobytes())
        fh.write(bake.frames.astype("<f4").tobytes())


def read_bake(path) -> BakeFile:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a BGK2 file")
    version, segment_id = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported BGK2 version {version}")
    nx, ny = struct.unpack_from("<HH", data, 12)
    spacing, fps = struct.unpack_from("<ff", data, 16)
    first, count = struct.unpack_from("<II", data, 24)
    off = 32
    gravity = np.frombuffer(data, dtype="<f4", count=3, offset=off).astype(np.float64)
    gravity /= np.linalg.norm(gravity)
    off += 12
    n = nx * ny
    frames = np.frombuffer(data, dtype="<f4", count=count * n * 3, offset=off)
    frames = frames.reshape(count, n, 3)
    return BakeFile(nx=nx, ny=ny, spacing=float(spacing), fps=float(fps),
                    segment_id=segment_id, first_frame=first,
                    last_frame=first + count - 1, gravity=gravity,
                    frames=frames)


def read_bake_header(path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(44)
    if head[:4] != MAGIC:
        raise ValueError(f"{path}: not a BGK2 file")
    version, segment_id = struct.unpack_from("<II", head, 4)
    nx, ny = struct.unpack_from("<HH", head, 12)
    spacing, fps = struct.unpack_from("<ff", head, 16)
    first, count = struct.unpack_from("<II", head, 24)
    return {"version": version, "segment_id": segment_id, "nx": nx, "ny": ny,
            "spacing": float(spacing), "fps": float(fps),
            "first_frame": first, "frame_count": count}
