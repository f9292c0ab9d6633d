"""Job manifest: the JSON description of a batch run.

Schema (paths relative to the manifest file unless absolute):

{
  "datasetRoot": "data",            // BGMS files + source frames live here
  "outputRoot": "out",
  "seed": 1234,
  "clothParams": { ... ClothParams fields, camelCase ... },      // optional
  "bakeConfig":  { ... BakeConfig fields ... },                  // optional
  "textureRanges": { "freqU": [lo, hi], ... },                   // optional
  "videos": [
    {
      "videoId": "v001", "subjectId": "s1", "exerciseType": "warmup",
      "category": "lying",                  // "mixed" is rejected at load
      "meshFile": "v001.bgms",
      "sourceFrames": "frames/v001/{cam}/{frame:06d}.png",       // optional
      "cameras": [ {"camId": "c0", "fx":..., "fy":..., "cx":..., "cy":...,
                    "rotation": [[...]x3], "translation": [...],
                    "width":..., "height":...} ],
      "scene": {
        "floorUp": [0,0,1],
        "bedDirection": [0,0,-1],
        "bed": {"center": [...], "halfExtents": [...],
                "orientation": [[...]x3]},                       // optional
        "lights": [ {"center": [...], "uAxis": [...], "vAxis": [...],
                     "radiance": [...], "samples": 4} ]
      }
    }
  ]
}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bake import BakeConfig
from .cloth import BedBox, ClothParams
from .errors import ManifestError, MixedExcluded
from .geometry import Camera, SequenceCategory
from .render import AreaLight
from .texture import TextureRanges


@dataclass(frozen=True)
class Scene:
    """Per-video static scene: lights, bed collider, and orientation hints."""

    lights: tuple
    bed: BedBox | None
    floor_up: np.ndarray
    bed_direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lights", tuple(self.lights))
        object.__setattr__(self, "floor_up",
                           np.ascontiguousarray(self.floor_up, dtype=np.float64))
        object.__setattr__(self, "bed_direction",
                           np.ascontiguousarray(self.bed_direction, dtype=np.float64))


@dataclass(frozen=True)
class VideoSpec:
    video_id: str
    category: SequenceCategory
    mesh_file: Path
    cameras: dict            # camId -> Camera, insertion-ordered
    scene: Scene
    source_frames: str | None = None
    subject_id: str = ""
    exercise_type: str = ""

    def source_frame_path(self, dataset_root: Path, cam_id: str,
                          frame: int) -> Path:
        if not self.source_frames:
            raise ManifestError(f"{self.video_id}: no sourceFrames pattern")
        rel = self.source_frames.format(cam=cam_id, frame=frame)
        return dataset_root / rel


@dataclass(frozen=True)
class JobManifest:
    dataset_root: Path
    output_root: Path
    seed: int
    videos: tuple
    cloth_params: ClothParams = field(default_factory=ClothParams)
    bake_config: BakeConfig = field(default_factory=BakeConfig)
    texture_ranges: TextureRanges = field(default_factory=TextureRanges)

    def video(self, video_id: str) -> VideoSpec:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)


def _camel_to_snake(name: str) -> str:
    out = []
    for ch in name:
        if ch.isupper():
            out.append("_")
            out.append(ch.lower())
        else:
            out.append(ch)
    return "".join(out)


def _kwargs_from(raw: dict, allowed: set[str], context: str) -> dict:
    kwargs = {}
    for key, value in raw.items():
        snake = _camel_to_snake(key)
        if snake not in allowed:
            raise ManifestError(f"{context}: unknown field {key!r}")
        kwargs[snake] = value
    return kwargs


def _parse_camera(raw: dict, context: str) -> tuple[str, Camera]:
    try:
        cam_id = str(raw["camId"])
        cam = Camera(fx=float(raw["fx"]), fy=float(raw["fy"]),
                     cx=float(raw["cx"]), cy=float(raw["cy"]),
                     rotation=np.asarray(raw["rotation"], dtype=np.float64),
                     translation=np.asarray(raw["translation"], dtype=np.float64),
                     width=int(raw["width"]), height=int(raw["height"]))
    except KeyError as e:
        raise ManifestError(f"{context}: camera missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise ManifestError(f"{context}: bad camera: {e}") from None
    return cam_id, cam


def _parse_scene(raw: dict, context: str) -> Scene:
    lights = []
    for i, light in enumerate(raw.get("lights", [])):
        try:
            lights.append(AreaLight(
                center=np.asarray(light["center"], dtype=np.float64),
                u_axis=np.asarray(light["uAxis"], dtype=np.float64),
                v_axis=np.asarray(light["vAxis"], dtype=np.float64),
                radiance=np.asarray(light["radiance"], dtype=np.float64),
                samples=int(light.get("samples", 4))))
        except (KeyError, ValueError) as e:
            raise ManifestError(f"{context}: light {i}: {e}") from None
    bed = None
    if raw.get("bed") is not None:
        b = raw["bed"]
        try:
            bed = BedBox(center=np.asarray(b["center"], dtype=np.float64),
                         half_extents=np.asarray(b["halfExtents"], dtype=np.float64),
                         orientation=np.asarray(
                             b.get("orientation", np.eye(3).tolist()),
                             dtype=np.float64))
        except (KeyError, ValueError) as e:
            raise ManifestError(f"{context}: bed: {e}") from None
    floor_up = np.asarray(raw.get("floorUp", [0.0, 0.0, 1.0]), dtype=np.float64)
    bed_dir = np.asarray(raw.get("bedDirection", -floor_up), dtype=np.float64)
    return Scene(lights=tuple(lights), bed=bed, floor_up=floor_up,
                 bed_direction=bed_dir)


_CLOTH_FIELDS = {"stretch_compliance", "shear_compliance", "bend_compliance",
                 "thickness", "friction", "substeps", "iterations",
                 "gravity_magnitude"}
_BAKE_FIELDS = {"nx", "ny", "spacing", "cover_scale", "settle_frames",
                "falloff_fraction", "falloff_margin"}
_TEXTURE_FIELDS = {"freq_u", "freq_v", "distort_amp", "distort_scale",
                   "bump_strength", "checker_cells", "color_a", "color_b",
                   "gray_checkers"}


def load_manifest(path) -> JobManifest:
    """Parse and validate a manifest file.

    Mixed-category videos are rejected here, loudly, so nothing downstream
    ever sees one.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: {e}") from None

    base = path.parent
    try:
        dataset_root = Path(raw["datasetRoot"])
        output_root = Path(raw["outputRoot"])
    except KeyError as e:
        raise ManifestError(f"{path}: missing field {e.args[0]!r}") from None
    if not dataset_root.is_absolute():
        dataset_root = base / dataset_root
    if not output_root.is_absolute():
        output_root = base / output_root

    cloth = ClothParams(**_kwargs_from(raw.get("clothParams", {}),
                                       _CLOTH_FIELDS, "clothParams"))
    bake = BakeConfig(**_kwargs_from(raw.get("bakeConfig", {}),
                                     _BAKE_FIELDS, "bakeConfig"))
    tex_kwargs = _kwargs_from(raw.get("textureRanges", {}),
                              _TEXTURE_FIELDS, "textureRanges")
    for key, value in tex_kwargs.items():
        if isinstance(value, list):
            tex_kwargs[key] = tuple(value)
    ranges = TextureRanges(**tex_kwargs)

    videos = []
    seen = set()
    for i, v in enumerate(raw.get("videos", [])):
        ctx = f"videos[{i}]"
        try:
            video_id = str(v["videoId"])
            category = SequenceCategory.parse(v["category"])
            mesh_file = Path(v["meshFile"])
        except KeyError as e:
            raise ManifestError(f"{ctx}: missing field {e.args[0]!r}") from None
        except ValueError as e:
            raise ManifestError(f"{ctx}: {e}") from None
        if video_id in seen:
            raise ManifestError(f"{ctx}: duplicate videoId {video_id!r}")
        seen.add(video_id)
        if category == SequenceCategory.MIXED:
            raise MixedExcluded(
                f"{ctx} ({video_id}): mixed sequences are excluded; "
                f"remove the entry or relabel the sequence")
        cam_entries = v.get("cameras", [])
        if not cam_entries:
            raise ManifestError(f"{ctx}: at least one camera is required")
        cameras = {}
        for craw in cam_entries:
            cam_id, cam = _parse_camera(craw, ctx)
            if cam_id in cameras:
                raise ManifestError(f"{ctx}: duplicate camId {cam_id!r}")
            cameras[cam_id] = cam
        scene = _parse_scene(v.get("scene", {}), ctx)
        videos.append(VideoSpec(video_id=video_id, category=category,
                                mesh_file=mesh_file, cameras=cameras,
                                scene=scene,
                                source_frames=v.get("sourceFrames"),
                                subject_id=str(v.get("subjectId", "")),
                                exercise_type=str(v.get("exerciseType", ""))))

    return JobManifest(dataset_root=dataset_root, output_root=output_root,
                       seed=int(raw.get("seed", 0)), videos=tuple(videos),
                       cloth_params=cloth, bake_config=bake,
                       texture_ranges=ranges)
