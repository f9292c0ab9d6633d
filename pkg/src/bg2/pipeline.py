"""Two-stage batch orchestration with content-hash resumability.

Stage 1 (bake) simulates blankets and persists BGK2 files; stage 2 (render)
turns bakes into transparent layers; compositing and annotation then only
touch layers and source frames. Every output group carries a small JSON job
manifest keyed by a content hash of its inputs, so re-invoking a command
skips work whose inputs and outputs are both unchanged, and a killed run
completes the remaining jobs only. Workers never publish partial results:
files are written to temp names and committed with an atomic rename.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np
from PIL import Image

from . import compose
from .bake import (BakeFile, SimSegment, bake_video, read_bake,
                   read_bake_header)
from .cloth import gravity_direction
from .errors import Bg2Error, MissingBake, MissingSourceFrame
from .geometry import TriMesh
from .manifest import JobManifest, VideoSpec, load_manifest
from .meshio import read_bgms
from .render import RenderTarget, render_layer, srgb_decode, srgb_encode
from .texture import derive_seed, sample_params

LAYER_NAME = "{video}_{segment}_{frame:06d}_{cam}.png"


def resolve_seed(manifest: JobManifest) -> int:
    env = os.environ.get("BG2_SEED")
    return int(env) if env else manifest.seed


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _stable_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _scene_dict(video: VideoSpec) -> dict:
    scene = video.scene
    bed = None
    if scene.bed is not None:
        bed = {"center": scene.bed.center.tolist(),
               "halfExtents": scene.bed.half_extents.tolist(),
               "orientation": scene.bed.orientation.tolist()}
    return {"floorUp": scene.floor_up.tolist(),
            "bedDirection": scene.bed_direction.tolist(),
            "bed": bed}


def _lights_dict(video: VideoSpec) -> list:
    return [{"center": l.center.tolist(), "uAxis": l.u_axis.tolist(),
             "vAxis": l.v_axis.tolist(), "radiance": l.radiance.tolist(),
             "samples": l.samples} for l in video.scene.lights]


def _camera_dict(cam) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "rotation": cam.rotation.tolist(),
            "translation": cam.translation.tolist(),
            "width": cam.width, "height": cam.height}


# --- stage 1: bake ---

def bake_dir(manifest: JobManifest, video_id: str) -> Path:
    return manifest.output_root / "bakes" / video_id


def segment_file_name(segment_id: int) -> str:
    return f"seg{segment_id:03d}.bgk2"


def _bake_job_key(manifest: JobManifest, video: VideoSpec) -> str:
    bgms_path = manifest.dataset_root / video.mesh_file
    payload = {
        "bgms": sha256_file(bgms_path),
        "category": video.category.value,
        "cloth": _stable_json(vars(manifest.cloth_params)),
        "bake": _stable_json({k: v for k, v in
                              vars(manifest.bake_config).items()}),
        "scene": _scene_dict(video),
    }
    return sha256_bytes(_stable_json(payload).encode())


def _segments_manifest_valid(seg_json: Path, job_key: str) -> bool:
    try:
        raw = json.loads(seg_json.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if raw.get("jobKey") != job_key:
        return False
    for name, digest in raw.get("files", {}).items():
        path = seg_json.parent / name
        if not path.exists() or sha256_file(path) != digest:
            return False
    return True


def _bake_one_video(manifest: JobManifest, video_id: str, job_key: str) -> dict:
    video = manifest.video(video_id)
    sequence = read_bgms(manifest.dataset_root / video.mesh_file)
    gravity = gravity_direction(video.category, sequence.joints_at(0),
                                video.scene.floor_up,
                                video.scene.bed_direction)
    bakes, segments = bake_video(sequence, video.category, gravity,
                                 video.scene.bed, manifest.cloth_params,
                                 manifest.bake_config, video_id)
    out_dir = bake_dir(manifest, video_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for bk in bakes:
        name = segment_file_name(bk.segment_id)
        buf = io.BytesIO()
        _write_bake_to(buf, bk)
        data = buf.getvalue()
        atomic_write_bytes(out_dir / name, data)
        files[name] = sha256_bytes(data)
    payload = {"jobKey": job_key,
               "videoId": video_id,
               "gravity": gravity.tolist(),
               "frameCount": sequence.frame_count,
               "fps": sequence.fps,
               "segments": [s.to_dict() for s in segments],
               "files": files}
    atomic_write_text(out_dir / "segments.json",
                      json.dumps(payload, indent=2, sort_keys=True))
    return {"videoId": video_id, "segments": len(segments),
            "frames": sequence.frame_count}


def _write_bake_to(buf, bake: BakeFile) -> None:
    import struct
    buf.write(b"BGK2")
    buf.write(struct.pack("<II", 1, bake.segment_id))
    buf.write(struct.pack("<HH", bake.nx, bake.ny))
    buf.write(struct.pack("<ff", bake.spacing, bake.fps))
    buf.write(struct.pack("<II", bake.first_frame, bake.frame_count))
    buf.write(np.asarray(bake.gravity, dtype="<f4").tobytes())
    buf.write(bake.frames.astype("<f4").tobytes())


def _bake_worker(manifest_path: str, video_id: str, job_key: str) -> dict:
    manifest = load_manifest(manifest_path)
    return _bake_one_video(manifest, video_id, job_key)


def _write_dataset_index(manifest: JobManifest) -> None:
    videos = []
    for video in manifest.videos:
        seg_json = bake_dir(manifest, video.video_id) / "segments.json"
        if not seg_json.exists():
            continue
        raw = json.loads(seg_json.read_text(encoding="utf-8"))
        resolutions = sorted({f"{c.width}x{c.height}"
                              for c in video.cameras.values()})
        videos.append({"videoId": video.video_id,
                       "subjectId": video.subject_id,
                       "exerciseType": video.exercise_type,
                       "category": video.category.value,
                       "frames": raw["frameCount"],
                       "fps": raw["fps"],
                       "resolutions": resolutions,
                       "cameras": list(video.cameras),
                       "segmentsFile": f"bakes/{video.video_id}/segments.json"})
    videos.sort(key=lambda v: v["videoId"])
    atomic_write_text(manifest.output_root / "dataset.json",
                      json.dumps({"videos": videos}, indent=2, sort_keys=True))


def cmd_bake(manifest: JobManifest, manifest_path, jobs: int | None = None):
    """Bake every video; returns (results, errors, skipped_ids)."""
    jobs = jobs or os.cpu_count() or 1
    todo = []
    skipped = []
    errors = []
    for video in manifest.videos:
        try:
            job_key = _bake_job_key(manifest, video)
        except OSError as e:
            errors.append((video.video_id, f"missing mesh file: {e}"))
            continue
        seg_json = bake_dir(manifest, video.video_id) / "segments.json"
        if _segments_manifest_valid(seg_json, job_key):
            skipped.append(video.video_id)
        else:
            todo.append((video.video_id, job_key))

    results = []
    if jobs == 1 or len(todo) <= 1:
        for video_id, job_key in todo:
            try:
                results.append(_bake_one_video(manifest, video_id, job_key))
            except Bg2Error as e:
                errors.append((video_id, str(e)))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_bake_worker, str(manifest_path),
                                   vid, key): vid
                       for vid, key in todo}
            for fut in as_completed(futures):
                vid = futures[fut]
                try:
                    results.append(fut.result())
                except Bg2Error as e:
                    errors.append((vid, str(e)))
    _write_dataset_index(manifest)
    return results, errors, skipped


# --- stage 2: render ---

def layer_dir(manifest: JobManifest, video_id: str, tex_index: int) -> Path:
    return manifest.output_root / "layers" / video_id / f"tex{tex_index:02d}"


def _render_job_key(bake_hash: str, cam_dict: dict, lights: list,
                    tex_json: str) -> str:
    payload = {"bake": bake_hash, "camera": cam_dict, "lights": lights,
               "texture": tex_json}
    return sha256_bytes(_stable_json(payload).encode())


def _render_manifest_valid(path: Path, job_key: str) -> bool:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if raw.get("jobKey") != job_key:
        return False
    for name, digest in raw.get("files", {}).items():
        f = path.parent / name
        if not f.exists() or sha256_file(f) != digest:
            return False
    return True


def _load_segments(manifest: JobManifest, video_id: str) -> dict:
    seg_json = bake_dir(manifest, video_id) / "segments.json"
    if not seg_json.exists():
        raise MissingBake(f"{video_id}: run the bake stage first "
                          f"(missing {seg_json})")
    return json.loads(seg_json.read_text(encoding="utf-8"))


def _render_one_job(manifest: JobManifest, video_id: str, segment_id: int,
                    cam_id: str, tex_index: int, seed: int,
                    job_key: str) -> dict:
    video = manifest.video(video_id)
    camera = video.cameras[cam_id]
    bake = read_bake(bake_dir(manifest, video_id)
                     / segment_file_name(segment_id))
    sequence = read_bgms(manifest.dataset_root / video.mesh_file)
    tex_seed = derive_seed(seed, segment_id, tex_index)
    params = sample_params(tex_seed, manifest.texture_ranges)

    out_dir = layer_dir(manifest, video_id, tex_index)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for k in range(bake.frame_count):
        src_frame = bake.first_frame + k
        body = TriMesh(sequence.frames[src_frame],
                       sequence.topology.triangles)
        target = render_layer(bake.frames[k].astype(np.float64),
                              bake.nx, bake.ny, body, camera,
                              video.scene.lights, params)
        name = LAYER_NAME.format(video=video_id, segment=segment_id,
                                 frame=src_frame, cam=cam_id)
        png = _png_bytes(target)
        depth = _depth_bytes(target)
        depth_name = Path(name).stem + ".depth.npy"
        atomic_write_bytes(out_dir / name, png)
        atomic_write_bytes(out_dir / depth_name, depth)
        files[name] = sha256_bytes(png)
        files[depth_name] = sha256_bytes(depth)
    payload = {"jobKey": job_key, "videoId": video_id,
               "segmentId": segment_id, "camId": cam_id,
               "texIndex": tex_index, "textureSeed": tex_seed,
               "textureParams": json.loads(params.to_json()),
               "files": files}
    atomic_write_text(out_dir / f"job_seg{segment_id:03d}_{cam_id}.json",
                      json.dumps(payload, indent=2, sort_keys=True))
    return {"videoId": video_id, "segmentId": segment_id, "camId": cam_id,
            "texIndex": tex_index, "frames": bake.frame_count}


def _png_bytes(target: RenderTarget) -> bytes:
    rgb = srgb_encode(np.clip(target.color[:, :, :3], 0.0, 1.0))
    alpha = np.clip(target.color[:, :, 3], 0.0, 1.0)
    img = np.round(np.concatenate([rgb, alpha[:, :, None]], axis=2)
                   * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, "RGBA").save(buf, format="PNG")
    return buf.getvalue()


def _depth_bytes(target: RenderTarget) -> bytes:
    buf = io.BytesIO()
    np.save(buf, target.depth.astype(np.float32))
    return buf.getvalue()


def _render_worker(manifest_path: str, video_id: str, segment_id: int,
                   cam_id: str, tex_index: int, seed: int,
                   job_key: str) -> dict:
    manifest = load_manifest(manifest_path)
    return _render_one_job(manifest, video_id, segment_id, cam_id,
                           tex_index, seed, job_key)


def cmd_render(manifest: JobManifest, manifest_path,
               textures_per_segment: int, jobs: int | None = None):
    """Render layers for every (segment, camera, texture draw).

    Returns (results, errors, skipped job tuples).
    """
    jobs = jobs or os.cpu_count() or 1
    seed = resolve_seed(manifest)
    todo = []
    skipped = []
    errors = []
    for video in manifest.videos:
        seg_info = _load_segments(manifest, video.video_id)
        lights = _lights_dict(video)
        for seg in seg_info["segments"]:
            sid = int(seg["segmentId"])
            name = segment_file_name(sid)
            bake_path = bake_dir(manifest, video.video_id) / name
            if not bake_path.exists():
                raise MissingBake(f"{video.video_id}: missing {bake_path}")
            bake_hash = sha256_file(bake_path)
            for cam_id, cam in video.cameras.items():
                for ti in range(textures_per_segment):
                    tex_seed = derive_seed(seed, sid, ti)
                    params = sample_params(tex_seed, manifest.texture_ranges)
                    job_key = _render_job_key(bake_hash, _camera_dict(cam),
                                              lights, params.to_json())
                    job_manifest = (layer_dir(manifest, video.video_id, ti)
                                    / f"job_seg{sid:03d}_{cam_id}.json")
                    job = (video.video_id, sid, cam_id, ti)
                    if _render_manifest_valid(job_manifest, job_key):
                        skipped.append(job)
                    else:
                        todo.append((job, job_key))

    results = []
    if jobs == 1 or len(todo) <= 1:
        for (vid, sid, cam_id, ti), key in todo:
            try:
                results.append(_render_one_job(manifest, vid, sid, cam_id,
                                               ti, seed, key))
            except Bg2Error as e:
                errors.append(((vid, sid, cam_id, ti), str(e)))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {}
            for (vid, sid, cam_id, ti), key in todo:
                fut = pool.submit(_render_worker, str(manifest_path), vid,
                                  sid, cam_id, ti, seed, key)
                futures[fut] = (vid, sid, cam_id, ti)
            for fut in as_completed(futures):
                job = futures[fut]
                try:
                    results.append(fut.result())
                except Bg2Error as e:
                    errors.append((job, str(e)))
    return results, errors, skipped


# --- compositing ---

def composite_dir(manifest: JobManifest, video_id: str, tex_index: int) -> Path:
    return manifest.output_root / "composites" / video_id / f"tex{tex_index:02d}"


def _read_source_frame(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingSourceFrame(str(path))
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return srgb_decode(img / 255.0)


def _composite_rgb_png(rgb_linear: np.ndarray) -> bytes:
    img = np.round(srgb_encode(np.clip(rgb_linear, 0.0, 1.0))
                   * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def cmd_composite(manifest: JobManifest):
    """Composite every rendered layer over its source frame and annotate.

    Missing source frames and unreadable layers are reported and skipped;
    all other frames complete. Returns (records_written, errors).
    """
    errors = []
    written = 0
    sequences = {}
    for video in manifest.videos:
        vid = video.video_id
        layers_root = manifest.output_root / "layers" / vid
        if not layers_root.exists():
            continue
        if vid not in sequences:
            sequences[vid] = read_bgms(manifest.dataset_root / video.mesh_file)
        sequence = sequences[vid]
        for tex_dir in sorted(layers_root.iterdir()):
            if not tex_dir.is_dir() or not tex_dir.name.startswith("tex"):
                continue
            ti = int(tex_dir.name[3:])
            records = []
            for job_file in sorted(tex_dir.glob("job_seg*.json")):
                job = json.loads(job_file.read_text(encoding="utf-8"))
                cam_id = job["camId"]
                camera = video.cameras[cam_id]
                sid = int(job["segmentId"])
                tex_seed = int(job["textureSeed"])
                layer_names = sorted(n for n in job["files"]
                                     if n.endswith(".png"))
                for name in layer_names:
                    frame = int(name.rsplit("_", 2)[1])
                    try:
                        layer = RenderTarget.load(tex_dir / name)
                        src = video.source_frame_path(manifest.dataset_root,
                                                      cam_id, frame)
                        bg = _read_source_frame(src)
                        if bg.shape[:2] != layer.color.shape[:2]:
                            raise MissingSourceFrame(
                                f"{src}: size {bg.shape[1]}x{bg.shape[0]} "
                                f"does not match layer")
                        out_rgb = compose.alpha_over(layer.color, bg)
                        out_dir = composite_dir(manifest, vid, ti)
                        atomic_write_bytes(out_dir / name,
                                           _composite_rgb_png(out_rgb))
                        record = compose.annotation_record(
                            vid, sid, frame, cam_id,
                            sequence.joints_at(frame), camera, layer,
                            tex_seed)
                        records.append(record)
                        written += 1
                    except Bg2Error as e:
                        errors.append((f"{vid}/tex{ti:02d}/{name}", str(e)))
            if records:
                ann_dir = manifest.output_root / "annotations"
                lines = "".join(json.dumps(r, sort_keys=True) + "\n"
                                for r in records)
                atomic_write_text(ann_dir / f"{vid}_tex{ti:02d}.jsonl", lines)
    return written, errors


# --- validation ---

_CATEGORIES = ("standing", "lying", "mixed")


def cmd_validate(output_root):
    """Summarize the output tree and cross-check its bookkeeping.

    Returns (summary, problems). Problems make the CLI exit non-zero.
    """
    output_root = Path(output_root)
    problems = []
    index_path = output_root / "dataset.json"
    videos = []
    if not index_path.exists():
        problems.append(f"missing {index_path}")
    else:
        try:
            videos = json.loads(index_path.read_text(encoding="utf-8"))["videos"]
        except (json.JSONDecodeError, KeyError) as e:
            problems.append(f"unreadable dataset index: {e}")

    counts = {c: {"subjects": set(), "exercises": set(), "videos": 0,
                  "segments": 0, "frames": 0} for c in _CATEGORIES}
    resolutions = set()
    framerates = set()

    for video in videos:
        cat = video.get("category", "")
        if cat not in counts:
            problems.append(f"{video.get('videoId')}: unknown category {cat!r}")
            continue
        c = counts[cat]
        c["videos"] += 1
        c["frames"] += int(video["frames"])
        if video.get("subjectId"):
            c["subjects"].add(video["subjectId"])
        if video.get("exerciseType"):
            c["exercises"].add(video["exerciseType"])
        resolutions.update(video.get("resolutions", []))
        framerates.add(float(video["fps"]))

        seg_path = output_root / video["segmentsFile"]
        if not seg_path.exists():
            problems.append(f"{video['videoId']}: missing {seg_path}")
            continue
        seg_info = json.loads(seg_path.read_text(encoding="utf-8"))
        segments = [SimSegment.from_dict(s) for s in seg_info["segments"]]
        c["segments"] += len(segments)
        expected = 0
        for seg in sorted(segments, key=lambda s: s.first_frame):
            if seg.first_frame != expected:
                problems.append(
                    f"{video['videoId']}: segment {seg.segment_id} starts at "
                    f"{seg.first_frame}, expected {expected}")
            expected = seg.last_frame + 1
            bake_path = seg_path.parent / segment_file_name(seg.segment_id)
            if not bake_path.exists():
                problems.append(f"{video['videoId']}: missing {bake_path}")
                continue
            head = read_bake_header(bake_path)
            if head["frame_count"] != seg.frame_count:
                problems.append(
                    f"{video['videoId']}: {bake_path.name} holds "
                    f"{head['frame_count']} frames, segment spans "
                    f"{seg.frame_count}")
        if expected != int(video["frames"]):
            problems.append(
                f"{video['videoId']}: segments cover {expected} frames, "
                f"video has {video['frames']}")

    if not videos:
        problems.append("output contains no videos")

    summary = {
        "categories": {
            cat: {"subjects": len(c["subjects"]),
                  "exerciseTypes": len(c["exercises"]),
                  "videos": c["videos"],
                  "segments": c["segments"],
                  "frames": c["frames"]}
            for cat, c in counts.items()},
        "total": {
            "subjects": len(set().union(*(c["subjects"] for c in counts.values()))),
            "exerciseTypes": len(set().union(*(c["exercises"] for c in counts.values()))),
            "videos": sum(c["videos"] for c in counts.values()),
            "segments": sum(c["segments"] for c in counts.values()),
            "frames": sum(c["frames"] for c in counts.values())},
        "resolution": ", ".join(sorted(resolutions)) or "-",
        "framerate": ", ".join(f"{f:g} fps" for f in sorted(framerates)) or "-",
    }
    return summary, problems


def format_summary_table(summary: dict) -> str:
    """Dataset summary in the usual four-column layout."""
    cats = summary["categories"]
    total = summary["total"]
    cols = ["Standing", "Lying", "Mixed", "Total"]
    keys = ["standing", "lying", "mixed"]

    def row(label, field):
        vals = [str(cats[k][field]) for k in keys] + [str(total[field])]
        return f"{label:<16}" + "".join(f"{v:>10}" for v in vals)

    span = f"{'':<16}" + "{:>40}"
    lines = [f"{'':<16}" + "".join(f"{c:>10}" for c in cols),
             row("Subjects", "subjects"),
             row("Exercise Types", "exerciseTypes"),
             row("Videos", "videos"),
             row("Segments", "segments"),
             row("Frames", "frames"),
             span.format(f"Resolution: {summary['resolution']}"),
             span.format(f"Framerate: {summary['framerate']}")]
    return "\n".join(lines) + "\n"
