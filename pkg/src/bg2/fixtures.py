"""Synthetic desk-scale fixtures: a capsule body, scene, and manifest writer.

These exist so the full pipeline can run and be tested without any licensed
motion-capture data: a capsule stands in for the body mesh, carries a
plausible named joint set, and can translate over time to provoke blanket
fall-off. The same helpers double as a quick-start demo for the CLI.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import MeshSequence, TriMesh, look_at
from .meshio import write_bgms

DEFAULT_CENTER = (0.0, 0.0, 0.9)
DEFAULT_RADIUS = 0.15
DEFAULT_LENGTH = 1.0


def capsule_mesh(radius: float = DEFAULT_RADIUS, length: float = DEFAULT_LENGTH,
                 half_rings: int = 4, cyl_rings: int = 4,
                 segments: int = 14) -> TriMesh:
    """Capsule along +x centered at the origin, outward winding."""
    xs = []
    rhos = []
    for k in range(half_rings):
        th = -0.5 * np.pi + (k + 1) * (0.5 * np.pi / (half_rings + 1))
        xs.append(-length / 2 + radius * np.sin(th))
        rhos.append(radius * np.cos(th))
    for k in range(cyl_rings + 1):
        xs.append(-length / 2 + length * k / cyl_rings)
        rhos.append(radius)
    for k in range(half_rings):
        th = (k + 1) * (0.5 * np.pi / (half_rings + 1))
        xs.append(length / 2 + radius * np.sin(th))
        rhos.append(radius * np.cos(th))

    verts = [np.array([-length / 2 - radius, 0.0, 0.0])]
    for x, rho in zip(xs, rhos):
        phi = 2.0 * np.pi * np.arange(segments) / segments
        ring = np.stack([np.full(segments, x), rho * np.cos(phi),
                         rho * np.sin(phi)], axis=1)
        verts.extend(ring)
    verts.append(np.array([length / 2 + radius, 0.0, 0.0]))
    verts = np.asarray(verts)

    tris = []
    nring = len(xs)

    def ring_v(r, s):
        return 1 + r * segments + (s % segments)

    for s in range(segments):                      # south cap fan
        tris.append([0, ring_v(0, s + 1), ring_v(0, s)])
    for r in range(nring - 1):
        for s in range(segments):
            a0 = ring_v(r, s)
            a1 = ring_v(r, s + 1)
            b0 = ring_v(r + 1, s)
            b1 = ring_v(r + 1, s + 1)
            tris.append([a0, b0, b1])
            tris.append([a0, b1, a1])
    north = len(verts) - 1
    for s in range(segments):                      # north cap fan
        tris.append([north, ring_v(nring - 1, s), ring_v(nring - 1, s + 1)])
    tris = np.asarray(tris, dtype=np.int64)

    # enforce outward normals (valid for a convex solid around the axis)
    a = verts[tris[:, 0]]
    n = np.cross(verts[tris[:, 1]] - a, verts[tris[:, 2]] - a)
    centers = (a + verts[tris[:, 1]] + verts[tris[:, 2]]) / 3.0
    axis_pt = centers.copy()
    axis_pt[:, 1:] = 0.0
    axis_pt[:, 0] = np.clip(axis_pt[:, 0], -length / 2, length / 2)
    flip = np.einsum("ij,ij->i", n, centers - axis_pt) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return TriMesh(verts, tris).validate()


def capsule_joints(center, radius: float = DEFAULT_RADIUS,
                   length: float = DEFAULT_LENGTH) -> dict:
    """Plausible named joints for a capsule 'body' lying along +x."""
    cx, cy, cz = center
    L = length

    def at(dx, dy, dz):
        return np.array([cx + dx * L, cy + dy, cz + dz])

    return {
        "pelvis": at(0.0, 0.0, 0.0),
        "thorax": at(0.20, 0.0, 0.02),
        "neck": at(0.30, 0.0, 0.03),
        "head": at(0.40, 0.0, 0.05),
        "head_top": at(0.50, 0.0, 0.06),
        "left_hip": at(-0.05, 0.08, -0.02),
        "right_hip": at(-0.05, -0.08, -0.02),
        "left_knee": at(-0.30, 0.07, -0.04),
        "right_knee": at(-0.30, -0.07, -0.04),
        "left_ankle": at(-0.55, 0.07, -0.06),
        "right_ankle": at(-0.55, -0.07, -0.06),
        "left_shoulder": at(0.25, 0.10, 0.0),
        "right_shoulder": at(0.25, -0.10, 0.0),
        "left_elbow": at(0.10, 0.14, -0.02),
        "right_elbow": at(0.10, -0.14, -0.02),
        "left_wrist": at(-0.05, 0.16, -0.04),
        "right_wrist": at(-0.05, -0.16, -0.04),
    }


def capsule_sequence(frame_count: int, fps: float = 25.0,
                     velocity=(0.0, 0.0, 0.0), center=DEFAULT_CENTER,
                     radius: float = DEFAULT_RADIUS,
                     length: float = DEFAULT_LENGTH) -> MeshSequence:
    """Capsule body video; `velocity` (m/s) translates it linearly."""
    mesh = capsule_mesh(radius=radius, length=length)
    center = np.asarray(center, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    base = mesh.vertices + center
    joints = capsule_joints(center, radius, length)
    names = tuple(joints)
    jbase = np.stack([joints[n] for n in names])

    frames = np.empty((frame_count, len(base), 3))
    jtracks = np.empty((frame_count, len(names), 3))
    for f in range(frame_count):
        off = velocity * (f / fps)
        frames[f] = base + off
        jtracks[f] = jbase + off
    topo = TriMesh(frames[0], mesh.triangles)
    return MeshSequence(topology=topo, frames=frames, fps=fps,
                        joint_names=names, joints=jtracks)


def fixture_cameras(center=DEFAULT_CENTER, distance: float = 2.4,
                    width: int = 128, height: int = 128) -> list[dict]:
    """Four calibrated viewpoints around (and above) the body."""
    center = np.asarray(center, dtype=np.float64)
    eyes = {
        "c0": center + np.array([0.0, -distance, 0.6]),
        "c1": center + np.array([0.0, distance, 0.6]),
        "c2": center + np.array([distance, 0.0, 0.8]),
        "c3": center + np.array([0.15, 0.0, distance]),   # near-overhead
    }
    cams = []
    f = 1.1 * width
    for cam_id, eye in eyes.items():
        rot, t = look_at(eye, center)
        cams.append({"camId": cam_id, "fx": f, "fy": f,
                     "cx": width / 2.0, "cy": height / 2.0,
                     "rotation": rot.tolist(), "translation": t.tolist(),
                     "width": width, "height": height})
    return cams


def fixture_scene(center=DEFAULT_CENTER) -> dict:
    cx, cy, cz = center
    bed_top = cz - DEFAULT_RADIUS - 0.01
    lights = []
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        lights.append({"center": [cx + 1.2 * sx, cy + 1.2 * sy, cz + 2.2],
                       "uAxis": [0.5, 0.0, 0.0], "vAxis": [0.0, 0.5, 0.0],
                       "radiance": [7.0, 7.0, 7.0], "samples": 4})
    return {
        "floorUp": [0.0, 0.0, 1.0],
        "bedDirection": [0.0, 0.0, -1.0],
        "bed": {"center": [cx, cy, bed_top - 0.15],
                "halfExtents": [1.4, 1.0, 0.15],
                "orientation": np.eye(3).tolist()},
        "lights": lights,
    }


def write_source_frames(frames_dir: Path, cam_ids, frame_count: int,
                        width: int, height: int) -> None:
    """Deterministic ramp backgrounds standing in for real video frames."""
    xs = np.linspace(40, 215, width, dtype=np.uint8)
    ys = np.linspace(60, 195, height, dtype=np.uint8)
    base = np.empty((height, width, 3), dtype=np.uint8)
    base[:, :, 0] = xs[None, :]
    base[:, :, 1] = ys[:, None]
    for c, cam_id in enumerate(cam_ids):
        out = frames_dir / cam_id
        out.mkdir(parents=True, exist_ok=True)
        img = base.copy()
        img[:, :, 2] = 90 + 40 * c
        for f in range(frame_count):
            Image.fromarray(img, "RGB").save(out / f"{f:06d}.png",
                                             format="PNG")


def write_fixture_dataset(root, videos, width: int = 128, height: int = 128,
                          seed: int = 1234, cloth: dict | None = None,
                          bake: dict | None = None,
                          with_source_frames: bool = True) -> Path:
    """Materialize BGMS files, source frames, and a manifest under `root`.

    `videos` is a list of dicts:
        {"videoId", "frames", optional "velocity", "fps", "category",
         "subjectId", "exerciseType"}
    Returns the manifest path.
    """
    root = Path(root)
    data = root / "data"
    data.mkdir(parents=True, exist_ok=True)
    cameras = fixture_cameras(width=width, height=height)
    cam_ids = [c["camId"] for c in cameras]
    scene = fixture_scene()

    entries = []
    for v in videos:
        video_id = v["videoId"]
        seq = capsule_sequence(v["frames"], fps=v.get("fps", 25.0),
                               velocity=v.get("velocity", (0.0, 0.0, 0.0)))
        write_bgms(data / f"{video_id}.bgms", seq)
        if with_source_frames:
            write_source_frames(data / "frames" / video_id, cam_ids,
                                v["frames"], width, height)
        entries.append({
            "videoId": video_id,
            "subjectId": v.get("subjectId", "s1"),
            "exerciseType": v.get("exerciseType", "rest"),
            "category": v.get("category", "lying"),
            "meshFile": f"{video_id}.bgms",
            "sourceFrames": f"frames/{video_id}/{{cam}}/{{frame:06d}}.png",
            "cameras": cameras,
            "scene": scene,
        })

    manifest = {
        "datasetRoot": "data",
        "outputRoot": "out",
        "seed": seed,
        "clothParams": cloth or {},
        "bakeConfig": bake or {"nx": 32, "ny": 32, "settleFrames": 20},
        "videos": entries,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path
