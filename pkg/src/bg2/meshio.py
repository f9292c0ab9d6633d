"""Mesh-sequence file I/O.

BGMS is the toolkit's little-endian binary container for an animated body
mesh: fixed topology, per-frame vertex positions, and per-frame named 3-D
joints. A thin converter builds sequences from directories of per-frame
OBJ files so the toolkit can ingest externally produced animations.

Layout (all little-endian):
    magic "BGMS" | version u32=1 | vertexCount u32 | triCount u32
    | frameCount u32 | fps f32 | jointCount u32
    | per joint: nameLen u32 + UTF-8 bytes
    | triangles u32 x 3*triCount
    | uvCount u32 (0 or vertexCount) | UVs f32 x 2*uvCount
    | per frame: vertices f32 x 3*vertexCount, joints f32 x 3*jointCount
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import MeshSequence, TriMesh

MAGIC = b"BGMS"
VERSION = 1


def write_bgms(path, sequence: MeshSequence) -> None:
    """Serialize a MeshSequence (positions narrowed to f32)."""
    topo = sequence.topology
    j = len(sequence.joint_names)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, topo.vertex_count,
                             topo.triangle_count, sequence.frame_count))
        fh.write(struct.pack("<fI", sequence.fps, j))
        for name in sequence.joint_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(topo.triangles.astype("<u4").tobytes())
        if topo.uvs is not None:
            fh.write(struct.pack("<I", topo.vertex_count))
            fh.write(topo.uvs.astype("<f4").tobytes())
        else:
            fh.write(struct.pack("<I", 0))
        for f in range(sequence.frame_count):
            fh.write(sequence.frames[f].astype("<f4").tobytes())
            if j:
                fh.write(sequence.joints[f].astype("<f4").tobytes())


def read_bgms(path) -> MeshSequence:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a BGMS file")
    off = 4
    version, nv, nt, nf = struct.unpack_from("<IIII", data, off)
    off += 16
    if version != VERSION:
        raise ValueError(f"{path}: unsupported BGMS version {version}")
    fps, nj = struct.unpack_from("<fI", data, off)
    off += 8
    names = []
    for _ in range(nj):
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        names.append(data[off:off + ln].decode("utf-8"))
        off += ln
    tris = np.frombuffer(data, dtype="<u4", count=3 * nt, offset=off)
    tris = tris.reshape(nt, 3).astype(np.int64)
    off += 12 * nt
    (uv_count,) = struct.unpack_from("<I", data, off)
    off += 4
    uvs = None
    if uv_count:
        if uv_count != nv:
            raise ValueError(f"{path}: UV count {uv_count} != vertex count {nv}")
        uvs = np.frombuffer(data, dtype="<f4", count=2 * nv, offset=off)
        uvs = uvs.reshape(nv, 2).astype(np.float64)
        off += 8 * nv
    frames = np.empty((nf, nv, 3), dtype=np.float64)
    joints = np.empty((nf, nj, 3), dtype=np.float64)
    for f in range(nf):
        v = np.frombuffer(data, dtype="<f4", count=3 * nv, offset=off)
        frames[f] = v.reshape(nv, 3)
        off += 12 * nv
        if nj:
            jv = np.frombuffer(data, dtype="<f4", count=3 * nj, offset=off)
            joints[f] = jv.reshape(nj, 3)
            off += 12 * nj
    topo = TriMesh(frames[0], tris, uvs).validate()
    return MeshSequence(topology=topo, frames=frames, fps=float(fps),
                        joint_names=tuple(names), joints=joints)


def read_bgms_header(path) -> dict:
    """Header fields only (cheap inspection without loading frames)."""
    with open(path, "rb") as fh:
        head = fh.read(28)
    if head[:4] != MAGIC:
        raise ValueError(f"{path}: not a BGMS file")
    version, nv, nt, nf = struct.unpack_from("<IIII", head, 4)
    fps, nj = struct.unpack_from("<fI", head, 20)
    return {"version": version, "vertex_count": nv, "triangle_count": nt,
            "frame_count": nf, "fps": float(fps), "joint_count": nj}


def _parse_obj(path):
    verts, uvs, faces = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):   # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    uv = np.asarray(uvs, dtype=np.float64) if len(uvs) == len(verts) else None
    return verts, faces, uv


def sequence_from_obj_dir(directory, fps: float,
                          joints_file=None) -> MeshSequence:
    """Build a MeshSequence from a directory of per-frame OBJ files.

    Files are taken in sorted name order; the first frame fixes the
    topology. `joints_file` is an optional JSON file of the form
    {"names": [...], "frames": [[[x,y,z], ...], ...]}.
    """
    directory = Path(directory)
    obj_files = sorted(directory.glob("*.obj"))
    if not obj_files:
        raise ValueError(f"{directory}: no .obj files found")
    v0, faces, uv = _parse_obj(obj_files[0])
    frames = np.empty((len(obj_files), len(v0), 3), dtype=np.float64)
    frames[0] = v0
    for i, f in enumerate(obj_files[1:], start=1):
        v, _, _ = _parse_obj(f)
        if v.shape != v0.shape:
            raise ValueError(f"{f}: vertex count differs from first frame")
        frames[i] = v

    names: tuple[str, ...] = ()
    joints = np.zeros((0, 0, 3))
    if joints_file is not None:
        import json
        payload = json.loads(Path(joints_file).read_text(encoding="utf-8"))
        names = tuple(payload["names"])
        joints = np.asarray(payload["frames"], dtype=np.float64)
        if joints.shape != (len(obj_files), len(names), 3):
            raise ValueError("joints file shape does not match frames")
    topo = TriMesh(v0, faces, uv).validate()
    return MeshSequence(topology=topo, frames=frames, fps=fps,
                        joint_names=names, joints=joints)
