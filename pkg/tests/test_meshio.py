import numpy as np
import pytest

from bg2.fixtures import capsule_sequence
from bg2.geometry import MeshSequence, TriMesh
from bg2.meshio import read_bgms, read_bgms_header, sequence_from_obj_dir, write_bgms


def test_bgms_round_trip(tmp_path):
    seq = capsule_sequence(5, fps=25.0, velocity=(0.1, 0.0, 0.0))
    path = tmp_path / "cap.bgms"
    write_bgms(path, seq)
    back = read_bgms(path)
    assert back.fps == 25.0
    assert back.frame_count == 5
    assert back.joint_names == seq.joint_names
    assert back.topology.triangle_count == seq.topology.triangle_count
    # storage is f32: round trip must be exact at f32 precision
    assert np.array_equal(back.frames, seq.frames.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.joints, seq.joints.astype(np.float32).astype(np.float64))
    assert np.array_equal(back.topology.triangles, seq.topology.triangles)


def test_bgms_uvs_round_trip(tmp_path):
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float32)
    uvs = np.array([[0, 0], [1, 0], [0, 1]], dtype=np.float32)
    topo = TriMesh(verts, np.array([[0, 1, 2]]), uvs)
    seq = MeshSequence(topology=topo, frames=verts[None, :, :], fps=30.0)
    path = tmp_path / "tri.bgms"
    write_bgms(path, seq)
    back = read_bgms(path)
    assert back.topology.uvs is not None
    assert np.array_equal(back.topology.uvs, uvs.astype(np.float64))


def test_bgms_header(tmp_path):
    seq = capsule_sequence(3, fps=50.0)
    path = tmp_path / "cap.bgms"
    write_bgms(path, seq)
    head = read_bgms_header(path)
    assert head["frame_count"] == 3
    assert head["fps"] == 50.0
    assert head["vertex_count"] == seq.topology.vertex_count
    assert head["joint_count"] == len(seq.joint_names)


def test_bgms_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bgms"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError):
        read_bgms(path)


def test_obj_dir_converter(tmp_path):
    obj0 = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n"
    obj1 = "v 0 0 1\nv 1 0 1\nv 0 1 1\nv 1 1 1\nf 1 2 3\nf 2 4 3\n"
    (tmp_path / "f000.obj").write_text(obj0)
    (tmp_path / "f001.obj").write_text(obj1)
    joints = {"names": ["pelvis"], "frames": [[[0.5, 0.5, 0.0]], [[0.5, 0.5, 1.0]]]}
    jpath = tmp_path / "joints.json"
    import json
    jpath.write_text(json.dumps(joints))
    seq = sequence_from_obj_dir(tmp_path, fps=10.0, joints_file=jpath)
    assert seq.frame_count == 2
    assert seq.topology.vertex_count == 4
    assert seq.topology.triangle_count == 2
    assert seq.frames[1][0][2] == 1.0
    assert seq.joint_names == ("pelvis",)
    assert seq.joints[1][0][2] == 1.0
