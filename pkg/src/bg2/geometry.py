"""Meshes, animated sequences, cameras, projection, and closest-point queries.

All positions are in meters, world frame, float64. Cameras use a pinhole
model with x right, y down in image space and z forward in camera space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import BehindCamera, DegenerateTorso

_EPS_DEPTH = 1e-9
_EPS_AXIS = 1e-6
_MIN_TRI_AREA = 1e-12


def unit(v, eps=1e-12):
    """Normalize a vector, raising on near-zero input."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < eps:
        raise ValueError(f"cannot normalize near-zero vector (norm {n:g})")
    return v / n


def aabb_of(points):
    """Axis-aligned bounds of a point cloud: (min, max) arrays of shape (3,)."""
    pts = np.asarray(points, dtype=np.float64)
    return pts.min(axis=0), pts.max(axis=0)


def aabb_support_extent(mn, mx, direction):
    """Width of the box [mn, mx] along a unit direction (support extent)."""
    ext = np.asarray(mx, dtype=np.float64) - np.asarray(mn, dtype=np.float64)
    return float(np.abs(np.asarray(direction, dtype=np.float64)) @ ext)


class SequenceCategory(enum.Enum):
    STANDING = "standing"
    LYING = "lying"
    MIXED = "mixed"

    @classmethod
    def parse(cls, text: str) -> "SequenceCategory":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown sequence category {text!r}") from None


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh: vertices (V,3), triangles (T,3) int, optional UVs (V,2).

    Winding is expected to be consistent with outward face normals when the
    mesh is used as a collision body.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "vertices",
                           np.ascontiguousarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles",
                           np.ascontiguousarray(self.triangles, dtype=np.int64))
        if self.uvs is not None:
            object.__setattr__(self, "uvs",
                               np.ascontiguousarray(self.uvs, dtype=np.float64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (V, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (T, 3)")
        if self.uvs is not None and self.uvs.shape != (len(self.vertices), 2):
            raise ValueError("uvs must have shape (V, 2)")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def validate(self):
        """Check index bounds and reject degenerate triangles."""
        if self.triangle_count and int(self.triangles.max()) >= self.vertex_count:
            raise ValueError("triangle index out of range")
        if self.triangle_count and int(self.triangles.min()) < 0:
            raise ValueError("negative triangle index")
        areas = triangle_areas(self.vertices, self.triangles)
        if self.triangle_count and float(areas.min()) <= _MIN_TRI_AREA:
            bad = int(np.argmin(areas))
            raise ValueError(f"degenerate triangle {bad} (area {areas[bad]:g} m^2)")
        return self


def triangle_areas(positions, triangles):
    a = positions[triangles[:, 0]]
    ab = positions[triangles[:, 1]] - a
    ac = positions[triangles[:, 2]] - a
    return 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)


def triangle_normals(positions, triangles):
    """Unit face normals following the triangle winding."""
    a = positions[triangles[:, 0]]
    ab = positions[triangles[:, 1]] - a
    ac = positions[triangles[:, 2]] - a
    n = np.cross(ab, ac)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return n / norms


def vertex_normals(positions, triangles):
    """Area-weighted smooth vertex normals (unit length)."""
    a = positions[triangles[:, 0]]
    cross = np.cross(positions[triangles[:, 1]] - a,
                     positions[triangles[:, 2]] - a)
    out = np.zeros_like(positions)
    for k in range(3):
        np.add.at(out, triangles[:, k], cross)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return out / norms


@dataclass(frozen=True)
class MeshSequence:
    """Shared topology plus per-frame vertex positions and named 3-D joints."""

    topology: TriMesh
    frames: np.ndarray            # (F, V, 3)
    fps: float
    joint_names: tuple[str, ...] = ()
    joints: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 3)))  # (F, J, 3)

    def __post_init__(self):
        object.__setattr__(self, "frames",
                           np.ascontiguousarray(self.frames, dtype=np.float64))
        object.__setattr__(self, "joints",
                           np.ascontiguousarray(self.joints, dtype=np.float64))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError("frames must have shape (F, V, 3)")
        if self.frames.shape[1] != self.topology.vertex_count:
            raise ValueError("frame vertex count differs from topology")
        if self.joint_names:
            if self.joints.shape != (self.frame_count, len(self.joint_names), 3):
                raise ValueError("joints must have shape (F, J, 3) matching joint_names")
        elif self.joints.size:
            raise ValueError("joints given without joint_names")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def joints_at(self, frame: int) -> dict[str, np.ndarray]:
        """Named joint positions at a frame."""
        return {name: self.joints[frame, j]
                for j, name in enumerate(self.joint_names)}


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera: world -> camera is p_c = R @ p + t."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3,3) orthonormal
    translation: np.ndarray  # (3,)
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.ascontiguousarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.ascontiguousarray(self.translation, dtype=np.float64))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be (3,3) and translation (3,)")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (deviation {err:g})")

    def to_camera(self, points):
        """World points (...,3) to camera space."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def project(camera: Camera, point):
    """Project one world point to (pixel x, pixel y, depth).

    Raises BehindCamera when the camera-space depth is <= 1e-9.
    """
    pc = camera.to_camera(np.asarray(point, dtype=np.float64))
    z = float(pc[2])
    if z <= _EPS_DEPTH:
        raise BehindCamera(f"point depth {z:g} is not in front of the camera")
    x = camera.fx * pc[0] / z + camera.cx
    y = camera.fy * pc[1] / z + camera.cy
    return float(x), float(y), z


def project_points(camera: Camera, points):
    """Vectorized projection: returns (x (N,), y (N,), depth (N,)); no depth check."""
    pc = camera.to_camera(points)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = camera.fx * pc[:, 0] / z + camera.cx
        y = camera.fy * pc[:, 1] / z + camera.cy
    return x, y, z


def unproject(camera: Camera, x, y, depth):
    """Invert project(): pixel coordinates plus depth back to a world point."""
    xc = (x - camera.cx) / camera.fx * depth
    yc = (y - camera.cy) / camera.fy * depth
    pc = np.array([xc, yc, depth], dtype=np.float64)
    return camera.rotation.T @ (pc - camera.translation)


def look_at(eye, target, world_up=(0.0, 0.0, 1.0)):
    """Rotation/translation for a camera at `eye` looking at `target`.

    Image y points opposite world_up (rows grow downward).
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = unit(np.asarray(target, dtype=np.float64) - eye)
    up = np.asarray(world_up, dtype=np.float64)
    xr = np.cross(z, up)
    if np.linalg.norm(xr) < 1e-9:
        xr = np.cross(z, np.array([0.0, 1.0, 0.0]))
        if np.linalg.norm(xr) < 1e-9:
            xr = np.cross(z, np.array([1.0, 0.0, 0.0]))
    x = unit(xr)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return rot, -rot @ eye


DEFAULT_TORSO_JOINTS = {
    "pelvis": "pelvis",
    "neck": "neck",
    "left_hip": "left_hip",
    "right_hip": "right_hip",
}


@dataclass(frozen=True)
class TorsoFrame:
    """Orthonormal body frame at the starting pose."""

    up: np.ndarray
    facing: np.ndarray
    lateral: np.ndarray


def torso_frame(joints: dict, names: dict | None = None) -> TorsoFrame:
    """Build the {up, facing, lateral} frame from pelvis/neck/hip joints.

    up points pelvis -> neck; lateral points right hip -> left hip
    (orthogonalized against up); facing = lateral x up.
    """
    names = {**DEFAULT_TORSO_JOINTS, **(names or {})}
    try:
        pelvis = np.asarray(joints[names["pelvis"]], dtype=np.float64)
        neck = np.asarray(joints[names["neck"]], dtype=np.float64)
        lhip = np.asarray(joints[names["left_hip"]], dtype=np.float64)
        rhip = np.asarray(joints[names["right_hip"]], dtype=np.float64)
    except KeyError as e:
        raise DegenerateTorso(f"missing torso joint {e.args[0]!r}") from None

    spine = neck - pelvis
    if np.linalg.norm(spine) < _EPS_AXIS:
        raise DegenerateTorso("neck coincides with pelvis")
    up = spine / np.linalg.norm(spine)

    across = lhip - rhip
    if np.linalg.norm(across) < _EPS_AXIS:
        raise DegenerateTorso("hip joints coincide")
    across = across - (across @ up) * up
    if np.linalg.norm(across) < _EPS_AXIS:
        raise DegenerateTorso("hip axis parallel to spine")
    lateral = across / np.linalg.norm(across)
    facing = np.cross(lateral, up)
    return TorsoFrame(up=up, facing=facing, lateral=lateral)


def _closest_point_pairs(a, b, c, p):
    """Closest points on triangles (a,b,c) to paired query points p.

    All arguments (P,3); returns (P,3). Region classification follows the
    standard vertex/edge/face case analysis for point-triangle distance.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        return num / np.where(den == 0.0, 1.0, den)

    v_ab = safe_div(d1, d1 - d3)[:, None]
    w_ac = safe_div(d2, d2 - d6)[:, None]
    w_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[:, None]
    denom = va + vb + vc
    v_in = safe_div(vb, denom)[:, None]
    w_in = safe_div(vc, denom)[:, None]

    res = a + ab * v_in + ac * w_in                       # face interior
    res = np.where(((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[:, None],
                   b + (c - b) * w_bc, res)               # edge bc
    res = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[:, None],
                   a + ac * w_ac, res)                    # edge ac
    res = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, res)   # vertex c
    res = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[:, None],
                   a + ab * v_ab, res)                    # edge ab
    res = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, res)   # vertex b
    res = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, res)    # vertex a
    return res


def closest_point_on_mesh(positions, triangles, query):
    """Exact closest surface point to `query` over every triangle.

    Returns (point, outward face normal of the winning triangle, distance).
    """
    positions = np.asarray(positions, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    if len(triangles) == 0:
        raise ValueError("mesh has no triangles")
    q = np.asarray(query, dtype=np.float64)
    a = positions[triangles[:, 0]]
    b = positions[triangles[:, 1]]
    c = positions[triangles[:, 2]]
    pts = _closest_point_pairs(a, b, c, np.broadcast_to(q, a.shape))
    d2 = np.einsum("ij,ij->i", pts - q, pts - q)
    best = int(np.argmin(d2))
    normal = triangle_normals(positions, triangles[best:best + 1])[0]
    return pts[best], normal, float(np.sqrt(d2[best]))


class MeshCollider:
    """Batched exact closest-point queries against one mesh frame.

    A centroid KD-tree bounds the candidate set per query; the exact
    point-triangle distance is then taken over candidates only. Results
    match the all-triangles scan exactly.
    """

    def __init__(self, positions, triangles):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self._a = self.positions[self.triangles[:, 0]]
        self._b = self.positions[self.triangles[:, 1]]
        self._c = self.positions[self.triangles[:, 2]]
        self._normals = triangle_normals(self.positions, self.triangles)
        centroids = (self._a + self._b + self._c) / 3.0
        spread = np.maximum(
            np.linalg.norm(self._a - centroids, axis=1),
            np.maximum(np.linalg.norm(self._b - centroids, axis=1),
                       np.linalg.norm(self._c - centroids, axis=1)))
        self._radius = float(spread.max()) if len(spread) else 0.0
        self._tree = cKDTree(centroids)
        self._aabb = aabb_of(self.positions)

    @property
    def aabb(self):
        return self._aabb

    def closest_points(self, queries):
        """Exact closest points: (points (N,3), normals (N,3), distances (N,))."""
        q = np.ascontiguousarray(queries, dtype=np.float64)
        n = len(q)
        if n == 0:
            empty = np.zeros((0, 3))
            return empty, empty.copy(), np.zeros(0)
        # upper bound from the nearest-centroid triangle
        _, seed = self._tree.query(q, k=1)
        seed = np.atleast_1d(seed)
        seed_pts = _closest_point_pairs(self._a[seed], self._b[seed],
                                        self._c[seed], q)
        ub = np.linalg.norm(seed_pts - q, axis=1)
        cand = self._tree.query_ball_point(q, ub + self._radius + 1e-12)

        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=n)
        qidx = np.repeat(np.arange(n), counts)
        tidx = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand]) \
            if counts.sum() else np.zeros(0, dtype=np.int64)

        pts = _closest_point_pairs(self._a[tidx], self._b[tidx],
                                   self._c[tidx], q[qidx])
        d2 = np.einsum("ij,ij->i", pts - q[qidx], pts - q[qidx])

        order = np.lexsort((tidx, d2, qidx))
        firsts = np.searchsorted(qidx[order], np.arange(n))
        pick = order[firsts]

        points = pts[pick]
        normals = self._normals[tidx[pick]]
        return points, normals, np.sqrt(d2[pick])
