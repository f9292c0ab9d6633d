"""Stage 2: rasterize baked cloth into transparent RGBA layers.

The body mesh is drawn depth-only (a holdout): it occludes the blanket but
contributes neither color nor alpha, so compositing the layer over the
original frame puts the blanket behind the person exactly where it should
be. The bed is never drawn at all.

Rasterization is a deterministic z-buffer scan with perspective-correct
barycentric interpolation; coverage uses a top-left fill rule on edge ties
so shared edges are claimed by exactly one triangle. Shading is Lambertian
under stratified samples of rectangular area lights, in linear RGB; sRGB
encoding happens only at PNG write time. Alpha is binary coverage and is
stored straight (not premultiplied).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import texture as tex
from .errors import CorruptLayer
from .geometry import Camera, TriMesh, vertex_normals

_NEAR = 1e-6


@dataclass(frozen=True)
class AreaLight:
    """Rectangular light: center plus two half-extent axis vectors."""

    center: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    radiance: np.ndarray      # linear RGB * intensity
    samples: int = 4

    def __post_init__(self):
        for name in ("center", "u_axis", "v_axis", "radiance"):
            object.__setattr__(self, name,
                               np.ascontiguousarray(getattr(self, name),
                                                    dtype=np.float64))
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        cr = np.linalg.norm(np.cross(self.u_axis, self.v_axis))
        if cr < 1e-12:
            raise ValueError("light axes must be non-zero and non-parallel")

    def sample_points(self) -> np.ndarray:
        """Deterministic stratified points on the rectangle, shape (samples, 3)."""
        su = int(np.ceil(np.sqrt(self.samples)))
        sv = int(np.ceil(self.samples / su))
        fu = (np.arange(su) + 0.5) / su * 2.0 - 1.0
        fv = (np.arange(sv) + 0.5) / sv * 2.0 - 1.0
        gu, gv = np.meshgrid(fu, fv, indexing="ij")
        pts = (self.center[None, :]
               + gu.ravel()[:, None] * self.u_axis[None, :]
               + gv.ravel()[:, None] * self.v_axis[None, :])
        return pts[: self.samples]


def shade(points, normals, albedo, lights) -> np.ndarray:
    """Lambertian radiance at surface points under area lights.

    points/normals/albedo are (...,3) and broadcastable; each light
    contributes radiance * albedo * max(0, n.w) / (pi * d^2 * samples)
    summed over its sample points.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    a = np.atleast_2d(np.asarray(albedo, dtype=np.float64))
    out = np.zeros(np.broadcast(p, n, a).shape, dtype=np.float64)
    for light in lights:
        for s in light.sample_points():
            w = s[None, :] - p
            d2 = np.einsum("ij,ij->i", w, w)
            d2 = np.where(d2 < 1e-18, 1e-18, d2)
            w = w / np.sqrt(d2)[:, None]
            cos = np.maximum(0.0, np.einsum("ij,ij->i", n, w))
            out = out + (light.radiance[None, :] * a
                         * (cos / (np.pi * d2 * light.samples))[:, None])
    out = np.maximum(out, 0.0)
    if np.asarray(points).ndim == 1:
        return out[0]
    return out


@dataclass
class RenderTarget:
    """Linear RGBA color plus per-pixel depth in meters (+inf = empty)."""

    width: int
    height: int
    color: np.ndarray     # (H, W, 4) float64, straight alpha
    depth: np.ndarray     # (H, W) float64

    @classmethod
    def create(cls, width: int, height: int) -> "RenderTarget":
        return cls(width=width, height=height,
                   color=np.zeros((height, width, 4), dtype=np.float64),
                   depth=np.full((height, width), np.inf, dtype=np.float64))

    def save(self, path) -> None:
        """Write an 8-bit sRGB PNG (straight alpha) plus a depth sidecar."""
        path = Path(path)
        rgb = srgb_encode(np.clip(self.color[:, :, :3], 0.0, 1.0))
        alpha = np.clip(self.color[:, :, 3], 0.0, 1.0)
        out = np.concatenate([rgb, alpha[:, :, None]], axis=2)
        img = (np.round(out * 255.0)).astype(np.uint8)
        Image.fromarray(img, "RGBA").save(path, format="PNG")
        np.save(depth_sidecar(path), self.depth.astype(np.float32))

    @classmethod
    def load(cls, path) -> "RenderTarget":
        path = Path(path)
        try:
            img = np.asarray(Image.open(path).convert("RGBA"), dtype=np.float64)
        except Exception as e:
            raise CorruptLayer(f"{path}: {e}") from None
        rgb = srgb_decode(img[:, :, :3] / 255.0)
        alpha = img[:, :, 3] / 255.0
        sidecar = depth_sidecar(path)
        if not sidecar.exists():
            raise CorruptLayer(f"{path}: missing depth sidecar {sidecar.name}")
        depth = np.load(sidecar).astype(np.float64)
        if depth.shape != alpha.shape:
            raise CorruptLayer(f"{path}: depth sidecar shape mismatch")
        color = np.concatenate([rgb, alpha[:, :, None]], axis=2)
        return cls(width=img.shape[1], height=img.shape[0],
                   color=color, depth=depth)


def depth_sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".depth.npy")


def srgb_encode(linear):
    linear = np.asarray(linear, dtype=np.float64)
    return np.where(linear <= 0.0031308,
                    12.92 * linear,
                    1.055 * np.power(np.maximum(linear, 1e-12), 1.0 / 2.4) - 0.055)


def srgb_decode(encoded):
    encoded = np.asarray(encoded, dtype=np.float64)
    return np.where(encoded <= 0.04045,
                    encoded / 12.92,
                    np.power((encoded + 0.055) / 1.055, 2.4))


@dataclass(frozen=True)
class ClothSurface:
    """Triangulated cloth grid with UVs, smooth normals, and row tangents."""

    mesh: TriMesh
    normals: np.ndarray     # (V, 3) unit
    tangents: np.ndarray    # (V, 3) d(position)/du direction, unit


def cloth_surface(positions, nx: int, ny: int) -> ClothSurface:
    """Triangulate a baked cloth frame (row-major grid, index i*ny + j).

    UV(i, j) = (i/(nx-1), j/(ny-1)); two triangles per cell; vertex normals
    are area-weighted averages of incident face normals.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (nx * ny, 3):
        raise ValueError(f"expected {(nx * ny, 3)} positions, got {pos.shape}")
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    uvs = np.stack([ii.ravel() / (nx - 1), jj.ravel() / (ny - 1)], axis=1)

    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    v00 = (ci * ny + cj).ravel()
    v10 = ((ci + 1) * ny + cj).ravel()
    v01 = (ci * ny + cj + 1).ravel()
    v11 = ((ci + 1) * ny + cj + 1).ravel()
    tris = np.concatenate([np.stack([v00, v10, v11], axis=1),
                           np.stack([v00, v11, v01], axis=1)])
    mesh = TriMesh(pos, tris, uvs)
    normals = vertex_normals(pos, tris)

    grid = pos.reshape(nx, ny, 3)
    tan = np.empty_like(grid)
    tan[1:-1] = grid[2:] - grid[:-2]
    tan[0] = grid[1] - grid[0]
    tan[-1] = grid[-1] - grid[-2]
    tan = tan.reshape(-1, 3)
    norms = np.linalg.norm(tan, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return ClothSurface(mesh=mesh, normals=normals, tangents=tan / norms)


def _edge(ax, ay, bx, by, px, py):
    """Signed edge function; positive on the interior side after orientation
    normalization. Shared with the fill-rule decision below."""
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _accepts_zero(ax, ay, bx, by):
    """Top-left rule: an on-edge pixel belongs to the triangle iff the edge
    is horizontal going +x (top) or rising in -y (left)."""
    dx = bx - ax
    dy = by - ay
    return (dy < 0.0) or (dy == 0.0 and dx > 0.0)


def _clip_near(tri_cam, attrs):
    """Clip a camera-space triangle against z >= _NEAR.

    attrs is a list of per-vertex attribute arrays; returns a list of
    (tri_cam, tri_attrs) triangles (possibly 0, 1, or 2).
    """
    inside = tri_cam[:, 2] >= _NEAR
    if inside.all():
        return [(tri_cam, attrs)]
    if not inside.any():
        return []
    poly = []
    poly_attrs = []
    for k in range(3):
        a, b = k, (k + 1) % 3
        pa, pb = tri_cam[a], tri_cam[b]
        ia, ib = inside[a], inside[b]
        if ia:
            poly.append(pa)
            poly_attrs.append([att[a] for att in attrs])
        if ia != ib:
            t = (_NEAR - pa[2]) / (pb[2] - pa[2])
            poly.append(pa + t * (pb - pa))
            poly_attrs.append([att[a] + t * (att[b] - att[a]) for att in attrs])
    out = []
    for k in range(1, len(poly) - 1):
        tri = np.stack([poly[0], poly[k], poly[k + 1]])
        tri_attrs = [np.stack([poly_attrs[0][j], poly_attrs[k][j],
                               poly_attrs[k + 1][j]])
                     for j in range(len(attrs))]
        out.append((tri, tri_attrs))
    return out


def _raster_triangle(target_depth, write, cam: Camera, tri_cam, attrs):
    """Rasterize one camera-space triangle with depth test.

    `write(py, px, z, bary, tri_attrs)` is called with the surviving pixel
    index arrays; bary are perspective-correct barycentric weights.
    """
    for tri, tri_attrs in _clip_near(tri_cam, attrs):
        z = tri[:, 2]
        sx = cam.fx * tri[:, 0] / z + cam.cx
        sy = cam.fy * tri[:, 1] / z + cam.cy

        area = _edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2])
        if area == 0.0:
            continue
        order = (0, 1, 2) if area > 0.0 else (0, 2, 1)
        sx = sx[list(order)]
        sy = sy[list(order)]
        z = z[list(order)]
        tri_attrs = [att[list(order)] for att in tri_attrs]

        h, w = target_depth.shape
        x_lo = max(0, int(np.floor(sx.min() - 0.5)))
        x_hi = min(w - 1, int(np.ceil(sx.max() - 0.5)))
        y_lo = max(0, int(np.floor(sy.min() - 0.5)))
        y_hi = min(h - 1, int(np.ceil(sy.max() - 0.5)))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        px, py = np.meshgrid(np.arange(x_lo, x_hi + 1),
                             np.arange(y_lo, y_hi + 1), indexing="xy")
        cx = px + 0.5
        cy = py + 0.5

        w0 = _edge(sx[1], sy[1], sx[2], sy[2], cx, cy)
        w1 = _edge(sx[2], sy[2], sx[0], sy[0], cx, cy)
        w2 = _edge(sx[0], sy[0], sx[1], sy[1], cx, cy)
        t0 = _accepts_zero(sx[1], sy[1], sx[2], sy[2])
        t1 = _accepts_zero(sx[2], sy[2], sx[0], sy[0])
        t2 = _accepts_zero(sx[0], sy[0], sx[1], sy[1])
        cover = (((w0 > 0) | ((w0 == 0) & t0))
                 & ((w1 > 0) | ((w1 == 0) & t1))
                 & ((w2 > 0) | ((w2 == 0) & t2)))
        if not cover.any():
            continue

        w0 = w0[cover]
        w1 = w1[cover]
        w2 = w2[cover]
        px = px[cover]
        py = py[cover]
        s = w0 + w1 + w2
        l0 = w0 / s
        l1 = w1 / s
        l2 = w2 / s
        inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
        depth = 1.0 / inv_z

        nearer = depth < target_depth[py, px]
        if not nearer.any():
            continue
        px = px[nearer]
        py = py[nearer]
        depth = depth[nearer]
        target_depth[py, px] = depth
        if write is not None:
            bary = (l0[nearer], l1[nearer], l2[nearer])
            write(py, px, depth, bary, z, tri_attrs)


def rasterize_depth(target: RenderTarget, mesh_positions, triangles,
                    cam: Camera) -> None:
    """Depth-only pass (holdout): occludes without writing color or alpha."""
    pos = np.asarray(mesh_positions, dtype=np.float64)
    cam_pos = cam.to_camera(pos)
    for t in np.asarray(triangles, dtype=np.int64):
        _raster_triangle(target.depth, None, cam, cam_pos[t], [])


def render_layer(bake_positions, nx: int, ny: int, body: TriMesh | None,
                 camera: Camera, lights, params: tex.TextureParams
                 ) -> RenderTarget:
    """Render one baked cloth frame to a transparent RGBA layer.

    The body mesh (if given) is a pure occluder; the bed never appears.
    Visible cloth pixels get alpha 1 and Lambertian shading of the woven
    texture; all other pixels stay (0, 0, 0, 0).
    """
    target = RenderTarget.create(camera.width, camera.height)
    if body is not None:
        rasterize_depth(target, body.vertices, body.triangles, camera)

    surface = cloth_surface(bake_positions, nx, ny)
    pos = surface.mesh.vertices
    cam_pos = camera.to_camera(pos)

    h, w = target.depth.shape
    uv_buf = np.zeros((h, w, 2))
    n_buf = np.zeros((h, w, 3))
    t_buf = np.zeros((h, w, 3))
    p_buf = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=bool)

    def write(py, px, depth, bary, z, tri_attrs):
        uvz, nz, tz, pz = tri_attrs
        l0, l1, l2 = bary
        invz = l0 / z[0] + l1 / z[1] + l2 / z[2]

        def interp(att):
            acc = (l0[:, None] * att[0][None, :] / z[0]
                   + l1[:, None] * att[1][None, :] / z[1]
                   + l2[:, None] * att[2][None, :] / z[2])
            return acc / invz[:, None]

        uv_buf[py, px] = interp(uvz)
        n_buf[py, px] = interp(nz)
        t_buf[py, px] = interp(tz)
        p_buf[py, px] = interp(pz)
        mask[py, px] = True

    for t in surface.mesh.triangles:
        _raster_triangle(target.depth, write, camera, cam_pos[t],
                         [surface.mesh.uvs[t], surface.normals[t],
                          surface.tangents[t], pos[t]])

    # body holdout ran first, so mask marks exactly the pixels where the
    # nearest surviving fragment is cloth
    if mask.any():
        ys, xs = np.nonzero(mask)
        n = n_buf[ys, xs]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        t_raw = t_buf[ys, xs]
        t_raw = t_raw - np.einsum("ij,ij->i", t_raw, n)[:, None] * n
        bad = np.linalg.norm(t_raw, axis=1) < 1e-12
        if bad.any():
            t_raw[bad] = np.array([1.0, 0.0, 0.0]) - n[bad] * n[bad, 0:1]
        t_hat = t_raw / np.linalg.norm(t_raw, axis=1, keepdims=True)
        b_hat = np.cross(n, t_hat)

        u = uv_buf[ys, xs, 0]
        v = uv_buf[ys, xs, 1]
        n_shade = tex.bump_normal(u, v, n, t_hat, b_hat, params)
        alb = tex.albedo(u, v, params)
        rgb = shade(p_buf[ys, xs], n_shade, alb, lights)
        target.color[ys, xs, :3] = rgb
        target.color[ys, xs, 3] = 1.0
    return target
