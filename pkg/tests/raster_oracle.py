"""Brute-force rasterization oracle for the renderer tests.

For every (pixel, triangle) pair over the whole image it evaluates coverage
from the raw edge functions (same top-left tie rule, no bounding boxes, no
incremental tricks) and perspective-correct depth, then keeps the nearest
depth per pixel (first triangle wins ties). Kept deliberately independent
of the renderer's per-triangle scanline path.
"""

import numpy as np


def oracle_rasterize(camera, world_triangles):
    """world_triangles: (T, 3, 3). Returns (cover (H,W) bool, depth (H,W),
    winner (H,W) int, -1 where empty). Scene must be fully in front of the
    camera (no clipping here)."""
    h, w = camera.height, camera.width
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5, indexing="xy")

    depth_best = np.full((h, w), np.inf)
    winner = np.full((h, w), -1, dtype=np.int64)

    for t, tri in enumerate(np.asarray(world_triangles, dtype=np.float64)):
        cam_pts = camera.to_camera(tri)
        z = cam_pts[:, 2]
        assert (z > 0).all(), "oracle scenes must be fully in front"
        sx = camera.fx * cam_pts[:, 0] / z + camera.cx
        sy = camera.fy * cam_pts[:, 1] / z + camera.cy

        area = ((sx[1] - sx[0]) * (sy[2] - sy[0])
                - (sy[1] - sy[0]) * (sx[2] - sx[0]))
        if area == 0.0:
            continue
        if area < 0.0:
            sx = sx[[0, 2, 1]]
            sy = sy[[0, 2, 1]]
            z = z[[0, 2, 1]]

        def edge(i, j):
            return ((sx[j] - sx[i]) * (py - sy[i])
                    - (sy[j] - sy[i]) * (px - sx[i]))

        def accepts_zero(i, j):
            dx = sx[j] - sx[i]
            dy = sy[j] - sy[i]
            return (dy < 0.0) or (dy == 0.0 and dx > 0.0)

        w0 = edge(1, 2)
        w1 = edge(2, 0)
        w2 = edge(0, 1)
        inside = (((w0 > 0) | ((w0 == 0) & accepts_zero(1, 2)))
                  & ((w1 > 0) | ((w1 == 0) & accepts_zero(2, 0)))
                  & ((w2 > 0) | ((w2 == 0) & accepts_zero(0, 1))))
        if not inside.any():
            continue
        s = w0 + w1 + w2
        with np.errstate(divide="ignore", invalid="ignore"):
            l0 = w0 / s
            l1 = w1 / s
            l2 = w2 / s
            inv_z = l0 / z[0] + l1 / z[1] + l2 / z[2]
            depth = 1.0 / inv_z
        better = inside & (depth < depth_best)
        depth_best[better] = depth[better]
        winner[better] = t

    return winner >= 0, depth_best, winner
