"""Position-based cloth dynamics for the blanket.

The blanket is a regular grid of particles advanced by an XPBD-style
constraint projection: predict under gravity, iterate distance-constraint
solves over structural / shear / bend neighbor pairs, then resolve body and
bed contacts by projecting penetrating vertices to an offset surface with
Coulomb-like tangential damping. Constraints are processed in vertex-disjoint
batches so the vectorized updates keep Gauss-Seidel semantics and stay
deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (ClothTooSmallWarning, DegenerateTorso, MixedExcluded,
                     NumericalBlowup)
from .geometry import (MeshCollider, SequenceCategory, aabb_support_extent,
                       torso_frame, unit)

_BLOWUP_LIMIT = 1e6


@dataclass(frozen=True)
class ClothParams:
    """Solver material and stepping parameters (XPBD compliances in m/N)."""

    stretch_compliance: float = 0.0
    shear_compliance: float = 1e-4
    bend_compliance: float = 1e-3
    thickness: float = 0.005       # collision offset, meters
    friction: float = 0.5          # tangential damping in [0, 1]
    substeps: int = 10             # many small substeps beat extra iterations:
    iterations: int = 2            # the contact/constraint equilibrium error
    gravity_magnitude: float = 9.81  # scales with the substep length squared

    def __post_init__(self):
        if min(self.stretch_compliance, self.shear_compliance,
               self.bend_compliance) < 0:
            raise ValueError("compliances must be >= 0")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if not 0.0 <= self.friction <= 1.0:
            raise ValueError("friction must lie in [0, 1]")
        if self.substeps < 1 or self.iterations < 1:
            raise ValueError("substeps and iterations must be >= 1")


@dataclass(frozen=True)
class BedBox:
    """Oriented box collider standing in for the bed."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray   # (3,3) orthonormal, columns = box axes in world

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.ascontiguousarray(self.center, dtype=np.float64))
        object.__setattr__(self, "half_extents",
                           np.ascontiguousarray(self.half_extents, dtype=np.float64))
        object.__setattr__(self, "orientation",
                           np.ascontiguousarray(self.orientation, dtype=np.float64))
        if self.half_extents.shape != (3,) or (self.half_extents <= 0).any():
            raise ValueError("half extents must be positive")
        err = np.abs(self.orientation @ self.orientation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError("orientation must be orthonormal")

    def push_out(self, points, offset: float):
        """Project points inside the box inflated by `offset` onto its surface.

        Returns (new_points, normals, moved_mask); the push is along the
        outward normal of the least-penetrated face.
        """
        p = np.asarray(points, dtype=np.float64)
        local = (p - self.center) @ self.orientation
        limit = self.half_extents + offset
        inside = (np.abs(local) < limit).all(axis=1)
        out = p.copy()
        normals = np.zeros_like(p)
        if inside.any():
            q = local[inside]
            slack = limit - np.abs(q)              # per-axis distance to exit
            axis = np.argmin(slack, axis=1)
            rows = np.arange(len(q))
            sign = np.where(q[rows, axis] >= 0.0, 1.0, -1.0)
            q[rows, axis] = sign * limit[axis]
            n_local = np.zeros_like(q)
            n_local[rows, axis] = sign
            out[inside] = q @ self.orientation.T + self.center
            normals[inside] = n_local @ self.orientation.T
        return out, normals, inside


@dataclass
class ClothGrid:
    """Grid cloth state: (nx * ny) particles, row-major with index i*ny + j."""

    nx: int
    ny: int
    spacing: float
    positions: np.ndarray        # (N, 3)
    prev_positions: np.ndarray   # (N, 3)
    velocities: np.ndarray       # (N, 3)
    inv_mass: np.ndarray         # (N,)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 vertices per axis")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        n = self.nx * self.ny
        for name in ("positions", "prev_positions", "velocities"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} must have shape ({n}, 3)")
            setattr(self, name, arr)
        self.inv_mass = np.ascontiguousarray(self.inv_mass, dtype=np.float64)
        if self.inv_mass.shape != (n,):
            raise ValueError("inv_mass must have shape (N,)")
        if (self.inv_mass < 0).any():
            raise ValueError("inverse masses must be >= 0")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions must be finite")

    def copy(self) -> "ClothGrid":
        return ClothGrid(self.nx, self.ny, self.spacing,
                         self.positions.copy(), self.prev_positions.copy(),
                         self.velocities.copy(), self.inv_mass.copy())


@lru_cache(maxsize=8)
def _constraint_batches(nx: int, ny: int):
    """Vertex-disjoint constraint batches for an nx-by-ny grid.

    Returns a tuple of (idx_a, idx_b, unit_rest, kind) where unit_rest is in
    units of grid spacing and kind is 'stretch' | 'shear' | 'bend'.
    """
    def vid(i, j):
        return i * ny + j

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    batches = []

    def add(mask, ia, ja, ib, jb, rest, kind):
        if mask.any():
            batches.append((vid(ia[mask], ja[mask]).ravel(),
                            vid(ib[mask], jb[mask]).ravel(),
                            float(rest), kind))

    # structural: grid edges, split by parity so no vertex repeats in a batch
    for par in (0, 1):
        m = (jj % 2 == par) & (jj + 1 < ny)
        add(m, ii, jj, ii, jj + 1, 1.0, "stretch")
        m = (ii % 2 == par) & (ii + 1 < nx)
        add(m, ii, jj, ii + 1, jj, 1.0, "stretch")
    # shear: cell diagonals, 4-colored by cell parity
    for pi in (0, 1):
        for pj in (0, 1):
            cell = (ii % 2 == pi) & (jj % 2 == pj) & (ii + 1 < nx) & (jj + 1 < ny)
            add(cell, ii, jj, ii + 1, jj + 1, np.sqrt(2.0), "shear")
            add(cell, ii + 1, jj, ii, jj + 1, np.sqrt(2.0), "shear")
    # bend: second neighbors along rows and columns
    for par in (0, 1):
        m = ((jj // 2) % 2 == par) & (jj + 2 < ny)
        add(m, ii, jj, ii, jj + 2, 2.0, "bend")
        m = ((ii // 2) % 2 == par) & (ii + 2 < nx)
        add(m, ii, jj, ii + 2, jj, 2.0, "bend")
    return tuple(batches)


def solve_distance_batch(positions, inv_mass, idx_a, idx_b, rest,
                         compliance, h, lamb):
    """One XPBD projection pass over a vertex-disjoint constraint batch.

    Mutates positions and the per-constraint multiplier accumulator `lamb`.
    """
    pa = positions[idx_a]
    pb = positions[idx_b]
    d = pa - pb
    length = np.linalg.norm(d, axis=1)
    safe = np.where(length < 1e-12, 1.0, length)
    n = d / safe[:, None]
    c = length - rest
    wa = inv_mass[idx_a]
    wb = inv_mass[idx_b]
    alpha = compliance / (h * h)
    denom = wa + wb + alpha
    dlam = -(c + alpha * lamb) / np.where(denom == 0.0, 1.0, denom)
    dlam = np.where(denom == 0.0, 0.0, dlam)
    lamb += dlam
    positions[idx_a] += (wa * dlam)[:, None] * n
    positions[idx_b] -= (wb * dlam)[:, None] * n


def gravity_direction(category: SequenceCategory, joints: dict,
                      floor_up, bed_direction, torso_names: dict | None = None):
    """Gravity unit vector for a sequence.

    Lying sequences pull straight down against the floor; standing sequences
    pull along the torso-facing axis, signed so the blanket is drawn toward
    the bed behind the person.
    """
    floor_up = unit(floor_up)
    if category == SequenceCategory.MIXED:
        raise MixedExcluded("mixed sequences are excluded from the pipeline")
    if category == SequenceCategory.LYING:
        return -floor_up
    frame = torso_frame(joints, torso_names)
    bed_direction = unit(bed_direction)
    along = float(frame.facing @ bed_direction)
    if abs(along) < 1e-9:
        raise DegenerateTorso("bed direction is orthogonal to the facing axis; "
                              "gravity sign is ambiguous")
    g = frame.facing if along > 0 else -frame.facing
    return g / np.linalg.norm(g)


def drape_init(nx: int, ny: int, spacing: float, body_positions,
               gravity, thickness: float) -> ClothGrid:
    """Lay out a resting blanket plane just above the body along -gravity.

    The plane is orthogonal to gravity, centered over the body's bounding
    box, offset by half the box's extent along gravity plus five cloth
    thicknesses. Velocities start at zero.
    """
    g = unit(gravity)
    body = np.asarray(body_positions, dtype=np.float64)
    mn, mx = body.min(axis=0), body.max(axis=0)
    center = 0.5 * (mn + mx)
    offset = 0.5 * aabb_support_extent(mn, mx, g) + 5.0 * thickness
    origin = center - offset * g

    # in-plane axes: deterministic frame orthogonal to gravity
    ref = np.array([1.0, 0.0, 0.0])
    if abs(g @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = unit(np.cross(g, ref))
    v = np.cross(g, u)

    span_u = aabb_support_extent(mn, mx, u)
    span_v = aabb_support_extent(mn, mx, v)
    if (nx - 1) * spacing < span_u or (ny - 1) * spacing < span_v:
        warnings.warn(
            f"blanket plane {(nx - 1) * spacing:.3f}x{(ny - 1) * spacing:.3f} m "
            f"does not cover the body footprint {span_u:.3f}x{span_v:.3f} m",
            ClothTooSmallWarning, stacklevel=2)

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    au = (ii.ravel() - (nx - 1) / 2.0) * spacing
    av = (jj.ravel() - (ny - 1) / 2.0) * spacing
    pos = origin[None, :] + au[:, None] * u[None, :] + av[:, None] * v[None, :]
    n = nx * ny
    return ClothGrid(nx=nx, ny=ny, spacing=spacing,
                     positions=pos, prev_positions=pos.copy(),
                     velocities=np.zeros((n, 3)), inv_mass=np.ones(n))


def spacing_for_body(body_positions, gravity, nx: int, ny: int,
                     cover_scale: float = 1.6) -> float:
    """Grid spacing so the blanket spans cover_scale x the body footprint."""
    g = unit(gravity)
    mn, mx = aabb_of_positions(body_positions)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(g @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = unit(np.cross(g, ref))
    v = np.cross(g, u)
    span = max(aabb_support_extent(mn, mx, u), aabb_support_extent(mn, mx, v))
    return cover_scale * span / (max(nx, ny) - 1)


def aabb_of_positions(positions):
    p = np.asarray(positions, dtype=np.float64)
    return p.min(axis=0), p.max(axis=0)


def step(cloth: ClothGrid, body: MeshCollider | None, bed: BedBox | None,
         params: ClothParams, gravity, dt: float) -> ClothGrid:
    """Advance the cloth by dt (split into params.substeps substeps).

    Returns a new ClothGrid; raises NumericalBlowup when the state leaves
    the finite regime.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = np.asarray(gravity, dtype=np.float64) * params.gravity_magnitude
    h = dt / params.substeps
    out = cloth.copy()
    batches = _constraint_batches(out.nx, out.ny)
    compliance_of = {"stretch": params.stretch_compliance,
                     "shear": params.shear_compliance,
                     "bend": params.bend_compliance}

    pos = out.positions
    vel = out.velocities
    for _ in range(params.substeps):
        start = pos.copy()
        vel += g[None, :] * h
        pos += vel * h

        lambdas = [np.zeros(len(ia)) for ia, _, _, _ in batches]
        for _ in range(params.iterations):
            for (ia, ib, unit_rest, kind), lamb in zip(batches, lambdas):
                solve_distance_batch(pos, out.inv_mass, ia, ib,
                                     unit_rest * out.spacing,
                                     compliance_of[kind], h, lamb)

        _resolve_contacts(pos, start, body, bed, params)

        vel[:] = (pos - start) / h
        out.prev_positions = start

    if not np.isfinite(pos).all() or np.abs(pos).max() > _BLOWUP_LIMIT:
        raise NumericalBlowup(
            "cloth state left the stable regime (non-finite or > 1e6 m); "
            "reduce the time step or soften the constraints")
    return out


def _resolve_contacts(pos, start, body, bed, params):
    """Push penetrating vertices to the offset surface, damp tangent slip."""
    if body is not None:
        # vertices beyond the inflated body box cannot be in contact
        mn, mx = body.aabb
        near = ((pos >= mn - params.thickness)
                & (pos <= mx + params.thickness)).all(axis=1)
        if near.any():
            surf, normals, dist = body.closest_points(pos[near])
            signed = np.einsum("ij,ij->i", pos[near] - surf, normals)
            contact = (signed < 0.0) | (dist < params.thickness)
            if contact.any():
                hit = near.copy()
                hit[near] = contact
                target = surf[contact] + params.thickness * normals[contact]
                _apply_contact(pos, start, hit, target, normals[contact],
                               params.friction)
    if bed is not None:
        pushed, normals, hit = bed.push_out(pos, params.thickness)
        if hit.any():
            _apply_contact(pos, start, hit, pushed[hit], normals[hit], params.friction)


def _apply_contact(pos, start, mask, target, normals, friction):
    disp = target - start[mask]
    normal_part = np.einsum("ij,ij->i", disp, normals)[:, None] * normals
    tangent_part = disp - normal_part
    pos[mask] = start[mask] + normal_part + (1.0 - friction) * tangent_part


def detect_falloff(cloth: ClothGrid, body_aabb, fraction: float,
                   margin: float) -> bool:
    """True when more than `fraction` of vertices left the inflated body box."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    mn, mx = body_aabb
    mn = np.asarray(mn, dtype=np.float64) - margin
    mx = np.asarray(mx, dtype=np.float64) + margin
    inside = ((cloth.positions >= mn) & (cloth.positions <= mx)).all(axis=1)
    outside_fraction = 1.0 - inside.mean()
    return bool(outside_fraction > fraction)


def kinetic_energy(cloth: ClothGrid) -> float:
    """Total kinetic energy with masses = 1 / inv_mass (infinite mass skipped)."""
    w = cloth.inv_mass
    m = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), 0.0)
    return float(0.5 * np.sum(m * np.einsum("ij,ij->i", cloth.velocities,
                                            cloth.velocities)))


def structural_strain(cloth: ClothGrid) -> float:
    """Maximum relative elongation over the grid's structural edges."""
    p = cloth.positions.reshape(cloth.nx, cloth.ny, 3)
    du = np.linalg.norm(p[1:, :, :] - p[:-1, :, :], axis=2)
    dv = np.linalg.norm(p[:, 1:, :] - p[:, :-1, :], axis=2)
    worst = max(np.abs(du - cloth.spacing).max() if du.size else 0.0,
                np.abs(dv - cloth.spacing).max() if dv.size else 0.0)
    return float(worst / cloth.spacing)
