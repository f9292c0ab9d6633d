"""Procedural woven-fabric appearance.

The pattern is the product of two perpendicular sinusoids whose phases are
warped by smooth value noise, giving the slightly irregular thread look of
woven cloth. A checkerboard tint breaks up large-scale uniformity, and the
height field doubles as a bump source.

Everything here is a pure function of (coordinates, parameters); the noise
lattice uses a fixed 64-bit hash so results are identical across runs,
processes, and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import BadRange

_U = np.uint64
_GAMMA = _U(0x9E3779B97F4A7C15)
_M1 = _U(0xBF58476D1DE684EE)
_M2 = _U(0x94D049BB133111EB)
_FIELD_SALT_A = _U(0x243F6A8885A308D3)   # warp field for the u sinusoid
_FIELD_SALT_B = _U(0x13198A2E03707344)   # warp field for the v sinusoid


def splitmix64(x):
    """SplitMix64 finalizer; accepts scalars or uint64 arrays."""
    with np.errstate(over="ignore"):    # modular 2^64 wraparound is intended
        z = (np.asarray(x).astype(np.uint64) + _GAMMA)
        z = (z ^ (z >> _U(30))) * _M1
        z = (z ^ (z >> _U(27))) * _M2
        return z ^ (z >> _U(31))


def _lattice_values(ix, iy, seed):
    """Hash integer lattice coordinates to floats in [-1, 1]."""
    with np.errstate(over="ignore"):
        hx = splitmix64(splitmix64(np.uint64(seed) ^ ix.view(np.uint64)))
        h = splitmix64(hx ^ iy.view(np.uint64))
    return (h >> _U(11)).astype(np.float64) * (2.0 / 9007199254740992.0) - 1.0


def value_noise(x, y, seed):
    """Smooth 2-D value noise in [-1, 1] on the unit integer lattice."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    tx = x - x0
    ty = y - y0
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)

    v00 = _lattice_values(ix, iy, seed)
    v10 = _lattice_values(ix + 1, iy, seed)
    v01 = _lattice_values(ix, iy + 1, seed)
    v11 = _lattice_values(ix + 1, iy + 1, seed)

    sx = tx * tx * (3.0 - 2.0 * tx)      # smoothstep
    sy = ty * ty * (3.0 - 2.0 * ty)
    a = v00 + sx * (v10 - v00)
    b = v01 + sx * (v11 - v01)
    return a + sy * (b - a)


@dataclass(frozen=True)
class TextureParams:
    """Parameters of the woven-fabric shader."""

    freq_u: float = 160.0          # thread cycles per UV unit
    freq_v: float = 160.0
    distort_amp: float = 0.8       # phase warp amplitude, radians
    distort_scale: float = 8.0     # noise cells per UV unit
    bump_strength: float = 0.35
    checker_cells: float = 6.0     # checker cells per UV unit
    color_a: tuple = (0.45, 0.45, 0.45)
    color_b: tuple = (0.08, 0.08, 0.08)
    seed: int = 0

    def __post_init__(self):
        if self.freq_u <= 0 or self.freq_v <= 0:
            raise ValueError("thread frequencies must be positive")
        if self.distort_amp < 0 or self.bump_strength < 0:
            raise ValueError("distort_amp and bump_strength must be >= 0")
        if self.checker_cells <= 0:
            raise ValueError("checker_cells must be positive")
        for c in (*self.color_a, *self.color_b):
            if not 0.0 <= c <= 1.0:
                raise ValueError("checker colors must lie in [0, 1]")
        object.__setattr__(self, "color_a", tuple(float(c) for c in self.color_a))
        object.__setattr__(self, "color_b", tuple(float(c) for c in self.color_b))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TextureParams":
        raw = json.loads(text)
        raw["color_a"] = tuple(raw["color_a"])
        raw["color_b"] = tuple(raw["color_b"])
        return cls(**raw)


def height(u, v, params: TextureParams):
    """Weave height in [0, 1]: product of two warped perpendicular sinusoids."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if params.distort_amp > 0.0:
        nx = u * params.distort_scale
        ny = v * params.distort_scale
        warp_u = params.distort_amp * value_noise(nx, ny, splitmix64(np.uint64(params.seed) ^ _FIELD_SALT_A))
        warp_v = params.distort_amp * value_noise(nx, ny, splitmix64(np.uint64(params.seed) ^ _FIELD_SALT_B))
    else:
        warp_u = 0.0
        warp_v = 0.0
    # wrap the thread phase to one cycle before scaling by 2*pi so that
    # shifting u by a whole period reproduces the value bit-for-bit
    pu = params.freq_u * u
    pv = params.freq_v * v
    su = 1.0 + np.sin(2.0 * np.pi * (pu - np.floor(pu)) + warp_u)
    sv = 1.0 + np.sin(2.0 * np.pi * (pv - np.floor(pv)) + warp_v)
    return 0.25 * su * sv


def albedo(u, v, params: TextureParams):
    """Linear RGB: checker base tinted darker in the weave grooves.

    Output shape is broadcast(u, v) + (3,); componentwise within
    [0.7 * base, base].
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cell = (np.floor(u * params.checker_cells)
            + np.floor(v * params.checker_cells)) % 2.0
    base_a = np.asarray(params.color_a)
    base_b = np.asarray(params.color_b)
    base = np.where(cell[..., None] == 0.0, base_a, base_b)
    shade = 0.7 + 0.3 * height(u, v, params)
    return base * shade[..., None]


def bump_normal(u, v, normal, tangent, bitangent, params: TextureParams,
                step: float = 1e-3):
    """Perturb a shading normal by the height-field gradient.

    normal/tangent/bitangent must be unit length and mutually orthogonal;
    arrays broadcast over leading dimensions. The result is unit length.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    dhdu = (height(u + step, v, params) - height(u - step, v, params)) / (2.0 * step)
    dhdv = (height(u, v + step, params) - height(u, v - step, params)) / (2.0 * step)
    n = np.asarray(normal, dtype=np.float64)
    t = np.asarray(tangent, dtype=np.float64)
    b = np.asarray(bitangent, dtype=np.float64)
    out = n - params.bump_strength * (dhdu[..., None] * t + dhdv[..., None] * b)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


@dataclass(frozen=True)
class TextureRanges:
    """Uniform sampling ranges, one (lo, hi) pair per parameter."""

    freq_u: tuple = (120.0, 220.0)
    freq_v: tuple = (120.0, 220.0)
    distort_amp: tuple = (0.4, 1.2)
    distort_scale: tuple = (4.0, 12.0)
    bump_strength: tuple = (0.2, 0.5)
    checker_cells: tuple = (4.0, 10.0)
    color_a: tuple = (0.35, 0.6)       # per-channel range, grey family
    color_b: tuple = (0.02, 0.15)      # per-channel range, near black
    gray_checkers: bool = True         # draw one value per color, not per channel

    def __post_init__(self):
        for name in ("freq_u", "freq_v", "distort_amp", "distort_scale",
                     "bump_strength", "checker_cells", "color_a", "color_b"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise BadRange(f"{name}: lo {lo} > hi {hi}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TextureRanges":
        kwargs = {}
        for key, value in raw.items():
            kwargs[key] = tuple(value) if isinstance(value, (list, tuple)) else value
        return cls(**kwargs)


def sample_params(seed, ranges: TextureRanges | None = None) -> TextureParams:
    """Draw one TextureParams uniformly from `ranges`; fixed draw order.

    Identical (seed, ranges) always produce the identical parameter set.
    """
    ranges = ranges or TextureRanges()
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def draw(lo, hi):
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    freq_u = draw(*ranges.freq_u)
    freq_v = draw(*ranges.freq_v)
    distort_amp = draw(*ranges.distort_amp)
    distort_scale = draw(*ranges.distort_scale)
    bump_strength = draw(*ranges.bump_strength)
    checker_cells = draw(*ranges.checker_cells)
    if ranges.gray_checkers:
        color_a = (draw(*ranges.color_a),) * 3
        color_b = (draw(*ranges.color_b),) * 3
    else:
        color_a = tuple(draw(*ranges.color_a) for _ in range(3))
        color_b = tuple(draw(*ranges.color_b) for _ in range(3))
    tex_seed = int(rng.integers(0, 2**63 - 1, dtype=np.int64))
    return TextureParams(freq_u=freq_u, freq_v=freq_v, distort_amp=distort_amp,
                         distort_scale=distort_scale, bump_strength=bump_strength,
                         checker_cells=checker_cells, color_a=color_a,
                         color_b=color_b, seed=tex_seed)


def derive_seed(base_seed: int, *streams: int) -> int:
    """Collision-resistant seed for a (segment, texture-index, ...) stream."""
    acc = splitmix64(np.uint64(base_seed & 0xFFFFFFFFFFFFFFFF))
    for s in streams:
        acc = splitmix64(acc ^ np.uint64(int(s) & 0xFFFFFFFFFFFFFFFF))
    return int(acc)
