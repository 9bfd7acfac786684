"""Synthetic oblique city scenes with exact geocentric pose.

Buildings are axis-aligned boxes viewed with a parallel oblique projection:
a point at height ``z`` above ground pixel ``p`` is imaged at
``p + flow_vector(z, pose)``. The flow direction is measured clockwise from
the image up-axis (y grows downward), so angle 0 moves roofs straight up.

The elevation mask records the height of whatever surface is visible at each
pixel: roof pixels carry the building height, wall pixels interpolate linearly
from 0 at the footprint to the full height at the roof, ground is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import (
    CITY_COUNTS,
    City,
    DatasetRecord,
    ElevationMask,
    GeoPoseLabel,
    RgbImage,
)

TWO_PI = 2.0 * math.pi

Color = tuple[int, int, int]


@dataclass(frozen=True)
class Building:
    x0: int
    y0: int
    x1: int
    y1: int
    height_cm: float
    roof_color: Color
    wall_color: Color

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"empty footprint {(self.x0, self.y0, self.x1, self.y1)}")
        if not self.height_cm > 0:
            raise ValueError(f"building height must be positive, got {self.height_cm}")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    buildings: tuple[Building, ...] = ()
    ground_color: Color = (120, 130, 110)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        for b in self.buildings:
            if b.x0 < 0 or b.y0 < 0 or b.x1 > self.width or b.y1 > self.height:
                raise ValueError(f"footprint {b} outside {self.width}x{self.height} canvas")


@dataclass(frozen=True)
class CameraPose:
    angle_rad: float
    scale_px_per_cm: float

    def __post_init__(self):
        if not 0.0 <= self.angle_rad < TWO_PI:
            raise ValueError(f"angle must lie in [0, 2*pi), got {self.angle_rad}")
        if not self.scale_px_per_cm > 0:
            raise ValueError(f"scale must be positive, got {self.scale_px_per_cm}")


def flow_vector(height_cm: float, pose: CameraPose) -> tuple[float, float]:
    """Image displacement (dx, dy) in pixels of a point ``height_cm`` above ground."""
    if height_cm < 0:
        raise ValueError(f"height must be non-negative, got {height_cm}")
    m = pose.scale_px_per_cm * height_cm
    return m * math.sin(pose.angle_rad), -m * math.cos(pose.angle_rad)


def _axis_interval(p: np.ndarray, lo: float, hi: float, d: float):
    """Range of t with lo <= p - t*d <= hi, as (t_min, t_max) arrays."""
    if d == 0.0:
        inside = (p >= lo) & (p <= hi)
        return np.where(inside, -np.inf, np.inf), np.where(inside, np.inf, -np.inf)
    a = (p - hi) / d
    b = (p - lo) / d
    return np.minimum(a, b), np.maximum(a, b)


def _visible_fraction(b: Building, dx: float, dy: float, xs: np.ndarray, ys: np.ndarray):
    """Largest t in [0, 1] such that pixel - t*d falls on the footprint, else NaN.

    That t is the fractional height of the front-facing surface seen at the
    pixel; t == 1 marks roof pixels.
    """
    tx0, tx1 = _axis_interval(xs, b.x0, b.x1, dx)
    ty0, ty1 = _axis_interval(ys, b.y0, b.y1, dy)
    lo = np.maximum(np.maximum(tx0, ty0), 0.0)
    hi = np.minimum(np.minimum(tx1, ty1), 1.0)
    return np.where(lo <= hi, hi, np.nan)


def _swept_box(b: Building, dx: float, dy: float) -> tuple[float, float, float, float]:
    return (
        b.x0 + min(0.0, dx),
        b.y0 + min(0.0, dy),
        b.x1 + max(0.0, dx),
        b.y1 + max(0.0, dy),
    )


def render_scene(spec: SceneSpec, pose: CameraPose) -> tuple[RgbImage, ElevationMask, GeoPoseLabel]:
    """Rasterize ``spec`` as seen under ``pose``.

    Buildings are painted in order of increasing height, so taller ones win
    where projections overlap. Raises ``ValueError`` if any building's
    projected extent leaves the canvas.
    """
    w, h = spec.width, spec.height
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    rgb[:] = spec.ground_color
    elev = np.zeros((h, w), dtype=np.float32)
    for b in sorted(spec.buildings, key=lambda b: b.height_cm):
        dx, dy = flow_vector(b.height_cm, pose)
        bx0, by0, bx1, by1 = _swept_box(b, dx, dy)
        if bx0 < 0 or by0 < 0 or bx1 > w or by1 > h:
            raise ValueError(
                f"building at {(b.x0, b.y0, b.x1, b.y1)} displaced by ({dx:.2f}, {dy:.2f}) px "
                f"leaves the {w}x{h} canvas"
            )
        c0, r0 = max(int(math.floor(bx0)), 0), max(int(math.floor(by0)), 0)
        c1, r1 = min(int(math.ceil(bx1)), w), min(int(math.ceil(by1)), h)
        ys, xs = np.mgrid[r0:r1, c0:c1] + 0.5
        t = _visible_fraction(b, dx, dy, xs, ys)
        covered = ~np.isnan(t)
        roof = covered & (t == 1.0)
        wall = covered & ~roof
        region = rgb[r0:r1, c0:c1]
        shade = 0.55 + 0.45 * np.nan_to_num(t)
        wall_rgb = np.rint(np.asarray(b.wall_color, float) * shade[..., None])
        region[wall] = np.clip(wall_rgb[wall], 0, 255).astype(np.uint8)
        region[roof] = b.roof_color
        epatch = elev[r0:r1, c0:c1]
        epatch[covered] = (np.float32(b.height_cm) * t[covered]).astype(np.float32)
        epatch[roof] = np.float32(b.height_cm)
    return RgbImage(rgb), ElevationMask(elev), GeoPoseLabel(pose.scale_px_per_cm, pose.angle_rad)


# --------------------------------------------------------------------------
# random datasets


@dataclass(frozen=True)
class SceneConfig:
    """Sampling ranges for :func:`make_dataset` (sizes are fractions of the canvas)."""

    scale_band: tuple[float, float] = (0.0015, 0.004)
    min_height_cm: float = 300.0
    max_height_cm: float = 3800.0
    san_fernando_max_height_cm: float = 2800.0
    buildings: tuple[int, int] = (2, 5)
    footprint: tuple[float, float] = (0.12, 0.28)
    spike_cm: tuple[float, float] = (4500.0, 9000.0)
    spike_count: tuple[int, int] = (5, 60)
    nan_blobs: tuple[int, int] = (1, 3)


def roof_color_for(height_cm: float, cfg: SceneConfig, rng: np.random.Generator) -> Color:
    """Roof colour whose brightness falls with building height, plus a random tint."""
    frac = (height_cm - cfg.min_height_cm) / (cfg.max_height_cm - cfg.min_height_cm)
    lum = 225.0 - 150.0 * min(max(frac, 0.0), 1.0)
    tint = rng.uniform(-18, 18, size=3)
    return tuple(int(v) for v in np.clip(np.rint(lum + tint), 0, 255))


def _random_building(size: int, pose: CameraPose, max_h: float, cfg: SceneConfig, rng) -> Building:
    height = float(round(rng.uniform(cfg.min_height_cm, max_h)))
    dx, dy = flow_vector(height, pose)
    lo_f, hi_f = cfg.footprint
    for _ in range(100):
        bw = int(rng.integers(max(2, round(lo_f * size)), max(3, round(hi_f * size)) + 1))
        bh = int(rng.integers(max(2, round(lo_f * size)), max(3, round(hi_f * size)) + 1))
        xmin = math.ceil(max(0.0, -dx))
        ymin = math.ceil(max(0.0, -dy))
        xmax = math.floor(size - bw - max(0.0, dx))
        ymax = math.floor(size - bh - max(0.0, dy))
        if xmax >= xmin and ymax >= ymin:
            break
    else:
        raise ValueError(f"no room for a {height} cm building on a {size}px canvas")
    x0 = int(rng.integers(xmin, xmax + 1))
    y0 = int(rng.integers(ymin, ymax + 1))
    wall = tuple(int(v) for v in rng.integers((80, 60, 50), (150, 120, 100)))
    return Building(x0, y0, x0 + bw, y0 + bh, height, roof_color_for(height, cfg, rng), wall)


def _nan_blobs(values: np.ndarray, cfg: SceneConfig, rng) -> None:
    size_y, size_x = values.shape
    yy, xx = np.mgrid[0:size_y, 0:size_x] + 0.5
    big = rng.random() < 0.2
    for _ in range(int(rng.integers(cfg.nan_blobs[0], cfg.nan_blobs[1] + 1))):
        cx, cy = rng.uniform(0, size_x), rng.uniform(0, size_y)
        rmax = size_x / 2 if big else size_x / 6
        r = rng.uniform(2.0, max(2.5, rmax))
        values[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = np.nan
    if np.isnan(values).all():
        values[0, 0] = 0.0


def make_dataset(
    n: int,
    size: int = 64,
    seed: int = 7,
    nan_fraction: float = 0.1,
    outlier_fraction: float = 0.05,
    cfg: SceneConfig = SceneConfig(),
) -> list[DatasetRecord]:
    """Draw ``n`` random scenes and render them into dataset records.

    Scales are log-uniform in ``cfg.scale_band`` and angles uniform in
    [0, 2*pi). Exactly ``round(n * nan_fraction)`` records receive NaN blobs
    and ``round(n * outlier_fraction)`` receive implausible spikes above
    4000 cm; the latter are labelled Atlanta.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    cities = list(CITY_COUNTS)
    weights = np.array([CITY_COUNTS[c] for c in cities], dtype=float)
    weights /= weights.sum()
    nan_ids = set(rng.permutation(n)[: int(round(n * nan_fraction))].tolist())
    spike_ids = set(rng.permutation(n)[: int(round(n * outlier_fraction))].tolist())
    lo, hi = np.log(cfg.scale_band[0]), np.log(cfg.scale_band[1])
    records = []
    for i in range(n):
        city = City.ATLANTA if i in spike_ids else cities[int(rng.choice(len(cities), p=weights))]
        angle = float(rng.uniform(0.0, TWO_PI)) % TWO_PI
        pose = CameraPose(angle, float(np.exp(rng.uniform(lo, hi))))
        max_h = cfg.san_fernando_max_height_cm if city is City.SAN_FERNANDO else cfg.max_height_cm
        count = int(rng.integers(cfg.buildings[0], cfg.buildings[1] + 1))
        buildings = [_random_building(size, pose, max_h, cfg, rng) for _ in range(count)]
        ground = tuple(int(v) for v in rng.integers((90, 105, 75), (140, 160, 120)))
        spec = SceneSpec(size, size, tuple(buildings), ground, seed)
        rgb, elev, label = render_scene(spec, pose)
        values = elev.values.copy()
        if i in spike_ids:
            k = int(rng.integers(cfg.spike_count[0], cfg.spike_count[1] + 1))
            flat = rng.choice(values.size, size=k, replace=False)
            values.reshape(-1)[flat] = np.round(rng.uniform(*cfg.spike_cm, size=k))
        if i in nan_ids:
            _nan_blobs(values, cfg, rng)
        records.append(DatasetRecord(f"img{i:04d}", city, rgb, ElevationMask(values), label))
    return records
