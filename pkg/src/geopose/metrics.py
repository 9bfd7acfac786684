"""Regression metrics, the report table, and the difference-in-proportions test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Reporting units: elevation in meters, scale in px/dam, angle in radians.
TARGETS = ("elevation", "scale", "angle")
UNITS = {"elevation": "m", "scale": "px/dam", "angle": "rad"}
SPLITS = ("train", "val")

# Validation-set size used for the published sensitivity p-values
# (20% of 5,923 images).
FULL_DATASET_VAL_COUNT = 1185

_ASYMPTOTIC_Z = 8.0
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true, dtype=np.float64).reshape(-1)
    p = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if t.size == 0 or t.size != p.size:
        raise ValueError(f"need equal non-zero lengths, got {t.size} and {p.size}")
    return t, p


def r_squared(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    total = np.sum((t - t.mean()) ** 2)
    if total == 0:
        raise ValueError("r_squared is undefined for constant y_true")
    return float(1.0 - np.sum((t - p) ** 2) / total)


def mae(y_true, y_pred) -> float:
    t, p = _pair(y_true, y_pred)
    return float(np.mean(np.abs(t - p)))


def mad(y_true, y_pred) -> float:
    """Median absolute error (even counts average the central pair)."""
    t, p = _pair(y_true, y_pred)
    return float(np.median(np.abs(t - p)))


def summarize(y_true, y_pred) -> dict[str, float]:
    return {"mad": mad(y_true, y_pred), "mae": mae(y_true, y_pred), "r2": r_squared(y_true, y_pred)}


def cumulative_r2(r2_elevation_val: float, r2_scale_val: float, r2_angle_val: float) -> float:
    for v in (r2_elevation_val, r2_scale_val, r2_angle_val):
        if v > 1:
            raise ValueError(f"R^2 cannot exceed 1, got {v}")
    return (r2_elevation_val + r2_scale_val + r2_angle_val) / 3.0


@dataclass
class MetricsReport:
    """Nested ``target -> split -> {mad, mae, r2}`` in report units."""

    values: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    extra: dict[str, object] = field(default_factory=dict)

    def set(self, target: str, split: str, y_true, y_pred) -> None:
        if target not in TARGETS or split not in SPLITS:
            raise KeyError(f"unknown target/split {target}/{split}")
        self.values.setdefault(target, {})[split] = summarize(y_true, y_pred)

    def cumulative(self) -> float | None:
        try:
            return cumulative_r2(*(self.values[t]["val"]["r2"] for t in TARGETS))
        except KeyError:
            return None

    def to_dict(self) -> dict:
        out: dict = {t: self.values[t] for t in TARGETS if t in self.values}
        out["cumulative_r2"] = self.cumulative()
        out["units"] = {t: UNITS[t] for t in TARGETS}
        out.update(self.extra)
        return out


# --------------------------------------------------------------------------
# significance


def log_normal_sf(z: float) -> float:
    """Natural log of the upper normal tail ``1 - Phi(z)``.

    Uses ``erfc`` up to z = 8 and an asymptotic series beyond, where the tail
    is far below what ``1 - Phi`` can represent directly.
    """
    if z <= _ASYMPTOTIC_Z:
        if z < 0:
            return math.log1p(-0.5 * math.erfc(-z / math.sqrt(2.0)))
        return math.log(0.5 * math.erfc(z / math.sqrt(2.0)))
    # Q(z) ~ phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6 + ...)
    inv2 = 1.0 / (z * z)
    series, term = 1.0, 1.0
    for k in range(1, 21):
        term *= -(2 * k - 1) * inv2
        series += term
    return -0.5 * z * z - _LOG_SQRT_2PI - math.log(z) + math.log(series)


def _z_two_proportion(r2_a: float, r2_b: float, n1: int, n2: int) -> float:
    for v in (r2_a, r2_b):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"proportions must lie in [0, 1], got {v}")
    if n1 < 1 or n2 < 1:
        raise ValueError(f"sample counts must be positive, got {n1}, {n2}")
    pooled = (r2_a * n1 + r2_b * n2) / (n1 + n2)
    if pooled <= 0.0 or pooled >= 1.0:
        raise ValueError(f"pooled proportion {pooled} gives zero variance")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    return (r2_b - r2_a) / se


def two_proportion_log10p(r2_a: float, r2_b: float, n1: int, n2: int) -> float:
    """log10 of :func:`two_proportion_p`, finite even when p underflows."""
    z = _z_two_proportion(r2_a, r2_b, n1, n2)
    if z < 0:
        return math.log10(1.0 - math.exp(log_normal_sf(-z)))
    return log_normal_sf(z) / math.log(10.0)


def two_proportion_p(r2_a: float, r2_b: float, n1: int, n2: int) -> float:
    """One-sided pooled z-test p-value for the alternative ``r2_b > r2_a``.

    R^2 values are treated as proportions observed on ``n1`` and ``n2``
    samples. The lower half is computed as ``1 - upper`` so that swapping
    ``(r2_a, n1)`` with ``(r2_b, n2)`` gives complementary p-values.
    """
    z = _z_two_proportion(r2_a, r2_b, n1, n2)
    upper = math.exp(log_normal_sf(abs(z)))
    return upper if z >= 0 else 1.0 - upper


# --------------------------------------------------------------------------
# sensitivity table

VARIANTS = ("rgb", "rgb-elevation", "elevation")
VARIANT_NAMES = {"rgb": "RGB-Only", "rgb-elevation": "RGB-Elevation", "elevation": "Elevation-Only"}


@dataclass
class SensitivityResult:
    r2: dict[str, dict[str, float]]  # variant -> target -> val R^2
    n1: int
    n2: int
    p_values: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.p_values:
            self.p_values = {t: adjacent_p_values(self.r2, t, self.n1, self.n2) for t in ("scale", "angle")}

    def to_csv(self) -> str:
        lines = ["target,r2_rgb_only,p_value_1_2,r2_rgb_elevation,p_value_2_3,r2_elevation_only,n1,n2"]
        for t in ("scale", "angle"):
            p12, p23 = self.p_values[t]
            row = [
                t,
                repr(float(self.r2["rgb"][t])),
                repr(float(p12)),
                repr(float(self.r2["rgb-elevation"][t])),
                repr(float(p23)),
                repr(float(self.r2["elevation"][t])),
                str(self.n1),
                str(self.n2),
            ]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _as_proportion(r2: float) -> float:
    # negative R^2 (worse than the mean) has no proportion reading
    return min(max(r2, 0.0), 1.0)


def _p_or_tie(r2_a: float, r2_b: float, n1: int, n2: int) -> float:
    if r2_a == r2_b and r2_a in (0.0, 1.0):
        return 0.5  # both degenerate: no difference and no variance
    return two_proportion_p(r2_a, r2_b, n1, n2)


def adjacent_p_values(r2: dict[str, dict[str, float]], target: str, n1: int, n2: int) -> tuple[float, float]:
    """p-values for (RGB-Only, RGB-Elevation) and (RGB-Elevation, Elevation-Only).

    Both tests take RGB-Elevation as the hypothesised better model, so a
    variant outperforming it yields p > 0.5.
    """
    full = _as_proportion(r2["rgb-elevation"][target])
    p12 = _p_or_tie(_as_proportion(r2["rgb"][target]), full, n1, n2)
    p23 = _p_or_tie(_as_proportion(r2["elevation"][target]), full, n2, n1)
    return p12, p23
