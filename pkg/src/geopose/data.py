"""Records, file formats and per-record cleaning transforms.

File formats
------------
* RGB rasters: binary PPM (``P6``, maxval 255).
* Elevation rasters (``ELE1``): magic, u32-LE width, u32-LE height, then
  ``width * height`` float32-LE centimeters in row-major order; NaN allowed.
* Labels: UTF-8 CSV with header ``id,city,scale_px_per_cm,angle_rad``.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

ELE_MAGIC = b"ELE1"
LABEL_HEADER = ["id", "city", "scale_px_per_cm", "angle_rad"]

# Divisor bringing building heights (cm) to roughly [0, 1] for network input.
ELEVATION_NORM_CM = 5000.0

ATLANTA_THRESHOLD_CM = 4000.0
ATLANTA_MAX_OUTLIERS = 100
SAN_FERNANDO_CAP_CM = 3000.0


class FormatError(ValueError):
    """Malformed raster or label file."""


class City(str, enum.Enum):
    SAN_FERNANDO = "SanFernando"
    ATLANTA = "Atlanta"
    JACKSONVILLE = "Jacksonville"
    OMAHA = "Omaha"

    @classmethod
    def parse(cls, name: str) -> "City":
        try:
            return cls(name)
        except ValueError:
            known = ", ".join(c.value for c in cls)
            raise FormatError(f"unknown city {name!r}; expected one of {known}") from None


# image counts per city in the source dataset
CITY_COUNTS = {
    City.SAN_FERNANDO: 2325,
    City.ATLANTA: 704,
    City.JACKSONVILLE: 1098,
    City.OMAHA: 1796,
}


@dataclass
class RgbImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"RGB pixels must be (h, w, 3), got {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ElevationMask:
    values: np.ndarray  # (height, width) float32 centimeters

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"elevation values must be 2-D, got {self.values.shape}")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def nan_count(self) -> int:
        return int(np.isnan(self.values).sum())

    @property
    def has_nan(self) -> bool:
        return bool(np.isnan(self.values).any())


@dataclass(frozen=True)
class GeoPoseLabel:
    scale: float  # pixels per centimeter
    angle: float  # radians

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not math.isfinite(self.angle):
            raise ValueError(f"angle must be finite, got {self.angle}")


@dataclass
class DatasetRecord:
    id: str
    city: City
    rgb: RgbImage
    elevation: ElevationMask
    label: GeoPoseLabel

    def __post_init__(self):
        if (self.rgb.height, self.rgb.width) != self.elevation.values.shape:
            raise ValueError(
                f"{self.id}: RGB {self.rgb.height}x{self.rgb.width} vs "
                f"elevation {self.elevation.height}x{self.elevation.width}"
            )

    @property
    def has_nan(self) -> bool:
        return self.elevation.has_nan


# --------------------------------------------------------------------------
# cleaning


def _median_or_fail(values: np.ndarray) -> float:
    if values.size == 0:
        raise ValueError("cannot compute a median: no valid (non-NaN) pixels")
    return float(np.median(values))


def clean_outliers(mask: ElevationMask, city: City | str) -> tuple[ElevationMask, int]:
    """Apply the per-city outlier rule; returns the cleaned mask and pixels replaced.

    Atlanta: pixels above 4000 cm are replaced by the image median only when
    there are at most 100 of them (more means a genuinely tall building).
    San Fernando: every pixel above 3000 cm is replaced by the median.
    Jacksonville and Omaha are left as is. NaN pixels are never touched.
    """
    city = city if isinstance(city, City) else City.parse(city)
    v = mask.values
    if v.size == 0:
        raise ValueError("empty elevation mask")
    finite = ~np.isnan(v)
    if not finite.any():
        raise ValueError("all-NaN elevation mask: median undefined")
    if city in (City.JACKSONVILLE, City.OMAHA):
        return ElevationMask(v.copy()), 0
    if city is City.ATLANTA:
        outliers = finite & (v > ATLANTA_THRESHOLD_CM)
        n = int(outliers.sum())
        if n == 0 or n > ATLANTA_MAX_OUTLIERS:
            return ElevationMask(v.copy()), 0
    else:
        outliers = finite & (v > SAN_FERNANDO_CAP_CM)
        n = int(outliers.sum())
        if n == 0:
            return ElevationMask(v.copy()), 0
    median = _median_or_fail(v[finite & ~outliers])
    out = v.copy()
    out[outliers] = median
    return ElevationMask(out), n


# --------------------------------------------------------------------------
# resampling


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of fractional overlaps, rows summing to 1."""
    step = n_in / n_out
    edges = np.arange(n_out + 1) * step
    lo = np.maximum(edges[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / step


def _separable(wy, img, wx) -> np.ndarray:
    rows = np.tensordot(np.asarray(wy, float), np.asarray(img, float), axes=(1, 0))
    return np.swapaxes(np.tensordot(np.asarray(wx, float), rows, axes=(1, 1)), 0, 1)


def area_resample(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Downsample by pixel-area averaging.

    Each output pixel is the area-weighted mean of the input pixels it covers;
    for an integer factor ``f`` that is exactly the mean of an ``f x f`` block.
    An output pixel is NaN if any input pixel contributing to it is NaN.
    Works on ``(h, w)`` or ``(h, w, c)`` arrays and returns float64.
    """
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    if out_w > in_w or out_h > in_h:
        raise ValueError(f"area_resample only downsamples: {in_w}x{in_h} -> {out_w}x{out_h}")
    wy = _area_weights(in_h, out_h)
    wx = _area_weights(in_w, out_w)
    nan = np.isnan(img)
    out = _separable(wy, np.where(nan, 0.0, img), wx)
    if nan.any():
        touched = _separable(wy > 0, nan, wx > 0)
        out[touched > 0] = np.nan
    return out


def resample_record(rec: DatasetRecord, size: int) -> DatasetRecord:
    rgb = np.clip(np.rint(area_resample(rec.rgb.pixels, size, size)), 0, 255).astype(np.uint8)
    ele = area_resample(rec.elevation.values, size, size).astype(np.float32)
    return DatasetRecord(rec.id, rec.city, RgbImage(rgb), ElevationMask(ele), rec.label)


# --------------------------------------------------------------------------
# units and model inputs


def scale_to_px_per_dam(scale_px_per_cm):
    """Pixels per centimeter to pixels per decameter (1 dam = 1000 cm)."""
    arr = np.asarray(scale_px_per_cm, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("scale must be positive")
    out = arr * 1000.0
    return float(out) if out.ndim == 0 else out


def rgb_channels(rgb: RgbImage) -> np.ndarray:
    return rgb.pixels.astype(np.float64) / 255.0


def elevation_channel(elev: ElevationMask) -> np.ndarray:
    if elev.has_nan:
        raise ValueError("elevation mask still contains NaN; run interpolation first")
    return elev.values.astype(np.float64)[..., None] / ELEVATION_NORM_CM


def make_model_input(rgb: RgbImage, elev: ElevationMask) -> Tensor:
    """Stack R, G, B (scaled to [0, 1]) and normalized elevation into [1, H, W, 4]."""
    if (rgb.height, rgb.width) != (elev.height, elev.width):
        raise ValueError(f"RGB {rgb.height}x{rgb.width} vs elevation {elev.height}x{elev.width}")
    x = np.concatenate([rgb_channels(rgb), elevation_channel(elev)], axis=-1)
    return Tensor(x[None])


def stack_inputs(records, channels: str = "rgb-elevation", elevations=None) -> np.ndarray:
    """Batch model inputs for the scale/angle network.

    ``channels`` is one of ``rgb``, ``rgb-elevation`` or ``elevation``.
    ``elevations`` optionally overrides the records' masks (e.g. U-Net output
    in centimeters).
    """
    out = []
    for i, rec in enumerate(records):
        elev = rec.elevation if elevations is None else ElevationMask(elevations[i])
        if channels == "rgb":
            out.append(rgb_channels(rec.rgb))
        elif channels == "elevation":
            out.append(elevation_channel(elev))
        elif channels == "rgb-elevation":
            out.append(make_model_input(rec.rgb, elev).data[0])
        else:
            raise ValueError(f"unknown channel set {channels!r}")
    return np.stack(out)


CHANNEL_COUNTS = {"rgb": 3, "rgb-elevation": 4, "elevation": 1}


# --------------------------------------------------------------------------
# file formats


def encode_ppm(img: RgbImage) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header")
        tokens.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("malformed PPM header")
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> RgbImage:
    if buf[:2] != b"P6":
        raise FormatError(f"bad PPM magic {buf[:2]!r}, expected b'P6'")
    (w, h, maxval), pos = _ppm_tokens(buf, 3)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}, expected 255")
    need = w * h * 3
    if len(buf) - pos < need:
        raise FormatError(f"truncated PPM payload: {len(buf) - pos} of {need} bytes")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return RgbImage(pixels.copy())


def encode_ele(mask: ElevationMask) -> bytes:
    head = ELE_MAGIC + struct.pack("<II", mask.width, mask.height)
    return head + mask.values.astype("<f4").tobytes()


def decode_ele(buf: bytes) -> ElevationMask:
    if buf[:4] != ELE_MAGIC:
        raise FormatError(f"bad ELE magic {buf[:4]!r}, expected {ELE_MAGIC!r}")
    if len(buf) < 12:
        raise FormatError("truncated ELE header")
    w, h = struct.unpack("<II", buf[4:12])
    need = 4 * w * h
    if len(buf) - 12 != need:
        raise FormatError(f"truncated ELE payload: {len(buf) - 12} of {need} bytes")
    values = np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w)
    return ElevationMask(values.astype(np.float32))


def save_ppm(path, img: RgbImage) -> None:
    Path(path).write_bytes(encode_ppm(img))


def load_ppm(path) -> RgbImage:
    return decode_ppm(Path(path).read_bytes())


def save_ele(path, mask: ElevationMask) -> None:
    Path(path).write_bytes(encode_ele(mask))


def load_ele(path) -> ElevationMask:
    return decode_ele(Path(path).read_bytes())


def format_labels_csv(rows) -> str:
    """``rows``: iterable of (id, city, GeoPoseLabel)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_HEADER)
    for rid, city, label in rows:
        writer.writerow([rid, City(city).value, repr(float(label.scale)), repr(float(label.angle))])
    return buf.getvalue()


def parse_labels_csv(text: str) -> list[tuple[str, City, GeoPoseLabel]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != LABEL_HEADER:
        raise FormatError(f"labels header must be {','.join(LABEL_HEADER)}, got {header}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        rid, city, scale, angle = row
        try:
            label = GeoPoseLabel(float(scale), float(angle))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        rows.append((rid, City.parse(city), label))
    return rows


def load_labels_csv(path) -> list[tuple[str, City, GeoPoseLabel]]:
    return parse_labels_csv(Path(path).read_text(encoding="utf-8"))


def save_dataset(directory, records) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for rec in records:
        save_ppm(d / f"{rec.id}.ppm", rec.rgb)
        save_ele(d / f"{rec.id}.ele", rec.elevation)
    text = format_labels_csv((r.id, r.city, r.label) for r in records)
    (d / "labels.csv").write_text(text, encoding="utf-8")


def load_dataset(directory) -> list[DatasetRecord]:
    d = Path(directory)
    labels = d / "labels.csv"
    if not labels.exists():
        raise FileNotFoundError(f"no labels.csv in {d}")
    records = []
    for rid, city, label in load_labels_csv(labels):
        records.append(
            DatasetRecord(rid, city, load_ppm(d / f"{rid}.ppm"), load_ele(d / f"{rid}.ele"), label)
        )
    return records
