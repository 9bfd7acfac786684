"""Flat ``key=value`` run configuration.

Every key is declared in :data:`KEYS` with a type, default and one-line
description. Unknown keys are rejected so typos fail loudly, and the
resolved configuration is written back next to each stage's artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .models import AutoencoderConfig, ScaleAngleConfig, UNetConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    doc: str


KEYS: dict[str, Key] = {
    # dataset
    "seed": Key(int, 7, "master seed; every stage derives its randomness from it"),
    "n": Key(int, 512, "number of synthetic scenes"),
    "size": Key(int, 64, "scene side length in pixels"),
    "nan_fraction": Key(float, 0.1, "fraction of scenes given NaN blobs"),
    "outlier_fraction": Key(float, 0.05, "fraction of scenes given implausible spikes (labelled Atlanta)"),
    # U-Net
    "unet.base_filters": Key(int, 8, "U-Net filters at the first level"),
    "unet.depth": Key(int, 4, "U-Net pooling levels"),
    "unet.kernel": Key(int, 3, "U-Net convolution kernel size"),
    "unet.split_fraction": Key(float, 0.85, "U-Net train share of NaN-free scenes"),
    "unet.batch_size": Key(int, 32, "U-Net mini-batch size"),
    "unet.learning_rate": Key(float, 1e-3, "U-Net Adam learning rate"),
    "unet.max_epochs": Key(int, 24, "U-Net epoch cap"),
    "unet.patience": Key(int, 10, "U-Net early-stopping patience"),
    # Scale-Angle
    "scale_angle.channels": Key(str, "rgb-elevation", "input channels: rgb, rgb-elevation or elevation"),
    "scale_angle.conv_channels": Key(_int_tuple, (8, 16, 32, 64, 64), "widths of the five double-conv blocks"),
    "scale_angle.fc_sizes": Key(_int_tuple, (128, 128, 64, 64, 32, 2), "widths of the six dense layers"),
    "scale_angle.kernel": Key(int, 3, "Scale-Angle convolution kernel size"),
    "scale_angle.split_fraction": Key(float, 0.80, "Scale-Angle train share"),
    "scale_angle.batch_size": Key(int, 32, "Scale-Angle mini-batch size"),
    "scale_angle.learning_rate": Key(float, 1e-3, "Scale-Angle Adam learning rate"),
    "scale_angle.max_epochs": Key(int, 60, "Scale-Angle epoch cap"),
    "scale_angle.patience": Key(int, 10, "Scale-Angle early-stopping patience"),
    # autoencoder
    "autoencoder.latent_dim": Key(int, 32, "latent vector length"),
    "autoencoder.encoder_channels": Key(_int_tuple, (8, 16, 16), "encoder widths; one pooling per entry"),
    "autoencoder.bottleneck_channels": Key(int, 16, "channels of the spatial bottleneck"),
    "autoencoder.kernel": Key(int, 3, "autoencoder convolution kernel size"),
    "autoencoder.batch_size": Key(int, 32, "autoencoder mini-batch size"),
    "autoencoder.learning_rate": Key(float, 1e-3, "autoencoder Adam learning rate"),
    "autoencoder.max_epochs": Key(int, 10, "autoencoder epoch cap"),
    "autoencoder.patience": Key(int, 10, "autoencoder early-stopping patience"),
    "autoencoder.split_fraction": Key(float, 0.85, "autoencoder train share"),
    # misc
    "restore_best": Key(_bool, True, "restore the best-validation weights after training"),
    "min_delta": Key(float, 1e-5, "smallest validation improvement that resets patience"),
}


class RunConfig:
    """Validated mapping over :data:`KEYS`."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values = {k: spec.default for k, spec in KEYS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = KEYS[key].parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        self._values[key] = value

    def __getitem__(self, key: str):
        return self._values[key]

    def as_dict(self) -> dict[str, object]:
        return dict(self._values)

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        out = RunConfig(self._values)
        for k, v in overrides.items():
            out.set(k, v)
        return out

    # -- text form --

    def to_text(self) -> str:
        return "".join(f"{k}={_format(self._values[k])}\n" for k in KEYS)

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = RunConfig(base.as_dict() if base else None)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    # -- typed views --

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            input_size=self["size"],
            base_filters=self["unet.base_filters"],
            depth=self["unet.depth"],
            kernel=self["unet.kernel"],
        )

    def scale_angle_config(self, channels: str | None = None) -> ScaleAngleConfig:
        from .data import CHANNEL_COUNTS

        channels = channels or self["scale_angle.channels"]
        if channels not in CHANNEL_COUNTS:
            raise ConfigError(f"scale_angle.channels must be one of {sorted(CHANNEL_COUNTS)}, got {channels!r}")
        return ScaleAngleConfig(
            input_size=self["size"],
            input_channels=CHANNEL_COUNTS[channels],
            conv_channels=self["scale_angle.conv_channels"],
            fc_sizes=self["scale_angle.fc_sizes"],
            kernel=self["scale_angle.kernel"],
        )

    def autoencoder_config(self) -> AutoencoderConfig:
        enc = self["autoencoder.encoder_channels"]
        side = self["size"] // 2 ** len(enc)
        return AutoencoderConfig(
            input_size=self["size"],
            bottleneck_spatial=(side, side, self["autoencoder.bottleneck_channels"]),
            latent_dim=self["autoencoder.latent_dim"],
            encoder_channels=enc,
            kernel=self["autoencoder.kernel"],
        )

    def train_config(self, stage: str, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(
            split_fraction=self[f"{stage}.split_fraction"],
            batch_size=self[f"{stage}.batch_size"],
            learning_rate=self[f"{stage}.learning_rate"],
            max_epochs=self[f"{stage}.max_epochs"],
            patience=self[f"{stage}.patience"],
            seed=self["seed"] + seed_offset,
            min_delta=self["min_delta"],
            restore_best=self["restore_best"],
        )


def parse_override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(f"{k.ljust(width)}  {_format(s.default):>20}  {s.doc}" for k, s in KEYS.items())
