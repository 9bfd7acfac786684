"""The three network architectures built on the numpy engine.

* :class:`UNet` - RGB in, non-negative per-pixel elevation out.
* :class:`ScaleAngleNet` - five double-conv blocks, six dense layers, two outputs.
* :class:`Autoencoder` - conv encoder to a flat latent vector and its mirror.

Conv layers carry a bias even when followed by batch norm, so parameter
counts line up with the usual ``k*k*Cin*Cout + Cout`` (+ ``2*Cout`` for BN).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


class Module:
    """Parameter container; children are discovered from instance attributes."""

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor, ops.RunningStats)):
                yield name, value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, ops.RunningStats):
                yield full + ".mean", value.mean
                yield full + ".var", value.var
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update((name, buf.copy()) for name, buf in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(self.named_buffers())
        missing = set(targets) - set(state)
        extra = set(state) - set(targets)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, dest in targets.items():
            src = np.asarray(state[name])
            if src.shape != dest.shape:
                raise ShapeError(f"{name}: stored shape {src.shape} vs model {dest.shape}")
            dest[...] = src


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    limit = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator):
        self.weight = _he_uniform(rng, (k, k, cin, cout), k * k * cin, "weight")
        self.bias = Tensor(np.zeros(cout), requires_grad=True, name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, "same")


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, name="gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, name="beta")
        self.stats = ops.RunningStats.fresh(channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, training, self.stats)


class Dense(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator):
        self.weight = _he_uniform(rng, (fin, fout), fin, "weight")
        self.bias = Tensor(np.zeros(fout), requires_grad=True, name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class ConvBNReLU(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator):
        self.conv = Conv(cin, cout, k, rng)
        self.bn = BatchNorm(cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.relu(self.bn(self.conv(x), training))


class DoubleConv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator):
        self.first = ConvBNReLU(cin, cout, k, rng)
        self.second = ConvBNReLU(cout, cout, k, rng)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.second(self.first(x, training), training)


# --------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class UNetConfig:
    input_size: int = 64
    base_filters: int = 8
    depth: int = 4
    kernel: int = 3
    in_channels: int = 3

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.depth < 1 or self.base_filters < 1:
            raise ValueError("depth and base_filters must be positive")
        if self.input_size % (2**self.depth):
            raise ValueError(f"input_size {self.input_size} not divisible by 2^{self.depth}")

    @classmethod
    def full_scale(cls) -> "UNetConfig":
        return cls(input_size=256, base_filters=32, depth=4, kernel=5)


@dataclass(frozen=True)
class ScaleAngleConfig:
    input_size: int = 64
    input_channels: int = 4
    conv_channels: tuple[int, ...] = (8, 16, 32, 64, 64)
    fc_sizes: tuple[int, ...] = (128, 128, 64, 64, 32, 2)
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "fc_sizes", tuple(self.fc_sizes))
        if self.input_channels not in (1, 3, 4):
            raise ValueError(f"input_channels must be 1, 3 or 4, got {self.input_channels}")
        if len(self.conv_channels) != 5:
            raise ValueError("exactly five double-conv blocks are required")
        if len(self.fc_sizes) != 6 or self.fc_sizes[-1] != 2:
            raise ValueError("exactly six dense layers ending in width 2 are required")
        if self.input_size % 32:
            raise ValueError(f"input_size {self.input_size} must be divisible by 32")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")

    @property
    def flat_features(self) -> int:
        side = self.input_size // 32
        return side * side * self.conv_channels[-1]

    @classmethod
    def full_scale(cls) -> "ScaleAngleConfig":
        return cls(
            input_size=224,
            conv_channels=(16, 32, 64, 128, 256),
            fc_sizes=(448, 256, 128, 64, 32, 2),
        )


@dataclass(frozen=True)
class AutoencoderConfig:
    input_size: int = 64
    bottleneck_spatial: tuple[int, int, int] = (8, 8, 16)
    latent_dim: int = 32
    encoder_channels: tuple[int, ...] = (8, 16, 16)
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_spatial", tuple(self.bottleneck_spatial))
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        h, w, _ = self.bottleneck_spatial
        if h != w or self.input_size % h:
            raise ValueError(f"bottleneck {self.bottleneck_spatial} incompatible with input {self.input_size}")
        pools = self.input_size // h
        if pools & (pools - 1) or 2 ** len(self.encoder_channels) != pools:
            raise ValueError(
                f"{len(self.encoder_channels)} encoder levels cannot reduce "
                f"{self.input_size} to {h}"
            )

    @property
    def flat_features(self) -> int:
        h, w, c = self.bottleneck_spatial
        return h * w * c

    @classmethod
    def full_scale(cls) -> "AutoencoderConfig":
        return cls(input_size=256, bottleneck_spatial=(32, 32, 16), latent_dim=512,
                   encoder_channels=(16, 32, 32))


def config_items(cfg) -> dict[str, object]:
    return asdict(cfg)


# --------------------------------------------------------------------------
# architectures


class UNet(Module):
    def __init__(self, cfg: UNetConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        k = cfg.kernel
        widths = [cfg.base_filters * 2**i for i in range(cfg.depth)]
        self.down = []
        cin = cfg.in_channels
        for w in widths:
            self.down.append(DoubleConv(cin, w, k, rng))
            cin = w
        self.bottleneck = DoubleConv(cin, cfg.base_filters * 2**cfg.depth, k, rng)
        cin = cfg.base_filters * 2**cfg.depth
        self.up_convs = []
        self.up_blocks = []
        for w in reversed(widths):
            self.up_convs.append(ConvBNReLU(cin, w, k, rng))
            self.up_blocks.append(DoubleConv(2 * w, w, k, rng))
            cin = w
        self.head = Conv(cin, 1, 1, rng)

    def forward(self, x: Tensor, training: bool = False, trace: list | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[3] != self.cfg.in_channels:
            raise ShapeError(f"UNet expects [N,H,W,{self.cfg.in_channels}], got {x.shape}")
        if x.shape[1] % 2**self.cfg.depth or x.shape[2] % 2**self.cfg.depth:
            raise ShapeError(f"UNet input {x.shape} not divisible by 2^{self.cfg.depth}")
        skips = []
        h = x
        for block in self.down:
            h = block(h, training)
            skips.append(h)
            h = ops.maxpool2(h)
        h = self.bottleneck(h, training)
        for up, block, skip in zip(self.up_convs, self.up_blocks, reversed(skips)):
            h = up(ops.upsample2_nearest(h), training)
            merged = ops.concat_channels(skip, h)
            if trace is not None:
                trace.append((h.shape[3], merged.shape[3]))
            h = block(merged, training)
        return ops.relu(self.head(h))


class ScaleAngleNet(Module):
    def __init__(self, cfg: ScaleAngleConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.blocks = []
        cin = cfg.input_channels
        for w in cfg.conv_channels:
            self.blocks.append(DoubleConv(cin, w, cfg.kernel, rng))
            cin = w
        self.fc = []
        fin = cfg.flat_features
        for w in cfg.fc_sizes:
            self.fc.append(Dense(fin, w, rng))
            fin = w

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        if x.ndim != 4 or x.shape[3] != self.cfg.input_channels:
            raise ShapeError(
                f"ScaleAngleNet built for {self.cfg.input_channels} channels, got input {x.shape}"
            )
        h = x
        for block in self.blocks:
            h = ops.maxpool2(block(h, training))
        h = ops.flatten(h)
        for i, layer in enumerate(self.fc):
            h = layer(h)
            if i < len(self.fc) - 1:
                h = ops.relu(h)
        return h


class Autoencoder(Module):
    def __init__(self, cfg: AutoencoderConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        k = cfg.kernel
        hb, wb, cb = cfg.bottleneck_spatial
        self.enc = []
        cin = 3
        for w in cfg.encoder_channels:
            self.enc.append(ConvBNReLU(cin, w, k, rng))
            cin = w
        self.to_bottleneck = Conv(cin, cb, k, rng)
        self.to_latent = Dense(cfg.flat_features, cfg.latent_dim, rng)
        self.from_latent = Dense(cfg.latent_dim, cfg.flat_features, rng)
        self.dec = []
        cin = cb
        for w in reversed(cfg.encoder_channels):
            self.dec.append(ConvBNReLU(cin, w, k, rng))
            cin = w
        self.to_rgb = Conv(cin, 3, k, rng)

    def encode(self, x: Tensor, training: bool = False) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != (self.cfg.input_size, self.cfg.input_size, 3):
            raise ShapeError(f"Autoencoder expects [N,{self.cfg.input_size},{self.cfg.input_size},3], got {x.shape}")
        h = x
        for layer in self.enc:
            h = ops.maxpool2(layer(h, training))
        h = ops.relu(self.to_bottleneck(h))
        return self.to_latent(ops.flatten(h))

    def decode(self, z: Tensor, training: bool = False) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"decode expects [N,{self.cfg.latent_dim}], got {z.shape}")
        hb, wb, cb = self.cfg.bottleneck_spatial
        h = ops.relu(self.from_latent(z)).reshape(z.shape[0], hb, wb, cb)
        for layer in self.dec:
            h = layer(ops.upsample2_nearest(h), training)
        return ops.sigmoid(self.to_rgb(h))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.decode(self.encode(x, training), training)


def build_unet(cfg: UNetConfig, seed: int = 0) -> UNet:
    return UNet(cfg, seed)


def build_scale_angle(cfg: ScaleAngleConfig, seed: int = 0) -> ScaleAngleNet:
    return ScaleAngleNet(cfg, seed)


def build_autoencoder(cfg: AutoencoderConfig, seed: int = 0) -> Autoencoder:
    return Autoencoder(cfg, seed)


def _predict(forward, x: np.ndarray, batch_size: int) -> np.ndarray:
    outs = [forward(Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def unet_predict(model: UNet, rgb: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode elevation prediction (normalized units) for a [N,H,W,3] array."""
    return _predict(lambda t: model.forward(t, training=False), np.asarray(rgb, dtype=np.float64), batch_size)


def scale_angle_predict(model: ScaleAngleNet, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    return _predict(lambda t: model.forward(t, training=False), np.asarray(x, dtype=np.float64), batch_size)


def encode(model: Autoencoder, rgb: np.ndarray, batch_size: int = 32) -> np.ndarray:
    return _predict(lambda t: model.encode(t, training=False), np.asarray(rgb, dtype=np.float64), batch_size)


def decode(model: Autoencoder, z: np.ndarray, batch_size: int = 32) -> np.ndarray:
    return _predict(lambda t: model.decode(t, training=False), np.asarray(z, dtype=np.float64), batch_size)


def count_params(model: Module) -> int:
    """Trainable scalars, BN gamma/beta included, running statistics excluded."""
    return sum(p.size for p in model.parameters())
