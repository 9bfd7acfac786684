"""Differentiable layer operations on NHWC tensors.

Images are laid out ``[N, H, W, C]`` and convolution kernels
``[k, k, C_in, C_out]``. Convolutions are computed by unrolling patches
(im2col) into a matrix product; the input gradient folds the patch gradients
back with ``k*k`` strided slice-adds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _im2col(xp: np.ndarray, k: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + ho, j : j + wo, :]
    return cols


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """Stride-1 2-D cross-correlation plus bias.

    ``padding="same"`` zero-pads by ``k // 2`` so the spatial size is kept;
    ``"valid"`` shrinks each side to ``H - k + 1``.
    """
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kernel.shape} must be [k, k, Cin, Cout] with odd k")
    if x.ndim != 4 or kernel.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    k, _, cin, cout = kernel.shape
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    p = k // 2 if padding == "same" else 0
    xd = x.data
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0))) if p else xd
    n, hp, wp, _ = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {kernel.shape}")
    cols = _im2col(xp, k, ho, wo).reshape(-1, k * k * cin)
    wmat = kernel.data.reshape(k * k * cin, cout)
    out = (cols @ wmat + bias.data).reshape(n, ho, wo, cout)

    def grad_fn(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, k, k, cin)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, p : p + xd.shape[1], p : p + xd.shape[2], :] if p else dxp
        return gx, gk, gb

    return make_result(out, (x, kernel, bias), grad_fn)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2: expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial size {h}x{w} must be even")
    h2, w2 = h // 2, w // 2
    blocks = x.data.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (gb.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c),)

    return make_result(out, (x,), grad_fn)


@dataclass
class RunningStats:
    """Per-channel running mean/variance kept by a batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    training: bool,
    stats: RunningStats,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Normalize each channel over every axis except the last.

    In training mode the batch statistics are used and ``stats`` is updated in
    place as ``momentum * old + (1 - momentum) * batch`` (unbiased variance).
    In eval mode the stored statistics are used.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma {gamma.shape}/beta {beta.shape} vs input {x.shape}")
    axes = tuple(range(x.ndim - 1))
    m = x.data.size // c
    if training:
        if m < 2:
            raise ShapeError(f"batchnorm: training needs at least 2 values per channel, got {x.shape}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.mean[:] = momentum * stats.mean + (1 - momentum) * mu
        stats.var[:] = momentum * stats.var + (1 - momentum) * var * m / (m - 1)
    else:
        mu, var = stats.mean.copy(), stats.var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def grad_fn(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                gx = (inv / m) * (
                    m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
                )
            else:
                gx = dxhat * inv
        return gx, gg, gbeta

    return make_result(out, (x, gamma, beta), grad_fn)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for ``x`` of shape [N, F]."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weights {weights.shape}")
    out = x.data @ weights.data + bias.data

    def grad_fn(g):
        return (
            g @ weights.data.T if x.requires_grad else None,
            x.data.T @ g if weights.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return make_result(out, (x, weights, bias), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def upsample2_nearest(x: Tensor) -> Tensor:
    """Repeat every pixel into a 2x2 block."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2_nearest: expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return make_result(
        out, (x,), lambda g: (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)
    )


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two NHWC tensors along the channel axis (``a`` first)."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[3]
    return make_result(
        np.concatenate([a.data, b.data], axis=3),
        (a, b),
        lambda g: (g[..., :ca], g[..., ca:]),
    )


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def _check_pair(pred: Tensor, target, name: str) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} vs target {target.shape}")
    return target


def mse_loss(pred: Tensor, target) -> Tensor:
    target = _check_pair(pred, target, "mse_loss")
    diff = pred.data - target.data
    n = diff.size

    def grad_fn(g):
        gd = (2.0 / n) * np.asarray(g).reshape(()) * diff
        return gd, -gd

    return make_result(np.asarray(np.mean(diff * diff)), (pred, target), grad_fn)


def mae_loss(pred: Tensor, target) -> Tensor:
    target = _check_pair(pred, target, "mae_loss")
    diff = pred.data - target.data
    n = diff.size

    def grad_fn(g):
        gd = np.asarray(g).reshape(()) / n * np.sign(diff)
        return gd, -gd

    return make_result(np.asarray(np.mean(np.abs(diff))), (pred, target), grad_fn)
