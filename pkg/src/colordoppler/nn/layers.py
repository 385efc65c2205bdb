"""Real and complex building blocks.

Complex activations are torch complex tensors; complex weights are stored as
pairs of real parameters named ``*_re`` / ``*_im`` so that every optimizer and
checkpoint path only ever sees real tensors.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import torch
import torch.nn.functional as F
from torch import nn

_multiply_counters: list[dict] = []


@contextmanager
def count_multiplies():
    """Accumulate real multiply counts of every convolution run inside the block."""
    counter = {"real": 0}
    _multiply_counters.append(counter)
    try:
        yield counter
    finally:
        _multiply_counters.remove(counter)


def _record(count: int):
    for c in _multiply_counters:
        c["real"] += int(count)


def _same_padding(kernel_size, stride):
    kh, kw = kernel_size
    if (kh % 2 == 0 or kw % 2 == 0) and stride == (1, 1):
        raise ValueError("'same' padding needs odd kernel sizes")
    return kh // 2, kw // 2


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


# --- functional ---------------------------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, padding="same", groups=1):
    """Cross-correlation; ``padding='same'`` keeps the size for odd kernels."""
    stride = _pair(stride)
    if padding == "same":
        padding = _same_padding(weight.shape[-2:], stride)
    if x.shape[1] != weight.shape[1] * groups:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {weight.shape[1] * groups}")
    out = F.conv2d(x, weight, bias, stride, padding, 1, groups)
    _record(out.numel() * weight.shape[1] * weight.shape[2] * weight.shape[3])
    return out


def conv_transpose2d(x, weight, bias=None, stride=2):
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"input has {x.shape[1]} channels, weight expects {weight.shape[0]}")
    out = F.conv_transpose2d(x, weight, bias, _pair(stride))
    _record(x.numel() * weight.shape[1] * weight.shape[2] * weight.shape[3])
    return out


def _complex_bias(b_re, b_im):
    if b_re is None:
        return None
    return b_re, b_im


def conv2d_complex(x, w_re, w_im, b_re=None, b_im=None, stride=1, padding="same", groups=1):
    """``(Wr + iWi) * (xr + i xi)`` computed as four real convolutions."""
    xr, xi = x.real, x.imag
    re = conv2d(xr, w_re, None, stride, padding, groups) - conv2d(xi, w_im, None, stride, padding, groups)
    im = conv2d(xi, w_re, None, stride, padding, groups) + conv2d(xr, w_im, None, stride, padding, groups)
    if b_re is not None:
        re = re + b_re[:, None, None]
        im = im + b_im[:, None, None]
    return torch.complex(re, im)


def conv_transpose2d_complex(x, w_re, w_im, b_re=None, b_im=None, stride=2):
    xr, xi = x.real, x.imag
    re = conv_transpose2d(xr, w_re, None, stride) - conv_transpose2d(xi, w_im, None, stride)
    im = conv_transpose2d(xi, w_re, None, stride) + conv_transpose2d(xr, w_im, None, stride)
    if b_re is not None:
        re = re + b_re[:, None, None]
        im = im + b_im[:, None, None]
    return torch.complex(re, im)


def crelu(x):
    """ReLU on the real and imaginary parts separately."""
    return torch.complex(F.relu(x.real), F.relu(x.imag))


def maxpool2x2(x):
    return F.max_pool2d(x, 2)


def complex_maxpool2x2(x):
    """2x2 max pooling by modulus; the winning complex value is passed through."""
    _, idx = F.max_pool2d(x.abs(), 2, return_indices=True)
    b, c = x.shape[:2]
    flat_idx = idx.flatten(2)
    re = x.real.flatten(2).gather(2, flat_idx).view_as(idx)
    im = x.imag.flatten(2).gather(2, flat_idx).view_as(idx)
    return torch.complex(re, im)


def match_size(x, shape):
    """Center-crop or zero-pad the last two dims of ``x`` to ``shape``."""
    out = x
    for dim, target in zip((-2, -1), shape):
        size = out.shape[dim]
        if size > target:
            start = (size - target) // 2
            out = out.narrow(dim, start, target)
        elif size < target:
            before = (target - size) // 2
            pad = [0, 0, 0, 0]
            pad_idx = 2 if dim == -2 else 0
            pad[pad_idx], pad[pad_idx + 1] = before, target - size - before
            out = F.pad(out, pad)
    return out


def concat_skip(x, skip):
    """Resize ``x`` to the skip connection's spatial shape and stack channels ``[skip, x]``."""
    return torch.cat([skip, match_size(x, skip.shape[-2:])], dim=1)


def layernorm2d(x, weight, bias, eps=1e-6):
    """LayerNorm over the channel axis of an ``[B, C, H, W]`` tensor."""
    mean = x.mean(1, keepdim=True)
    var = (x - mean).pow(2).mean(1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    return y * weight[:, None, None] + bias[:, None, None]


def whiten_2x2(vrr, vri, vii):
    """Inverse square root of the symmetric positive matrix ``[[vrr, vri], [vri, vii]]``."""
    s = torch.sqrt(vrr * vii - vri * vri)
    t = torch.sqrt(vrr + vii + 2 * s)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, -vri * inv, (vrr + s) * inv


def complex_batchnorm(x, running_mean, running_cov, weight, bias, training, momentum=0.1, eps=1e-5):
    """Per-channel whitening of ``(re, im)`` followed by a complex affine map.

    ``running_mean`` is ``[2, C]`` (re, im); ``running_cov`` is ``[3, C]``
    (Vrr, Vri, Vii); ``weight`` is ``[3, C]`` (Grr, Gri, Gii); ``bias`` is
    ``[2, C]``. Batch statistics use the biased (population) estimator.
    """
    xr, xi = x.real, x.imag
    dims = (0, 2, 3)
    if training:
        if xr.numel() // xr.shape[1] < 2:
            raise ValueError("complex batch norm needs at least two values per channel in training mode")
        mr, mi = xr.mean(dims), xi.mean(dims)
        cr, ci = xr - mr[:, None, None], xi - mi[:, None, None]
        vrr = (cr * cr).mean(dims)
        vri = (cr * ci).mean(dims)
        vii = (ci * ci).mean(dims)
        if running_mean is not None:
            with torch.no_grad():
                running_mean.mul_(1 - momentum).add_(momentum * torch.stack([mr, mi]))
                running_cov.mul_(1 - momentum).add_(momentum * torch.stack([vrr, vri, vii]))
    else:
        mr, mi = running_mean[0], running_mean[1]
        vrr, vri, vii = running_cov[0], running_cov[1], running_cov[2]
        cr, ci = xr - mr[:, None, None], xi - mi[:, None, None]
    wrr, wri, wii = whiten_2x2(vrr + eps, vri, vii + eps)
    e = lambda t: t[:, None, None]  # noqa: E731
    zr = e(wrr) * cr + e(wri) * ci
    zi = e(wri) * cr + e(wii) * ci
    grr, gri, gii = weight[0], weight[1], weight[2]
    yr = e(grr) * zr + e(gri) * zi + e(bias[0])
    yi = e(gri) * zr + e(gii) * zi + e(bias[1])
    return torch.complex(yr, yi)


# --- modules ------------------------------------------------------------------------


def xavier_(weight, gain=1.0):
    nn.init.xavier_uniform_(weight, gain=gain)
    return weight


class Conv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding="same", groups=1, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride, self.padding, self.groups = _pair(stride), padding, groups
        if in_ch % groups or out_ch % groups:
            raise ValueError("channels must be divisible by groups")
        self.weight = nn.Parameter(xavier_(torch.empty(out_ch, in_ch // groups, kh, kw)))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(nn.Module):
    """Transposed convolution with ``kernel_size == stride`` (non-overlapping upsampling)."""

    def __init__(self, in_ch, out_ch, stride=2, bias=True):
        super().__init__()
        self.stride = _pair(stride)
        self.weight = nn.Parameter(xavier_(torch.empty(in_ch, out_ch, *self.stride)))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None

    def forward(self, x):
        return conv_transpose2d(x, self.weight, self.bias, self.stride)


class ComplexConv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding="same", bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.stride, self.padding = _pair(stride), padding
        self.weight_re = nn.Parameter(xavier_(torch.empty(out_ch, in_ch, kh, kw), 1 / math.sqrt(2)))
        self.weight_im = nn.Parameter(xavier_(torch.empty(out_ch, in_ch, kh, kw), 1 / math.sqrt(2)))
        if bias:
            self.bias_re = nn.Parameter(torch.zeros(out_ch))
            self.bias_im = nn.Parameter(torch.zeros(out_ch))
        else:
            self.bias_re = self.bias_im = None

    def forward(self, x):
        return conv2d_complex(x, self.weight_re, self.weight_im, self.bias_re, self.bias_im, self.stride, self.padding)


class ComplexConvTranspose2d(nn.Module):
    def __init__(self, in_ch, out_ch, stride=2, bias=True):
        super().__init__()
        self.stride = _pair(stride)
        self.weight_re = nn.Parameter(xavier_(torch.empty(in_ch, out_ch, *self.stride), 1 / math.sqrt(2)))
        self.weight_im = nn.Parameter(xavier_(torch.empty(in_ch, out_ch, *self.stride), 1 / math.sqrt(2)))
        if bias:
            self.bias_re = nn.Parameter(torch.zeros(out_ch))
            self.bias_im = nn.Parameter(torch.zeros(out_ch))
        else:
            self.bias_re = self.bias_im = None

    def forward(self, x):
        return conv_transpose2d_complex(x, self.weight_re, self.weight_im, self.bias_re, self.bias_im, self.stride)


class BatchNorm2d(nn.Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        if self.training and x.numel() // x.shape[1] < 2:
            raise ValueError("batch norm needs at least two values per channel in training mode")
        return F.batch_norm(
            x, self.running_mean, self.running_var, self.weight, self.bias, self.training, self.momentum, self.eps
        )


class ComplexBatchNorm2d(nn.Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        g = torch.zeros(3, channels)
        g[0] = g[2] = 1 / math.sqrt(2)
        self.weight = nn.Parameter(g)
        self.bias_re = nn.Parameter(torch.zeros(channels))
        self.bias_im = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(2, channels))
        cov = torch.zeros(3, channels)
        cov[0] = cov[2] = 1.0
        self.register_buffer("running_cov", cov)

    def forward(self, x):
        bias = torch.stack([self.bias_re, self.bias_im])
        return complex_batchnorm(
            x, self.running_mean, self.running_cov, self.weight, bias, self.training, self.momentum, self.eps
        )


class LayerNorm2d(nn.Module):
    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return layernorm2d(x, self.weight, self.bias, self.eps)


class ConvNeXtBlock(nn.Module):
    """Depthwise 7x7 conv, channel LayerNorm, 4x pointwise expansion, GELU,
    pointwise reduction, residual add."""

    def __init__(self, channels, expansion=4):
        super().__init__()
        self.dwconv = Conv2d(channels, channels, 7, groups=channels)
        self.norm = LayerNorm2d(channels)
        self.pw1 = Conv2d(channels, expansion * channels, 1)
        self.pw2 = Conv2d(expansion * channels, channels, 1)

    def forward(self, x):
        if x.shape[1] != self.norm.weight.shape[0]:
            raise ValueError(f"block expects {self.norm.weight.shape[0]} channels, got {x.shape[1]}")
        y = self.pw2(F.gelu(self.pw1(self.norm(self.dwconv(x)))))
        return x + y


def count_parameters(model: nn.Module) -> int:
    """Trainable scalars, counting each complex weight (``*_re``/``*_im`` pair) once."""
    return sum(p.numel() for name, p in model.named_parameters() if not name.endswith("_im"))
