"""U-Net variants mapping an I/Q packet to a phase map ``[B, 1, H, W]``.

Real models take ``2n`` channels (real parts then imaginary parts of the
``n`` frames); the complex U-Net takes ``n`` complex channels.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .layers import (
    BatchNorm2d,
    ComplexBatchNorm2d,
    ComplexConv2d,
    ComplexConvTranspose2d,
    Conv2d,
    ConvNeXtBlock,
    ConvTranspose2d,
    LayerNorm2d,
    complex_maxpool2x2,
    concat_skip,
    count_parameters,
    crelu,
    match_size,
    maxpool2x2,
)

UNET_WIDTHS = (32, 64, 128)
CONVNEXT_WIDTHS = (32, 64, 128, 256)
CONVNEXT_DEPTHS = (3, 3, 9, 3)


class _DoubleConv(nn.Module):
    """5x5 then 3x3 convolution, each followed by batch norm and ReLU."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 5, bias=False)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, bias=False)
        self.bn2 = BatchNorm2d(out_ch)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class _ComplexDoubleConv(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = ComplexConv2d(in_ch, out_ch, 5, bias=False)
        self.bn1 = ComplexBatchNorm2d(out_ch)
        self.conv2 = ComplexConv2d(out_ch, out_ch, 3, bias=False)
        self.bn2 = ComplexBatchNorm2d(out_ch)

    def forward(self, x):
        x = crelu(self.bn1(self.conv1(x)))
        return crelu(self.bn2(self.conv2(x)))


class _UNetBase(nn.Module):
    kind = ""
    input_kind = "real"

    def __init__(self, n, widths):
        super().__init__()
        if n < 1:
            raise ValueError("packet size must be >= 1")
        if len(widths) < 2:
            raise ValueError("need at least two encoder stages")
        self.n, self.widths = n, tuple(widths)
        self.bottleneck_shape = None

    @property
    def factor(self):
        return 2 ** (len(self.widths) - 1)

    def _check_input(self, x):
        h, w = x.shape[-2:]
        f = self.factor
        if h % f or w % f:
            raise ValueError(f"spatial size {h}x{w} is not divisible by {f}")
        expected = self.n if self.input_kind == "complex" else 2 * self.n
        if x.shape[1] != expected:
            raise ValueError(f"expected {expected} input channels, got {x.shape[1]}")

    def config(self):
        return {"kind": self.kind, "n": self.n, "widths": list(self.widths)}


class RealUNet(_UNetBase):
    kind = "real_unet"

    def __init__(self, n, widths=UNET_WIDTHS):
        super().__init__(n, widths)
        w = self.widths
        self.encoders = nn.ModuleList(
            [_DoubleConv(2 * n if i == 0 else w[i - 1], w[i]) for i in range(len(w))]
        )
        self.bottom = _DoubleConv(w[-1], w[-1])
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        below = w[-1]
        for i in range(len(w) - 2, -1, -1):
            self.ups.append(ConvTranspose2d(below, below))
            self.decoders.append(_DoubleConv(below + w[i], w[i]))
            below = w[i]
        self.head = Conv2d(w[0], 1, 1)

    def forward(self, x):
        self._check_input(x)
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            if i < len(self.encoders) - 1:
                skips.append(x)
                x = maxpool2x2(x)
        self.bottleneck_shape = tuple(x.shape[-2:])
        x = self.bottom(x)
        for up, dec in zip(self.ups, self.decoders):
            x = dec(concat_skip(up(x), skips.pop()))
        return self.head(x)


class ComplexUNet(_UNetBase):
    """Complex in every layer but the last, which sees ``[re, im]`` stacked as real channels."""

    kind = "complex_unet"
    input_kind = "complex"

    def __init__(self, n, widths=UNET_WIDTHS):
        super().__init__(n, widths)
        w = self.widths
        self.encoders = nn.ModuleList(
            [_ComplexDoubleConv(n if i == 0 else w[i - 1], w[i]) for i in range(len(w))]
        )
        self.bottom = _ComplexDoubleConv(w[-1], w[-1])
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        below = w[-1]
        for i in range(len(w) - 2, -1, -1):
            self.ups.append(ComplexConvTranspose2d(below, below))
            self.decoders.append(_ComplexDoubleConv(below + w[i], w[i]))
            below = w[i]
        self.head = Conv2d(2 * w[0], 1, 1)

    def forward(self, x):
        if not torch.is_complex(x):
            raise ValueError("complex U-Net expects a complex input tensor")
        self._check_input(x)
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            if i < len(self.encoders) - 1:
                skips.append(x)
                x = complex_maxpool2x2(x)
        self.bottleneck_shape = tuple(x.shape[-2:])
        x = self.bottom(x)
        for up, dec in zip(self.ups, self.decoders):
            x = dec(concat_skip(up(x), skips.pop()))
        return self.head(torch.cat([x.real, x.imag], dim=1))


class ConvNeXtUNet(_UNetBase):
    """ConvNeXt encoder with a mirrored decoder.

    Two 3x3 convolutions with GELU run at full resolution first, so that
    products of neighbouring I/Q samples can form before any downsampling.
    The 7x7 stem then halves only the axial size; each later stage starts with a
    LayerNorm and a 2x2 stride-2 convolution. The decoder upsamples with 2x2
    transposed convolutions, fuses the skip with a 1x1 convolution and runs
    as many blocks as the matching encoder stage. A final ``(2, 1)``
    transposed convolution undoes the stem stride, and the raw input is
    concatenated before the 1x1 head.
    """

    kind = "convnext_unet"

    def __init__(self, n, widths=CONVNEXT_WIDTHS, depths=CONVNEXT_DEPTHS):
        super().__init__(n, widths)
        w, d = self.widths, tuple(depths)
        if len(d) != len(w):
            raise ValueError("depths and widths must have the same length")
        self.depths = d
        self.pre_stem = nn.Sequential(Conv2d(2 * n, w[0], 3), nn.GELU(), Conv2d(w[0], w[0], 3), nn.GELU())
        self.stem = Conv2d(w[0], w[0], 7, stride=(2, 1), padding=3)
        self.stem_norm = LayerNorm2d(w[0])
        self.downs = nn.ModuleList()
        self.stages = nn.ModuleList()
        for i in range(len(w)):
            if i > 0:
                self.downs.append(nn.Sequential(LayerNorm2d(w[i - 1]), Conv2d(w[i - 1], w[i], 2, stride=2, padding=0)))
            self.stages.append(nn.Sequential(*[ConvNeXtBlock(w[i]) for _ in range(d[i])]))
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.dec_stages = nn.ModuleList()
        for i in range(len(w) - 1, 0, -1):
            self.ups.append(ConvTranspose2d(w[i], w[i - 1]))
            self.fuses.append(Conv2d(2 * w[i - 1], w[i - 1], 1))
            self.dec_stages.append(nn.Sequential(*[ConvNeXtBlock(w[i - 1]) for _ in range(d[i - 1])]))
        self.final_up = ConvTranspose2d(w[0], w[0], stride=(2, 1))
        self.refine = Conv2d(w[0] + 2 * n, w[0], 3)
        self.head = Conv2d(w[0], 1, 1)

    @property
    def factor(self):
        return 1

    def _check_input(self, x):
        super()._check_input(x)
        h, w = x.shape[-2:]
        if (h + 1) // 2 < 2 ** (len(self.widths) - 1) or w < 2 ** (len(self.widths) - 1):
            raise ValueError(f"spatial size {h}x{w} is too small for {len(self.widths) - 1} downsamplings")

    def config(self):
        return {**super().config(), "depths": list(self.depths)}

    def forward(self, x):
        self._check_input(x)
        inp = x
        x = self.stem_norm(self.stem(self.pre_stem(x)))
        skips = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                skips.append(x)
                x = self.downs[i - 1](x)
            x = stage(x)
        self.bottleneck_shape = tuple(x.shape[-2:])
        for up, fuse, stage in zip(self.ups, self.fuses, self.dec_stages):
            x = stage(fuse(concat_skip(up(x), skips.pop())))
        x = match_size(self.final_up(x), inp.shape[-2:])
        x = F.gelu(self.refine(torch.cat([inp, x], dim=1)))
        return self.head(x)


MODEL_KINDS = {"real_unet": RealUNet, "complex_unet": ComplexUNet, "convnext_unet": ConvNeXtUNet}


def build_real_unet(n, widths=UNET_WIDTHS) -> RealUNet:
    return RealUNet(n, widths)


def build_complex_unet(n, widths=UNET_WIDTHS) -> ComplexUNet:
    return ComplexUNet(n, widths)


def build_convnext_unet(n, widths=CONVNEXT_WIDTHS, depths=CONVNEXT_DEPTHS) -> ConvNeXtUNet:
    return ConvNeXtUNet(n, widths, depths)


def build_model(kind: str, n: int, **overrides) -> nn.Module:
    """Build an architecture by name (``real_unet``, ``complex_unet``, ``convnext_unet``)."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(n, **{k: tuple(v) for k, v in overrides.items()})


def model_input(model: nn.Module, iq) -> torch.Tensor:
    """Convert complex I/Q ``[B, n, H, W]`` to the tensor layout ``model`` expects."""
    t = iq if torch.is_tensor(iq) else torch.from_numpy(iq)
    dtype = next(model.parameters()).dtype
    if model.input_kind == "complex":
        return t.to(torch.complex128 if dtype == torch.float64 else torch.complex64)
    return torch.cat([t.real, t.imag], dim=1).to(dtype)


__all__ = [
    "RealUNet",
    "ComplexUNet",
    "ConvNeXtUNet",
    "MODEL_KINDS",
    "build_real_unet",
    "build_complex_unet",
    "build_convnext_unet",
    "build_model",
    "model_input",
    "count_parameters",
]
