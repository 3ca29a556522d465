"""Sub-networks: inpainter, style/content encoders, synthesizer, fusion head,
PatchGAN discriminators, the CTC recognizer and the frozen perceptual
feature network."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import functional as F
from .config import NetConfig
from .geometry import RotatedBox, rotated_roi_align
from .nn import Conv2d, Linear, Module, param
from .spectral import ffc_block
from .tensor import ContractError, DimensionError, Tensor, concat, leaky_relu, relu, sigmoid, tanh


class ResBlock(Module):
    """conv-relu-conv plus a shortcut; stride 2 downsamples with a 4x4 conv."""

    def __init__(self, rng, cin: int, cout: int, stride: int = 1):
        if stride == 1:
            self.conv1 = Conv2d(rng, cin, cout, 3)
        else:
            self.conv1 = Conv2d(rng, cin, cout, 4, stride=2, pad=1)
        self.conv2 = Conv2d(rng, cout, cout, 3, gain=1.0)
        self.skip = Conv2d(rng, cin, cout, 1, gain=1.0) if (cin != cout or stride != 1) else None
        self._stride = stride

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv2(relu(self.conv1(x)))
        s = x
        if self._stride != 1:
            s = F.avgpool2d(s, self._stride)
        if self.skip is not None:
            s = self.skip(s)
        return relu(h + s)


# -- inpainting ---------------------------------------------------------------
class FourierUnit(Module):
    """Spectral 1x1 convolution over stacked real/imag channels."""

    def __init__(self, rng, channels: int):
        c2 = 2 * channels
        self.weight = param(rng.normal(0.0, np.sqrt(0.5 / c2), size=(c2, c2, 1, 1)))
        self.bias = param(np.zeros(c2))

    def forward(self, fb: Tensor) -> Tensor:
        return ffc_block(fb, self.weight, self.bias)


class Inpainter(Module):
    """Encoder to 1/8 resolution, residual Fourier convolutions, upsampling decoder.

    Output pixels outside the mask are copied from the input; only the masked
    region is synthesized.
    """

    def __init__(self, rng, cfg: NetConfig):
        b, c = cfg.base_width, cfg.inpaint_width
        self.enc = [
            Conv2d(rng, 4, b, 4, stride=2, pad=1),
            Conv2d(rng, b, c, 4, stride=2, pad=1),
            Conv2d(rng, c, c, 4, stride=2, pad=1),
        ]
        self.ffc = [FourierUnit(rng, c) for _ in range(cfg.ffc_depth)]
        self.dec = [Conv2d(rng, c, c, 3), Conv2d(rng, c, b, 3)]
        self.out = Conv2d(rng, b, 3, 3, gain=1.0)

    def forward(self, masked: Tensor) -> Tensor:
        scene, mask = masked[:, :3], masked[:, 3:4]
        h = masked
        for conv in self.enc:
            h = relu(conv(h))
        for unit in self.ffc:
            h = h + unit(h)
        for conv in self.dec:
            h = relu(conv(F.upsample_nearest(h, 2)))
        pred = tanh(self.out(F.upsample_nearest(h, 2)))
        return scene + mask * (pred - scene)


# -- foreground module --------------------------------------------------------
class StyleEncoder(Module):
    """Residual CNN of total stride 16 followed by rotated RoI pooling."""

    def __init__(self, rng, cfg: NetConfig):
        if cfg.style_blocks < 1:
            raise ContractError("style encoder needs at least one block per stage")
        widths = cfg.style_widths
        self.stem = Conv2d(rng, 3, widths[0], 4, stride=2, pad=1)
        blocks = []
        cin = widths[0]
        for i, w in enumerate(widths):
            for j in range(cfg.style_blocks):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(ResBlock(rng, cin, w, stride))
                cin = w
        self.blocks = blocks
        self.proj = Conv2d(rng, cin, cfg.style_dim, 1, gain=1.0) if cin != cfg.style_dim else None
        self._grid = cfg.roi_grid
        self._stride = cfg.style_stride

    def feature_map(self, scene: Tensor) -> Tensor:
        h = relu(self.stem(scene))
        for blk in self.blocks:
            h = blk(h)
        return self.proj(h) if self.proj is not None else h

    def forward(self, scene: Tensor, boxes: Sequence[RotatedBox]) -> Tensor:
        fs = self.feature_map(scene)
        scaled = [b.scaled(self._stride) for b in boxes]
        return rotated_roi_align(fs, scaled, self._grid, self._grid)


class ContentEncoder(Module):
    def __init__(self, rng, cfg: NetConfig):
        cin = 3
        stages = []
        for w in cfg.content_widths:
            stages.append(ResBlock(rng, cin, w, stride=2))
            cin = w
        self.stages = stages

    def forward(self, tc: Tensor) -> list[Tensor]:
        h, w = tc.shape[2:]
        if h % 32 or w % 32:
            raise ContractError(f"content image extents must be divisible by 32, got {h}x{w}")
        feats = []
        x = tc
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def adain(fc: Tensor, z_s: Tensor, z_b: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each channel of ``fc`` then scale by ``z_s`` [N,C] and shift by ``z_b`` [N,C]."""
    n, c = fc.shape[:2]
    if z_s.shape != (n, c) or z_b.shape != (n, c):
        raise DimensionError(f"adain: style affine {z_s.shape}/{z_b.shape} does not match features {fc.shape}")
    mean, std = F.instance_stats(fc)
    normed = (fc - mean.reshape(n, c, 1, 1)) / (std.reshape(n, c, 1, 1) + eps)
    return z_s.reshape(n, c, 1, 1) * normed + z_b.reshape(n, c, 1, 1)


class StyleProjections(Module):
    """One linear map z -> (z_s, z_b) per AdaIN site.

    Bias starts at (1, 0) and weights are small, so AdaIN begins as plain
    instance normalization that already depends weakly on z.
    """

    def __init__(self, rng, style_dim: int, sites: dict[str, int], init_std: float = 0.02):
        self.sites = {}
        for name, channels in sites.items():
            lin = Linear(rng, style_dim, 2 * channels, std=init_std / np.sqrt(style_dim))
            lin.bias.data[:channels] = 1.0
            self.sites[name] = lin
        self._channels = dict(sites)

    def project(self, z: Tensor, site: str) -> tuple[Tensor, Tensor]:
        if site not in self.sites:
            raise ContractError(f"unknown AdaIN site {site!r}")
        c = self._channels[site]
        out = self.sites[site](z)
        return out[:, :c], out[:, c:]


def synth_sites(cfg: NetConfig) -> dict[str, int]:
    return {f"block{j}.{ab}": w for j, w in enumerate(cfg.synth_widths, 1) for ab in ("a", "b")}


class SynthBlock(Module):
    def __init__(self, rng, cin: int, cout: int):
        self.conv1 = Conv2d(rng, cin, cout, 3)
        self.conv2 = Conv2d(rng, cout, cout, 3, gain=1.0)
        self.skip = Conv2d(rng, cin, cout, 1, gain=1.0) if cin != cout else None

    def forward(self, x, affine_a, affine_b, eps):
        h = relu(adain(self.conv1(x), *affine_a, eps))
        h = adain(self.conv2(h), *affine_b, eps)
        s = self.skip(x) if self.skip is not None else x
        return F.upsample_nearest(relu(h + s), 2)


class Synthesizer(Module):
    """Five AdaIN residual blocks, each followed by x2 upsampling.

    After block k in ``skip_stages`` the encoder map of stage 5-k is
    concatenated along channels.
    """

    def __init__(self, rng, cfg: NetConfig, skip_connections: bool = True):
        cw, sw = cfg.content_widths, cfg.synth_widths
        self._skips = tuple(cfg.skip_stages) if skip_connections else ()
        self._eps = cfg.adain_eps
        blocks = []
        cin = cw[-1]
        self.block_in_channels = []
        for j, w in enumerate(sw, 1):
            self.block_in_channels.append(cin)
            blocks.append(SynthBlock(rng, cin, w))
            cin = w + (cw[len(cw) - j - 1] if j in self._skips else 0)
        self.blocks = blocks
        self.out = Conv2d(rng, cin, 3, 3, gain=1.0)

    def forward(self, fc_list: Sequence[Tensor], z: Tensor, projections: StyleProjections) -> Tensor:
        x = fc_list[-1]
        depth = len(self.blocks)
        for j, blk in enumerate(self.blocks, 1):
            x = blk(x, projections.project(z, f"block{j}.a"), projections.project(z, f"block{j}.b"), self._eps)
            if j in self._skips:
                enc = fc_list[depth - j - 1]
                if enc.shape[2:] != x.shape[2:]:
                    raise DimensionError(f"skip junction {j}: {x.shape} vs encoder {enc.shape}")
                x = concat([x, enc], axis=1)
        return tanh(self.out(x))


class FusionHead(Module):
    """Residual blocks over [G_b, warped G_f, coverage]; emits a blend mask and colors.

    Output = (1 - a) * G_b + a * rgb, which stays inside [-1, 1].
    """

    def __init__(self, rng, cfg: NetConfig):
        f = cfg.fusion_width
        self.inp = Conv2d(rng, 7, f, 3)
        self.blocks = [ResBlock(rng, f, f) for _ in range(cfg.fusion_blocks)]
        self.out = Conv2d(rng, f, 4, 3, gain=1.0)
        self.out.bias.data[0] = -2.0

    def forward(self, g_b: Tensor, warped: Tensor, coverage: Tensor) -> Tensor:
        h = relu(self.inp(concat([g_b, warped, coverage], axis=1)))
        for blk in self.blocks:
            h = blk(h)
        o = self.out(h)
        a = sigmoid(o[:, :1])
        rgb = tanh(o[:, 1:])
        return g_b + a * (rgb - g_b)


# -- critics and measurers ----------------------------------------------------
class PatchGAN(Module):
    """Four stride-2 4x4 conv blocks and one stride-1 4x4 block emitting logits."""

    def __init__(self, rng, widths: Sequence[int]):
        convs = []
        cin = 3
        for w in widths:
            convs.append(Conv2d(rng, cin, w, 4, stride=2, pad=1))
            cin = w
        self.convs = convs
        self.final = Conv2d(rng, cin, 1, 4, stride=1, pad=1, gain=1.0)

    def forward(self, img: Tensor) -> Tensor:
        if min(img.shape[2:]) < 32:
            raise ContractError(f"PatchGAN input must be at least 32x32, got {img.shape[2:]}")
        h = img
        for conv in self.convs:
            h = leaky_relu(conv(h), 0.2)
        return self.final(h)


class Recognizer(Module):
    """CRNN-style recognizer; a 1-D convolution over frames stands in for the recurrent layer.

    Input [N,3,32,W] -> per-frame log-probabilities [W/4, N, |alphabet|+1]
    with the blank as the last class.
    """

    def __init__(self, rng, cfg: NetConfig, n_classes: int):
        w1, w2, w3 = cfg.rec_widths
        self.c1 = Conv2d(rng, 3, w1, 3)
        self.c2 = Conv2d(rng, w1, w2, 4, stride=2, pad=1)
        self.c3 = Conv2d(rng, w2, w2, 3)
        self.c4 = Conv2d(rng, w2, w3, 4, stride=2, pad=1)
        self.c5 = Conv2d(rng, w3, w3, 3)
        rows = cfg.patch_h // 4
        self.seq = Conv2d(rng, w3 * rows, cfg.rec_hidden, (1, 3), pad=(0, 1))
        self.cls = Conv2d(rng, cfg.rec_hidden, n_classes, 1, gain=1.0)
        self._height = cfg.patch_h

    def forward(self, patch: Tensor) -> Tensor:
        if patch.shape[2] != self._height:
            raise ContractError(f"recognizer expects height {self._height}, got {patch.shape[2]}")
        h = relu(self.c1(patch))
        h = relu(self.c2(h))
        h = relu(self.c3(h))
        h = relu(self.c4(h))
        h = relu(self.c5(h))
        n, c, r, t = h.shape
        h = h.reshape(n, c * r, 1, t)
        h = relu(self.seq(h))
        logits = self.cls(h).reshape(n, -1, t).transpose(2, 0, 1)
        return F.log_softmax(logits, axis=2)


class FeatureNet(Module):
    """Frozen random-weight 4-stage CNN used as the perceptual feature extractor."""

    def __init__(self, cfg: NetConfig):
        rng = np.random.default_rng(cfg.feat_seed)
        convs = []
        cin = 3
        for w in cfg.feat_widths:
            convs.append(Conv2d(rng, cin, w, 4, stride=2, pad=1))
            cin = w
        self.convs = convs
        self.freeze()

    def forward(self, img: Tensor) -> list[Tensor]:
        feats = []
        h = img
        for conv in self.convs:
            h = relu(conv(h))
            feats.append(h)
        return feats
