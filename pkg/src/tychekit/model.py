"""Tyche-TS network: set-interaction layers in a UNet-like encoder/decoder.

Tensors carry an explicit set axis.  Candidate sets are ``(B, K, C, H, W)``
and context sets ``(B, S, C, H, W)``; every convolution is shared across
set members and applied member-wise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "ModelConfig",
    "SetConv",
    "CrossBlock",
    "SetBlock",
    "TycheNet",
    "set_mean",
    "count_parameters",
    "make_noise",
]


@dataclass
class ModelConfig:
    depth: int = 4
    features: int | list[int] = 64
    kernel_size: int = 3
    slope: float = 0.01
    k_train: int = 8
    input_size: tuple[int, int] = (128, 128)
    noise_channels: int = 1
    # read the context update from the CrossBlock output (True) or from the
    # incoming context features (False)
    context_from_cross: bool = True
    symmetric_decoder: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if isinstance(self.features, (list, tuple)):
            self.features = [int(f) for f in self.features]
        self.input_size = tuple(int(s) for s in self.input_size)
        self.validate()

    @property
    def level_features(self) -> list[int]:
        if isinstance(self.features, list):
            return list(self.features)
        return [int(self.features)] * self.depth

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        feats = self.level_features
        if len(feats) != self.depth:
            raise ValueError(
                f"features list has {len(feats)} entries for depth {self.depth}"
            )
        if any(f <= 0 for f in feats):
            raise ValueError(f"features must be positive, got {feats}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.noise_channels < 0:
            raise ValueError("noise_channels must be >= 0")
        factor = 2 ** (self.depth - 1)
        h, w = self.input_size
        if h % factor or w % factor:
            raise ValueError(
                f"input size {h}x{w} is not divisible by 2^(depth-1) = {factor}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def set_mean(x: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Mean over a set axis that is bit-identical under member permutation.

    Members are sorted element-wise before the reduction so the floating
    point accumulation order does not depend on their order.
    """
    if x.shape[dim] == 1:
        return x.select(dim, 0)
    return torch.sort(x, dim=dim).values.mean(dim=dim)


class SetConv(nn.Module):
    """Conv2d + LeakyReLU shared across the members of a set."""

    def __init__(self, in_ch, out_ch, kernel_size=3, slope=0.01, act=True):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, padding=kernel_size // 2)
        self.slope = slope
        self.act = act

    def forward(self, x):
        b, m = x.shape[:2]
        y = self.conv(x.reshape(b * m, *x.shape[2:]))
        if self.act:
            y = F.leaky_relu(y, self.slope)
        return y.reshape(b, m, *y.shape[1:])


class CrossBlock(nn.Module):
    """Interact one feature map with a set of feature maps.

    ``t_j = act(conv_theta(u || v_j))`` with one kernel for every j, the new
    set is ``{t_j}`` and the new single map is ``act(conv_psi(mean_j t_j))``.
    """

    def __init__(self, u_ch, v_ch, out_ch, kernel_size=3, slope=0.01):
        super().__init__()
        self.pair = SetConv(u_ch + v_ch, out_ch, kernel_size, slope)
        self.single = SetConv(out_ch, out_ch, kernel_size, slope)

    def forward(self, u, v):
        # u: (B, C, H, W), v: (B, S, C', H, W)
        if u.shape[-2:] != v.shape[-2:]:
            raise ValueError(
                f"spatial mismatch: u {tuple(u.shape[-2:])} vs V {tuple(v.shape[-2:])}"
            )
        s = v.shape[1]
        uu = u.unsqueeze(1).expand(-1, s, -1, -1, -1)
        t = self.pair(torch.cat([uu, v], dim=2))
        u_new = self.single(set_mean(t).unsqueeze(1)).squeeze(1)
        return u_new, t


class SetBlock(nn.Module):
    """Set-to-set interaction between candidate features U and context V."""

    def __init__(
        self, u_ch, v_ch, out_ch, kernel_size=3, slope=0.01, context_from_cross=True
    ):
        super().__init__()
        self.cross = CrossBlock(u_ch, v_ch, out_ch, kernel_size, slope)
        self.conv_m = SetConv(u_ch + out_ch, out_ch, kernel_size, slope)
        self.conv_u = SetConv(out_ch, out_ch, kernel_size, slope)
        self.context_from_cross = context_from_cross
        v_in = out_ch if context_from_cross else v_ch
        self.conv_v = SetConv(v_in, out_ch, kernel_size, slope)

    def forward(self, U, V):
        if U.shape[1] == 0 or V.shape[1] == 0:
            raise ValueError("SetBlock needs non-empty candidate and context sets")
        k = U.shape[1]
        u_bar = set_mean(U)
        u_bar_new, v_cross = self.cross(u_bar, V)
        shared = u_bar_new.unsqueeze(1).expand(-1, k, -1, -1, -1)
        U_new = self.conv_u(self.conv_m(torch.cat([U, shared], dim=2)))
        V_new = self.conv_v(v_cross if self.context_from_cross else V)
        return U_new, V_new


def _pool(x):
    b, m = x.shape[:2]
    y = F.max_pool2d(x.reshape(b * m, *x.shape[2:]), 2)
    return y.reshape(b, m, *y.shape[1:])


def _upsample(x):
    b, m = x.shape[:2]
    y = F.interpolate(x.reshape(b * m, *x.shape[2:]), scale_factor=2, mode="nearest")
    return y.reshape(b, m, *y.shape[1:])


class TycheNet(nn.Module):
    """Stochastic in-context segmentation network.

    Candidate entries start as the target concatenated with one noise image
    each; context entries are image/mask pairs.  ``depth`` encoder SetBlocks
    (the last one acting as bottleneck) are followed by ``depth - 1`` decoder
    SetBlocks with skip concatenation on both sets, then a 1x1 head per
    candidate.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        feats = config.level_features
        ks, slope, ctx = config.kernel_size, config.slope, config.context_from_cross

        u_ch, v_ch = 1 + config.noise_channels, 2
        self.encoder = nn.ModuleList()
        for f in feats:
            self.encoder.append(SetBlock(u_ch, v_ch, f, ks, slope, ctx))
            u_ch = v_ch = f

        self.decoder = nn.ModuleList()
        for f in reversed(feats[:-1]):
            self.decoder.append(SetBlock(u_ch + f, v_ch + f, f, ks, slope, ctx))
            u_ch = v_ch = f
        if config.symmetric_decoder:
            self.decoder.append(SetBlock(u_ch, v_ch, u_ch, ks, slope, ctx))

        self.head = nn.Conv2d(u_ch, 1, kernel_size=1)
        self.reset_parameters(config.init_seed)

    def reset_parameters(self, seed: int = 0) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                gain = np.sqrt(2.0 / (1.0 + self.config.slope**2))
                bound = gain * np.sqrt(3.0 / fan_in)
                with torch.no_grad():
                    w = torch.rand(module.weight.shape, generator=gen, dtype=torch.float64)
                    module.weight.copy_((2 * w - 1) * bound)
                    module.bias.zero_()

    def forward_logits(self, target, context_images, context_masks, noise):
        """Return candidate logits of shape ``(B, K, H, W)``.

        target: (B, H, W); context_images/context_masks: (B, S, H, W);
        noise: (B, K, noise_channels, H, W).
        """
        if target.ndim != 3:
            raise ValueError(f"target must be (B, H, W), got {tuple(target.shape)}")
        b, h, w = target.shape
        if context_images.shape != context_masks.shape:
            raise ValueError("context images and masks differ in shape")
        if context_images.ndim != 4 or context_images.shape[0] != b:
            raise ValueError("context must be (B, S, H, W) matching the target batch")
        if context_images.shape[-2:] != (h, w):
            raise ValueError(
                f"context size {tuple(context_images.shape[-2:])} != target size {(h, w)}"
            )
        if context_images.shape[1] < 1:
            raise ValueError("context set is empty")
        if noise.ndim != 5 or noise.shape[0] != b or noise.shape[-2:] != (h, w):
            raise ValueError(f"noise must be (B, K, C, {h}, {w}), got {tuple(noise.shape)}")
        k = noise.shape[1]
        if k < 1:
            raise ValueError("need at least one noise image (K >= 1)")
        if noise.shape[2] != self.config.noise_channels:
            raise ValueError(
                f"noise has {noise.shape[2]} channels, model expects "
                f"{self.config.noise_channels}"
            )
        factor = 2 ** (self.config.depth - 1)
        if h % factor or w % factor:
            raise ValueError(f"input size {h}x{w} not divisible by {factor}")

        U = torch.cat([target[:, None, None].expand(-1, k, 1, -1, -1), noise], dim=2)
        V = torch.stack([context_images, context_masks], dim=2)

        skips = []
        for i, block in enumerate(self.encoder):
            if i > 0:
                U, V = _pool(U), _pool(V)
            U, V = block(U, V)
            skips.append((U, V))

        n_up = self.config.depth - 1
        for i, block in enumerate(self.decoder):
            if i < n_up:
                su, sv = skips[-2 - i]
                U = torch.cat([_upsample(U), su], dim=2)
                V = torch.cat([_upsample(V), sv], dim=2)
            U, V = block(U, V)

        bk = U.shape[:2]
        logits = self.head(U.reshape(bk[0] * bk[1], *U.shape[2:]))
        return logits.reshape(bk[0], bk[1], h, w)

    def forward(self, target, context_images, context_masks, noise):
        return torch.sigmoid(self.forward_logits(target, context_images, context_masks, noise))


def make_noise(k, shape, channels=1, mode="random", seed=0, dtype=torch.float32):
    """Noise images ``(K, channels, H, W)``.

    ``mode`` is ``random`` (i.i.d. per candidate), ``constant`` (one draw
    shared by all candidates) or ``zero``.  Random draws are prefix-nested:
    the first ``k`` images for a seed do not depend on ``k``.
    """
    h, w = shape
    if mode == "zero":
        return torch.zeros(k, channels, h, w, dtype=dtype)
    rng = np.random.default_rng(seed)
    if mode == "constant":
        z = rng.standard_normal((1, channels, h, w))
        z = np.repeat(z, k, axis=0)
    elif mode == "random":
        z = rng.standard_normal((k, channels, h, w))
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return torch.from_numpy(z).to(dtype)


def count_parameters(config: ModelConfig | nn.Module) -> int:
    if isinstance(config, nn.Module):
        model = config
    else:
        model = TycheNet(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
