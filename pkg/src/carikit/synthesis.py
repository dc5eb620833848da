"""Style-based synthesis stack.

A stack is a mapping network (Z -> W) plus one synthesis block per scale.
Each block holds two style-modulated 3x3 convolutions (weight demodulation),
each followed by per-pixel noise injection and a leaky rectification; block 1
starts from a learned 4x4 constant, later blocks upsample by 2. The stack
exposes the post-block feature map at every scale so downstream modules can
modulate and supervise them.

Conventions: images live in [-1, 1]; W+ codes are tensors of shape
(n_style_layers, d_w) or batched (B, n_style_layers, d_w); a noise bank is a
list with two single-channel maps per scale, ordered coarse to fine.
"""

from __future__ import annotations

import math
from dataclasses import asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import arrays_to_state_dict, load_checkpoint, save_checkpoint, state_dict_to_arrays
from .config import ModelConfig

STYLES_PER_SCALE = 2

PHOTO = "photo"
CARICATURE = "caricature"
MIXED = "mixed"


def scale_resolution(scale_index: int) -> int:
    """Spatial size at a 1-based scale index: 4, 8, 16, ..."""
    return 4 * 2 ** (scale_index - 1)


class MappingNetwork(nn.Module):
    def __init__(self, d_z: int, d_w: int, n_layers: int):
        super().__init__()
        layers = []
        dims = [d_z] + [d_w] * n_layers
        for i in range(n_layers):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = z * torch.rsqrt(torch.mean(z * z, dim=-1, keepdim=True) + 1e-8)
        return self.net(z)


class ModulatedConv2d(nn.Module):
    """3x3 convolution whose weights are scaled per-sample by an affine style,
    then demodulated to unit output variance."""

    def __init__(self, in_ch: int, out_ch: int, d_w: int, demodulate: bool = True):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.demodulate = demodulate
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, 3, 3) / math.sqrt(in_ch * 9))
        self.style = nn.Linear(d_w, in_ch)
        nn.init.normal_(self.style.weight, std=1.0 / math.sqrt(d_w))
        nn.init.ones_(self.style.bias)

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        b, _, h, width = x.shape
        s = self.style(w)  # (B, in_ch)
        weight = self.weight.unsqueeze(0) * s[:, None, :, None, None]
        if self.demodulate:
            d = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * d[:, :, None, None, None]
        weight = weight.reshape(b * self.out_ch, self.in_ch, 3, 3)
        out = F.conv2d(x.reshape(1, b * self.in_ch, h, width), weight, padding=1, groups=b)
        return out.reshape(b, self.out_ch, h, width)


class NoiseInjection(nn.Module):
    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(1))

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        return x + self.weight * noise


class SynthesisBlock(nn.Module):
    """One scale of the stack: upsample (except scale 1), two styled convs."""

    def __init__(self, scale_index: int, in_ch: int, out_ch: int, d_w: int, demodulate: bool):
        super().__init__()
        self.scale_index = scale_index
        if scale_index == 1:
            self.const = nn.Parameter(torch.randn(1, in_ch, 4, 4))
        self.conv1 = ModulatedConv2d(in_ch, out_ch, d_w, demodulate)
        self.noise1 = NoiseInjection()
        self.bias1 = nn.Parameter(torch.zeros(out_ch))
        self.conv2 = ModulatedConv2d(out_ch, out_ch, d_w, demodulate)
        self.noise2 = NoiseInjection()
        self.bias2 = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w1, w2, n1, n2):
        if self.scale_index == 1:
            x = self.const.expand(w1.shape[0], -1, -1, -1).to(w1.dtype)
        else:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.noise1(self.conv1(x, w1), n1) + self.bias1[:, None, None]
        x = F.leaky_relu(x, 0.2)
        x = self.noise2(self.conv2(x, w2), n2) + self.bias2[:, None, None]
        return F.leaky_relu(x, 0.2)


class SynthesisStack(nn.Module):
    """Mapping network + per-scale synthesis blocks for one image domain."""

    def __init__(self, model_cfg: ModelConfig, domain_tag: str = PHOTO):
        super().__init__()
        if domain_tag not in (PHOTO, CARICATURE, MIXED):
            raise ValueError(f"unknown domain_tag {domain_tag!r}")
        self.cfg = model_cfg
        self.domain_tag = domain_tag
        self.block_sources = [domain_tag] * model_cfg.n_scales
        self.mix = None  # set by layer mixing
        demod = model_cfg.modulation == "demod"
        self.mapping = MappingNetwork(model_cfg.d_z, model_cfg.d_w, model_cfg.mapping_layers)
        ch = model_cfg.channels
        blocks = []
        for i in range(model_cfg.n_scales):
            in_ch = ch[0] if i == 0 else ch[i - 1]
            blocks.append(SynthesisBlock(i + 1, in_ch, ch[i], model_cfg.d_w, demod))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(ch[-1], 3, 1)
        self.register_buffer("mean_w", torch.zeros(model_cfg.d_w))
        self.register_buffer("w_std", torch.ones(()))

    @property
    def n_scales(self) -> int:
        return self.cfg.n_scales

    @property
    def n_style_layers(self) -> int:
        return self.cfg.n_style_layers

    @property
    def resolution(self) -> int:
        return self.cfg.resolution

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.cfg.d_z:
            raise ValueError(f"latent dimension {z.shape[-1]} != d_z {self.cfg.d_z}")
        return self.mapping(z)

    def _check_inputs(self, code: torch.Tensor, noise: list[torch.Tensor]):
        if code.dim() == 2:
            code = code.unsqueeze(0)
        if code.dim() != 3 or code.shape[1] != self.n_style_layers or code.shape[2] != self.cfg.d_w:
            raise ValueError(
                f"code must have shape (B, {self.n_style_layers}, {self.cfg.d_w}), got {tuple(code.shape)}"
            )
        if len(noise) != self.n_style_layers:
            raise ValueError(f"noise bank must have {self.n_style_layers} maps, got {len(noise)}")
        b = code.shape[0]
        for j, n in enumerate(noise):
            res = scale_resolution(j // STYLES_PER_SCALE + 1)
            if n.dim() != 4 or n.shape[1] != 1 or n.shape[2] != res or n.shape[3] != res:
                raise ValueError(f"noise[{j}] must have shape (1|B, 1, {res}, {res}), got {tuple(n.shape)}")
            if n.shape[0] not in (1, b):
                raise ValueError(f"noise[{j}] batch {n.shape[0]} incompatible with code batch {b}")
        return code

    def synthesize(self, code: torch.Tensor, noise: list[torch.Tensor]) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Run the full stack; returns (image in [-1,1], per-scale feature maps, coarse to fine)."""
        code = self._check_inputs(code, noise)
        x = None
        feats = []
        for i, block in enumerate(self.blocks):
            x = block(x, code[:, 2 * i], code[:, 2 * i + 1], noise[2 * i], noise[2 * i + 1])
            feats.append(x)
        return torch.tanh(self.to_rgb(x)), feats

    def continue_from(self, feat: torch.Tensor, scale_index: int, code: torch.Tensor,
                      noise: list[torch.Tensor]) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Resume synthesis after `scale_index` from an externally supplied feature map."""
        code = self._check_inputs(code, noise)
        x = feat
        feats = []
        for i in range(scale_index, self.n_scales):
            block = self.blocks[i]
            x = block(x, code[:, 2 * i], code[:, 2 * i + 1], noise[2 * i], noise[2 * i + 1])
            feats.append(x)
        return torch.tanh(self.to_rgb(x)), feats

    @torch.no_grad()
    def estimate_mean_w(self, n: int = 10_000, seed: int = 0, batch: int = 4096) -> None:
        """Refresh the running W statistics from `n` fresh mapped samples (n >= 10000)."""
        if n < 10_000:
            raise ValueError("mean_w estimate requires at least 10,000 samples")
        gen = torch.Generator().manual_seed(seed)
        total = torch.zeros(self.cfg.d_w, dtype=torch.float64)
        sq = torch.zeros((), dtype=torch.float64)
        done = 0
        while done < n:
            m = min(batch, n - done)
            z = torch.randn(m, self.cfg.d_z, generator=gen)
            w = self.map_latent(z).double()
            total += w.sum(dim=0)
            sq += (w * w).sum()
            done += m
        mean = total / n
        var = sq / (n * self.cfg.d_w) - (mean * mean).mean()
        self.mean_w.copy_(mean.to(self.mean_w.dtype))
        self.w_std.copy_(var.clamp(min=0).sqrt().to(self.w_std.dtype))


def truncate(w: torch.Tensor, mean_w: torch.Tensor, psi: float) -> torch.Tensor:
    """Pull a style vector toward the mean: mean_w + psi * (w - mean_w)."""
    if not 0.0 <= psi <= 1.0:
        raise ValueError(f"psi must be in [0, 1], got {psi}")
    return mean_w + psi * (w - mean_w)


def broadcast_w(w: torch.Tensor, n_layers: int) -> torch.Tensor:
    """Repeat one W vector across every style-input slot."""
    return w.unsqueeze(-2).expand(*w.shape[:-1], n_layers, w.shape[-1]).contiguous()


def noise_shapes(n_scales: int) -> list[tuple[int, int]]:
    return [(scale_resolution(i // STYLES_PER_SCALE + 1),) * 2 for i in range(STYLES_PER_SCALE * n_scales)]


def zero_noise(n_scales: int, batch: int = 1, dtype=torch.float32) -> list[torch.Tensor]:
    return [torch.zeros(batch, 1, h, w, dtype=dtype) for h, w in noise_shapes(n_scales)]


def random_noise(n_scales: int, batch: int = 1, generator: torch.Generator | None = None,
                 dtype=torch.float32) -> list[torch.Tensor]:
    return [torch.randn(batch, 1, h, w, generator=generator, dtype=dtype) for h, w in noise_shapes(n_scales)]


def sample_codes(stack: SynthesisStack, n: int, generator: torch.Generator | None = None,
                 psi: float | None = None) -> torch.Tensor:
    """Sample n W+ codes through the stack's own mapping net (optionally truncated)."""
    z = torch.randn(n, stack.cfg.d_z, generator=generator, dtype=stack.mean_w.dtype)
    w = stack.map_latent(z)
    if psi is not None:
        w = truncate(w, stack.mean_w, psi)
    return broadcast_w(w, stack.n_style_layers)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module


# --- persistence ----------------------------------------------------------


def stack_config(stack: SynthesisStack) -> dict:
    cfg = {"model": asdict(stack.cfg), "domain_tag": stack.domain_tag, "block_sources": stack.block_sources}
    if stack.mix is not None:
        cfg["mix"] = dict(stack.mix)
    return cfg


def save_stack(path, stack: SynthesisStack) -> None:
    save_checkpoint(path, "stack", stack_config(stack), state_dict_to_arrays(stack.state_dict()))


def stack_from_config(cfg: dict) -> SynthesisStack:
    model_cfg = ModelConfig(**{**cfg["model"], "channels": tuple(cfg["model"]["channels"])})
    stack = SynthesisStack(model_cfg, cfg["domain_tag"])
    stack.block_sources = list(cfg.get("block_sources", stack.block_sources))
    stack.mix = cfg.get("mix")
    return stack


def load_stack(path) -> SynthesisStack:
    meta, arrays = load_checkpoint(path, expect_kind="stack")
    stack = stack_from_config(meta["config"])
    stack.load_state_dict(arrays_to_state_dict(arrays))
    stack.eval()
    if stack.domain_tag == MIXED:
        freeze(stack)
    return stack


def weights_fingerprint(module: nn.Module) -> dict[str, bytes]:
    """Exact byte-level snapshot of every parameter and buffer, for frozen-weight checks."""
    return {k: np.ascontiguousarray(v.detach().cpu().numpy()).tobytes() for k, v in module.state_dict().items()}
