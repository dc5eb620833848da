"""Shape exaggeration blocks: residual feature-map modulators on the coarse scales.

A block is two plain 3x3 convolutions (stride 1, padding 1, channel-preserving)
each followed by a leaky rectification with slope 0.2. Its output is scaled by
a per-block factor alpha and added back to the input feature map, so alpha = 0
is the exact identity and alpha = 1 the fully trained exaggeration. One block
set modulates photo-coarse features toward caricature shapes (p2c); the mirror
set de-exaggerates (c2p). Training always runs at alpha = 1; alphas are
inference-time controls.
"""

from __future__ import annotations

import copy
import math

import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import arrays_to_state_dict, load_checkpoint, save_checkpoint, state_dict_to_arrays
from .synthesis import (
    CARICATURE,
    MIXED,
    PHOTO,
    SynthesisStack,
    freeze,
    scale_resolution,
    stack_config,
    stack_from_config,
)

P2C = "p2c"
C2P = "c2p"


class ExaggerationBlock(nn.Module):
    def __init__(self, scale_index: int, channels: int):
        super().__init__()
        self.scale_index = scale_index
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, stride=1, padding=1)
        # start from the identity residual: the block contributes nothing until trained
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        g = F.leaky_relu(self.conv1(f), 0.2)
        return F.leaky_relu(self.conv2(g), 0.2)


def modulate(block: ExaggerationBlock, f: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Residual modulation f + alpha * block(f).

    alpha == 0 returns `f` itself (not a sum with a zero term) so the identity
    holds bit-exactly even where f carries negative zeros.
    """
    res = scale_resolution(block.scale_index)
    if f.dim() != 4 or f.shape[1] != block.channels or f.shape[2] != res or f.shape[3] != res:
        raise ValueError(
            f"feature map shape {tuple(f.shape)} does not match block scale {block.scale_index} "
            f"(expected (B, {block.channels}, {res}, {res}))"
        )
    if alpha == 0:
        return f
    return f + alpha * block(f)


class ExaggerationBlockSet(nn.Module):
    """One residual modulator per coarse scale, for one translation direction."""

    def __init__(self, direction: str, channels: list[int]):
        super().__init__()
        if direction not in (P2C, C2P):
            raise ValueError(f"unknown direction {direction!r}")
        self.direction = direction
        self.blocks = nn.ModuleList(ExaggerationBlock(i + 1, c) for i, c in enumerate(channels))

    def __len__(self) -> int:
        return len(self.blocks)

    def apply(self, scale_index: int, f: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
        return modulate(self.blocks[scale_index - 1], f, alpha)


class CariGANModel:
    """A frozen layer-mixed stack plus its exaggeration block set and alpha controls.

    Alphas are carried on the wrapper, not the modules, so `with_alphas` can
    hand out cheap copies that share weights; concurrent requests with
    different alphas never interfere.
    """

    def __init__(self, stack: SynthesisStack, blocks: ExaggerationBlockSet, alphas=None):
        if stack.domain_tag != MIXED or stack.mix is None:
            raise ValueError("CariGANModel requires a layer-mixed stack")
        expected = PHOTO if blocks.direction == P2C else CARICATURE
        if stack.mix["structure_domain"] != expected:
            raise ValueError(
                f"{blocks.direction} blocks require a {expected}-coarse stack, "
                f"got structure_domain={stack.mix['structure_domain']!r}"
            )
        if len(blocks) != stack.mix["p"]:
            raise ValueError(f"block count {len(blocks)} != mix boundary p={stack.mix['p']}")
        self.stack = stack
        self.blocks = blocks
        self.alphas = (1.0,) * len(blocks) if alphas is None else tuple(float(a) for a in alphas)
        if len(self.alphas) != len(blocks):
            raise ValueError(f"expected {len(blocks)} alphas, got {len(self.alphas)}")
        if not all(math.isfinite(a) for a in self.alphas):
            raise ValueError("alphas must be finite")

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def direction(self) -> str:
        return self.blocks.direction

    def with_alphas(self, alphas) -> "CariGANModel":
        """Copy-on-write alpha update; weights are shared with the original."""
        return CariGANModel(self.stack, self.blocks, alphas)

    def forward_caricature(self, code: torch.Tensor, noise: list[torch.Tensor],
                           style_code: torch.Tensor | None = None,
                           alphas=None) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Coarse blocks with interleaved modulation, then the fine blocks.

        Returns the final image and the modulated coarse feature maps (the
        quantities the training losses consume). With all alphas zero the
        output equals the plain mixed stack's bit-for-bit.
        """
        alphas = self.alphas if alphas is None else tuple(float(a) for a in alphas)
        if len(alphas) != self.p:
            raise ValueError(f"expected {self.p} alphas, got {len(alphas)}")
        code = self.stack._check_inputs(code, noise)
        if style_code is not None:
            if style_code.dim() == 2:
                style_code = style_code.unsqueeze(0)
            if style_code.shape[0] == 1 and code.shape[0] > 1:
                style_code = style_code.expand(code.shape[0], -1, -1)
            if style_code.shape != code.shape:
                raise ValueError(f"style code shape {tuple(style_code.shape)} incompatible with {tuple(code.shape)}")
            fine_start = 2 * self.p
            code = torch.cat([code[:, :fine_start], style_code[:, fine_start:]], dim=1)
        x = None
        coarse = []
        for i in range(self.p):
            block = self.stack.blocks[i]
            x = block(x, code[:, 2 * i], code[:, 2 * i + 1], noise[2 * i], noise[2 * i + 1])
            x = self.blocks.apply(i + 1, x, alphas[i])
            coarse.append(x)
        image, _ = self.stack.continue_from(x, self.p, code, noise)
        return image, coarse


def set_alphas(model: CariGANModel, alphas) -> CariGANModel:
    return model.with_alphas(alphas)


def build_carigan(mixed_stack: SynthesisStack, direction: str) -> CariGANModel:
    """Attach fresh (identity-initialized) blocks to a mixed stack."""
    p = mixed_stack.mix["p"]
    channels = list(mixed_stack.cfg.channels[:p])
    return CariGANModel(mixed_stack, ExaggerationBlockSet(direction, channels))


def cycle_reconstruct(stack: SynthesisStack, forward_blocks: ExaggerationBlockSet,
                      inverse_blocks: ExaggerationBlockSet, code: torch.Tensor,
                      noise: list[torch.Tensor], p: int) -> torch.Tensor:
    """Render the cycle-reconstructed image: at every coarse scale the feature
    map passes through the forward then the inverse modulation before feeding
    the next block; the tail of the stack renders the result."""
    code = stack._check_inputs(code, noise)
    x = None
    for i in range(p):
        block = stack.blocks[i]
        x = block(x, code[:, 2 * i], code[:, 2 * i + 1], noise[2 * i], noise[2 * i + 1])
        x = inverse_blocks.apply(i + 1, forward_blocks.apply(i + 1, x))
    image, _ = stack.continue_from(x, p, code, noise)
    return image


# --- persistence ----------------------------------------------------------


def save_carigan(path, model: CariGANModel) -> None:
    cfg = {
        "stack": stack_config(model.stack),
        "direction": model.direction,
        "alphas": list(model.alphas),
        "block_channels": [b.channels for b in model.blocks.blocks],
    }
    arrays = {f"stack.{k}": v for k, v in state_dict_to_arrays(model.stack.state_dict()).items()}
    arrays.update({f"blocks.{k}": v for k, v in state_dict_to_arrays(model.blocks.state_dict()).items()})
    save_checkpoint(path, "carigan", cfg, arrays)


def load_carigan(path) -> CariGANModel:
    meta, arrays = load_checkpoint(path, expect_kind="carigan")
    cfg = meta["config"]
    stack = stack_from_config(cfg["stack"])
    stack.load_state_dict(arrays_to_state_dict(
        {k[len("stack."):]: v for k, v in arrays.items() if k.startswith("stack.")}))
    stack.eval()
    freeze(stack)
    blocks = ExaggerationBlockSet(cfg["direction"], cfg["block_channels"])
    blocks.load_state_dict(arrays_to_state_dict(
        {k[len("blocks."):]: v for k, v in arrays.items() if k.startswith("blocks.")}))
    blocks.eval()
    return CariGANModel(stack, blocks, cfg.get("alphas"))


def clone_blocks(blocks: ExaggerationBlockSet) -> ExaggerationBlockSet:
    return copy.deepcopy(blocks)
